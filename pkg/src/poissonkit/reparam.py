"""Time-reparametrization factors: residuals, algebraic criterion, families.

A nonvanishing smooth eta is a reparametrization factor for J when
eta * J is again a structure matrix.  Because J already satisfies the
Jacobi identities, the condition collapses to a linear system on the
gradient of eta whose coefficients are the quadruple quantities

    Xi_ijkl = J_il J_jk + J_kl J_ij + J_jl J_ki

(totally antisymmetric in all four indices).  This module evaluates the
residuals, decides the three structural regimes (every smooth factor
works / only constants / factors built from Casimirs), and constructs
the Casimir family eta = exp(D) or eta = 1 + D^2.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .casimir import is_casimir
from .errors import InternalConsistencyError, PoissonkitError
from .expr import Expr, Point, compile_evaluator, differentiate, simplify
from .structure import (
    ResidualReport,
    SampleDomain,
    StructureCandidate,
    verify_constant_rank,
    verify_jacobi,
)

VERDICT_UNIVERSAL = "universal"
VERDICT_CONSTANTS_ONLY = "constants-only"
VERDICT_CASIMIR_FAMILY = "casimir-family-available"
VERDICT_UNDETERMINED = "undetermined"


def xi(J: StructureCandidate, i: int, j: int, k: int, l: int, p: Point) -> float:
    """Xi_ijkl(p) = (J_il J_jk + J_kl J_ij + J_jl J_ki)(p).

    Vanishes identically whenever two indices coincide, so repeated
    indices simply return zero through the same formula.
    """
    for idx in (i, j, k, l):
        if not 1 <= idx <= J.n:
            raise ValueError(f"index {idx} out of range 1..{J.n}")
    m = J.as_matrix(p)
    return _xi_from_matrix(m, i - 1, j - 1, k - 1, l - 1)


def _xi_from_matrix(m: np.ndarray, i: int, j: int, k: int, l: int) -> float:
    return float(m[i, l] * m[j, k] + m[k, l] * m[i, j] + m[j, l] * m[k, i])


def max_abs_xi(matrix: np.ndarray) -> tuple[float, tuple[int, int, int, int] | None]:
    """Largest |Xi| over all quadruples i<j<k<l; (0, None) when n < 4."""
    n = matrix.shape[0]
    worst, arg = 0.0, None
    for (i, j, k, l) in itertools.combinations(range(n), 4):
        v = abs(_xi_from_matrix(matrix, i, j, k, l))
        if v > worst or arg is None:
            worst, arg = v, (i + 1, j + 1, k + 1, l + 1)
    return worst, arg


def principal_minor_determinant(matrix: np.ndarray, i: int, j: int, k: int, l: int) -> float:
    idx = np.array([i, j, k, l]) - 1
    return float(np.linalg.det(matrix[np.ix_(idx, idx)]))


@dataclass
class PfaffianReport:
    passed: bool
    max_violation: float
    tolerance: float
    argmax_indices: tuple[int, ...] | None = None
    argmax_sample: int | None = None

    def to_dict(self) -> dict:
        return {"kind": "pfaffian_identity", "pass": self.passed,
                "max_violation": self.max_violation, "tolerance": self.tolerance}


def pfaffian_identity_check(J: StructureCandidate, dom: SampleDomain, tol: float) -> PfaffianReport:
    """Check det(4x4 principal submatrix) == Xi^2 on all quadruples/samples.

    The determinant of a 4x4 skew block is the square of its Pfaffian,
    which is exactly the Xi quantity of its four indices; the comparison
    is relative: |det - Xi^2| <= tol * (1 + |det|).
    """
    if J.n < 4:
        raise ValueError("pfaffian identity needs dimension >= 4")
    worst, arg_i, arg_s = 0.0, None, None
    passed = True
    for m, row in enumerate(dom.sample_array()):
        mat = J.as_matrix(row)
        for (i, j, k, l) in itertools.combinations(range(1, J.n + 1), 4):
            det = principal_minor_determinant(mat, i, j, k, l)
            x = _xi_from_matrix(mat, i - 1, j - 1, k - 1, l - 1)
            violation = abs(det - x * x) / (1.0 + abs(det))
            if violation > worst:
                worst, arg_i, arg_s = violation, (i, j, k, l), m
            if violation > tol:
                passed = False
    return PfaffianReport(passed=passed, max_violation=worst, tolerance=tol,
                          argmax_indices=arg_i, argmax_sample=arg_s)


# ---------------------------------------------------------------------------
# Factor residuals


def _grad_values(eta: Expr, variables, values) -> np.ndarray:
    out = np.zeros(len(variables))
    for idx, v in enumerate(variables):
        d = simplify(differentiate(eta, v))
        if not d.is_const(0.0):
            out[idx] = compile_evaluator(d, variables)(values)
    return out


def factor_residual(J: StructureCandidate, eta: Expr, i: int, j: int, k: int,
                    p: Point) -> float:
    """Residual of the factor condition for the triple (i, j, k):

        sum_l (J_il J_jk + J_kl J_ij + J_jl J_ki) d_l eta.

    Both the full sum over l and the equivalent sum restricted to
    l outside {i, j, k} are computed; they must agree to 1e-12 since the
    excluded terms vanish identically, and the restricted value is
    returned.
    """
    n = J.n
    for idx in (i, j, k):
        if not 1 <= idx <= n:
            raise ValueError(f"index {idx} out of range 1..{n}")
    mat = J.as_matrix(p)
    grad = _grad_values(eta, J.variables, J._values_of(p))
    full = 0.0
    restricted = 0.0
    for l in range(1, n + 1):
        coeff = _xi_from_matrix(mat, i - 1, j - 1, k - 1, l - 1)
        term = coeff * grad[l - 1]
        full += term
        if l not in (i, j, k):
            restricted += term
    scale = 1.0 + abs(restricted)
    if abs(full - restricted) > 1e-12 * scale:
        raise InternalConsistencyError(
            f"full and index-restricted factor residuals disagree: {full} vs {restricted}")
    return restricted


@dataclass
class FactorCheckReport:
    """check_factor outcome: nonvanishing + residual sweep + Jacobi cross-check."""

    eta_text: str
    passed: bool
    nonvanishing: bool
    min_abs_eta: float
    residual: ResidualReport
    jacobi_scaled: ResidualReport
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "kind": "reparam_factor",
            "eta": self.eta_text,
            "pass": self.passed,
            "nonvanishing": self.nonvanishing,
            "min_abs_eta": self.min_abs_eta,
            "residual": self.residual.to_dict(),
            "jacobi_of_scaled_matrix": self.jacobi_scaled.to_dict(),
        }


def check_factor(J: StructureCandidate, eta: Expr, dom: SampleDomain,
                 tol: float) -> FactorCheckReport:
    """Decide whether eta is a reparametrization factor for J on dom.

    Three conditions, all required:
      (a) |eta| > 0 at every kept sample;
      (b) the factor residual vanishes (within tol, scaled by the
          magnitude of the summands) over all triples and samples;
      (c) eta * J passes the Jacobi sweep at the same scaled tolerance.

    (b) and (c) are redundant by the derivation that eliminates the
    Jacobi terms of J; if their verdicts disagree while their residuals
    differ materially, an InternalConsistencyError is raised instead of
    guessing.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    samples = dom.sample_array()
    variables = J.variables
    n = J.n

    eta_f = compile_evaluator(eta, variables)
    min_abs = float("inf")
    nonvanish = True
    for row in samples:
        v = abs(eta_f(row))
        min_abs = min(min_abs, v)
        if v == 0.0:
            nonvanish = False

    grad_exprs = [simplify(differentiate(eta, v)) for v in variables]
    grad_fs = [None if g.is_const(0.0) else compile_evaluator(g, variables)
               for g in grad_exprs]
    triples = list(itertools.combinations(range(1, n + 1), 3))
    worst, worst_scaled, arg = -1.0, -1.0, (None, None)
    res_passed = True
    for m, row in enumerate(samples):
        mat = J.as_matrix(row)
        grad = np.array([0.0 if f is None else f(row) for f in grad_fs])
        for (i, j, k) in triples:
            total = 0.0
            scale = 0.0
            for l in range(n):
                if grad[l] == 0.0:
                    continue
                coeff = _xi_from_matrix(mat, i - 1, j - 1, k - 1, l)
                term = coeff * grad[l]
                total += term
                scale += abs(term)
            r = abs(total)
            scaled = r / (1.0 + scale)
            if scaled > worst_scaled:
                worst_scaled, worst, arg = scaled, r, ((i, j, k), m)
            if r > tol * (1.0 + scale):
                res_passed = False
    residual_rep = ResidualReport(
        kind="factor_residual", max_residual=float(worst), tolerance=tol,
        passed=res_passed, argmax_indices=arg[0], argmax_sample=arg[1],
        argmax_point=dom.point_at(arg[1]) if arg[1] is not None else None,
        sample_count=samples.shape[0], seed=dom.seed,
        note="tolerance scaled by summand magnitude",
    )

    jac_rep = verify_jacobi(J.scale(eta), dom, tol, relative_to_terms=True)

    if residual_rep.passed != jac_rep.passed:
        gap = abs(residual_rep.max_residual - jac_rep.max_residual)
        if gap > 1e-6 * (1.0 + max(residual_rep.max_residual, jac_rep.max_residual)):
            raise InternalConsistencyError(
                "factor residual and Jacobi sweep of the scaled matrix disagree: "
                f"{residual_rep.max_residual} vs {jac_rep.max_residual}")

    return FactorCheckReport(
        eta_text=ex.render(eta),
        passed=bool(nonvanish and residual_rep.passed and jac_rep.passed),
        nonvanishing=nonvanish, min_abs_eta=min_abs,
        residual=residual_rep, jacobi_scaled=jac_rep, tolerance=tol,
    )


# ---------------------------------------------------------------------------
# Casimir family (family 1)


@dataclass(frozen=True)
class ReparamCandidate:
    """A candidate factor together with its provenance note."""

    eta: Expr
    note: str = ""


class CasimirCheckFailed(PoissonkitError):
    pass


def family1_factor(J: StructureCandidate, casimir: Expr, dom: SampleDomain,
                   tol: float, mode: str = "exp") -> ReparamCandidate:
    """Build a nonvanishing factor from a verified Casimir invariant.

    ``mode`` selects eta = exp(D) or eta = 1 + D^2; both are smooth,
    strictly positive functions of a Casimir and hence factors.  The
    Casimir property of D is re-verified on dom first and failure is an
    error, not a silent pass-through.
    """
    if mode not in ("exp", "one-plus-square"):
        raise ValueError("mode must be 'exp' or 'one-plus-square'")
    rep = is_casimir(J, casimir, dom, tol)
    if not rep.passed:
        raise CasimirCheckFailed(
            f"candidate is not a Casimir on the domain (max residual {rep.max_residual:.3e})")
    if mode == "exp":
        eta = ex.exp(casimir)
    else:
        eta = simplify(casimir * casimir + ex.const(1.0))
    return ReparamCandidate(eta=eta, note=f"{mode} of verified Casimir")


# ---------------------------------------------------------------------------
# Coefficient matrix and classification


def triple_index(n: int) -> list[tuple[int, int, int]]:
    return list(itertools.combinations(range(1, n + 1), 3))


def coefficient_matrix_at(J: StructureCandidate, p: Point) -> np.ndarray:
    """The (n choose 3) x n matrix C(p) with C[row(i<j<k), l] = Xi_ijkl(p).

    Any factor's gradient must satisfy C(p) grad eta(p) = 0; columns with
    l in {i, j, k} are automatically zero.
    """
    if J.n < 3:
        raise ValueError("coefficient matrix needs dimension >= 3")
    mat = J.as_matrix(p)
    triples = triple_index(J.n)
    C = np.zeros((len(triples), J.n))
    for row, (i, j, k) in enumerate(triples):
        for l in range(J.n):
            C[row, l] = _xi_from_matrix(mat, i - 1, j - 1, k - 1, l)
    return C


def _numeric_rank(M: np.ndarray, tol: float) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int((sv > tol * (sv.max() + 1.0)).sum())


@dataclass
class FactorClassification:
    """Structural verdict on the space of reparametrization factors."""

    verdict: str
    rank: int
    rank_constant: bool
    max_xi: float
    xi_argmax: tuple[int, ...] | None
    coeff_rank_min: int
    coeff_rank_max: int
    tolerance: float
    sample_count: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": "classification",
            "verdict": self.verdict,
            "rank": self.rank,
            "rank_constant": self.rank_constant,
            "max_abs_xi": self.max_xi,
            "xi_argmax_indices": list(self.xi_argmax) if self.xi_argmax else None,
            "coefficient_rank_range": [self.coeff_rank_min, self.coeff_rank_max],
            "tolerance": self.tolerance,
            "notes": self.notes,
        }


def classify(J: StructureCandidate, dom: SampleDomain, tol: float) -> FactorClassification:
    """Decide which factors J admits, with sampled evidence.

    universal          : every smooth nonvanishing eta works (all Xi
                         vanish; cross-checked against rank <= 2).
    constants-only     : the coefficient system has full rank n at every
                         sample, forcing grad eta = 0.
    casimir-family-...): rank < n, so nonconstant Casimirs exist and the
                         exp/1+D^2 family applies; completeness unknown.
    undetermined       : evidence is marginal or internally inconsistent;
                         tolerance noise is never promoted to a verdict.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    samples = dom.sample_array()
    n = J.n
    rank, rank_rep = verify_constant_rank(J, dom, tol)

    max_xi, xi_arg = 0.0, None
    coeff_ranks = []
    for row in samples:
        mat = J.as_matrix(row)
        v, arg = max_abs_xi(mat)
        if v > max_xi or xi_arg is None:
            max_xi, xi_arg = v, arg
        C = np.zeros((len(triple_index(n)), n)) if n < 3 else coefficient_matrix_at(
            J, Point(tuple(zip(J.variables, row))))
        coeff_ranks.append(_numeric_rank(C, tol))
    cmin, cmax = min(coeff_ranks), max(coeff_ranks)

    notes = []
    xi_zero = max_xi <= tol
    rank_le_2 = rank <= 2
    if not rank_rep.passed:
        verdict = VERDICT_UNDETERMINED
        notes.append("rank is not constant across samples")
    elif xi_zero and rank_le_2:
        verdict = VERDICT_UNIVERSAL
    elif xi_zero != rank_le_2:
        verdict = VERDICT_UNDETERMINED
        notes.append(
            f"Xi evidence (max {max_xi:.3e}) and rank evidence (r={rank}) disagree")
    elif cmin == n:
        verdict = VERDICT_CONSTANTS_ONLY
    elif rank < n:
        verdict = VERDICT_CASIMIR_FAMILY
        notes.append("nonconstant Casimir factors exist; completeness not claimed")
    else:
        verdict = VERDICT_UNDETERMINED
        notes.append(
            "full rank but coefficient system rank-deficient at some sample")

    return FactorClassification(
        verdict=verdict, rank=rank, rank_constant=rank_rep.passed,
        max_xi=float(max_xi), xi_argmax=xi_arg,
        coeff_rank_min=cmin, coeff_rank_max=cmax,
        tolerance=tol, sample_count=samples.shape[0], notes=notes,
    )


# ---------------------------------------------------------------------------
# Seeded random smooth factors (shared by property tests and docs)


def random_smooth_eta(variables: Sequence[str], bounds: Sequence[tuple[float, float]],
                      rng: np.random.Generator) -> Expr:
    """A smooth, strictly positive, nonconstant test factor.

    Low-degree polynomial with coefficients in [-1, 1] plus the
    exponential of a random linear form, offset so the polynomial part
    cannot reach zero anywhere inside the bounding box.
    """
    names = list(variables)
    sup = [max(abs(lo), abs(hi)) for lo, hi in bounds]
    poly = ex.const(0.0)
    offset = 1.0
    for idx, v in enumerate(names):
        c1 = float(rng.uniform(-1, 1))
        poly = poly + ex.const(c1) * ex.var(v)
        offset += abs(c1) * sup[idx]
    for idx in range(len(names)):
        jdx = int(rng.integers(0, len(names)))
        c2 = float(rng.uniform(-1, 1))
        poly = poly + ex.const(c2) * ex.var(names[idx]) * ex.var(names[jdx])
        offset += abs(c2) * sup[idx] * sup[jdx]
    lin = ex.const(0.0)
    for idx, v in enumerate(names):
        a = float(rng.uniform(0.2, 1.0)) * (1.0 if rng.uniform() < 0.5 else -1.0)
        lin = lin + ex.const(a) * ex.var(v)
    return simplify(ex.const(offset) + poly + ex.exp(lin))
