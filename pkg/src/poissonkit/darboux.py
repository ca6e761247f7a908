"""Constructive global canonical reduction for rank-two structures.

Given a rank-2 structure matrix on a domain with a complete set of n-2
verified Casimir invariants and two user-chosen functions d1, d2, the map

    y = (d1(x), d2(x), D3(x), ..., Dn(x))

has Jacobian M, transforms J into J* = M J M^T whose only nonzero block
is the leading 2x2 with J*_12 = {d1, d2}, and the time rescaling
d tau = {d1, d2} dt makes the structure canonical: J*/eta = S2 (+) 0.

One-to-one-ness of the map cannot be certified numerically; the chart
records which hypotheses were checked on samples and which remain
assumed.  When an inverse map is supplied, two-sided consistency is
checked on samples and the transformed data are re-expressed in the new
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .casimir import CasimirList, is_casimir
from .errors import ChartError
from .expr import Expr, Point, compile_evaluator, differentiate, render, simplify, substitute
from .structure import SampleDomain, StructureCandidate, bracket, verify_constant_rank


def y_variables(n: int) -> tuple[str, ...]:
    return tuple(f"y{i}" for i in range(1, n + 1))


@dataclass
class DarbouxInput:
    """Everything Theorem-style rank-2 reduction needs from the user."""

    J: StructureCandidate
    casimirs: CasimirList
    d1: Expr
    d2: Expr
    dom: SampleDomain
    inverse_map: tuple[Expr, ...] | None = None   # x_i(y), over y1..yn

    def __post_init__(self):
        if len(self.casimirs) != self.J.n - 2:
            raise ChartError(
                "casimir-count",
                f"need n-2 = {self.J.n - 2} Casimirs, got {len(self.casimirs)}")
        if self.inverse_map is not None and len(self.inverse_map) != self.J.n:
            raise ChartError("inverse", "inverse map needs one component per variable")


@dataclass
class ChartDiagnostics:
    det_min: float
    det_max: float
    eta_min: float
    eta_max: float
    max_off_block: float
    inverse_checked: bool
    max_inverse_error: float | None
    assumed: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "det_M_range": [self.det_min, self.det_max],
            "eta_range": [self.eta_min, self.eta_max],
            "max_entry_outside_leading_block": self.max_off_block,
            "inverse_checked": self.inverse_checked,
            "max_inverse_roundtrip_error": self.max_inverse_error,
            "hypotheses_assumed_not_checked": list(self.assumed),
        }


@dataclass
class DarbouxChart:
    """Transformation data of the rank-2 reduction, verified on samples."""

    input: DarbouxInput
    forward_map: tuple[Expr, ...]          # (d1, d2, D3..Dn), over x
    jacobian: tuple[tuple[Expr, ...], ...]  # M[i][k] = d y_i / d x_k
    jstar: StructureCandidate              # entries as functions of x
    eta: Expr                              # {d1, d2}, over x
    diagnostics: ChartDiagnostics
    jstar_in_y: StructureCandidate | None = None
    eta_in_y: Expr | None = None

    @property
    def n(self) -> int:
        return self.input.J.n

    @property
    def x_variables(self) -> tuple[str, ...]:
        return self.input.J.variables

    def forward_fn(self) -> Callable[[Sequence[float]], np.ndarray]:
        fns = [compile_evaluator(c, self.x_variables) for c in self.forward_map]
        return lambda vals: np.array([f(vals) for f in fns])

    def eta_fn(self) -> Callable[[Sequence[float]], float]:
        return compile_evaluator(self.eta, self.x_variables)

    def to_dict(self) -> dict:
        d = {
            "forward_map": [render(c) for c in self.forward_map],
            "eta": render(self.eta),
            "jstar_leading_block": render(self.jstar.entry(1, 2)),
            "diagnostics": self.diagnostics.to_dict(),
        }
        if self.eta_in_y is not None:
            d["eta_in_new_coordinates"] = render(self.eta_in_y)
        return d


def build_chart(inp: DarbouxInput, tol: float) -> DarbouxChart:
    """Construct and sample-verify the rank-2 reduction chart.

    Errors name the violated hypothesis: constant rank 2, Casimir checks,
    |det M| > tol, |eta| > tol, the off-block entries of J*, and (when an
    inverse is supplied) round-trip consistency.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    J, dom = inp.J, inp.dom
    n = J.n

    rank, rank_rep = verify_constant_rank(J, dom, tol)
    if not rank_rep.passed or rank != 2:
        raise ChartError("rank", f"structure must have constant rank 2 on samples, got {rank}"
                                 + ("" if rank_rep.passed else " (non-constant)"))

    for label, D in zip(inp.casimirs.labels, inp.casimirs):
        rep = is_casimir(J, D, dom, tol, label=label)
        if not rep.passed:
            raise ChartError("casimir", f"{label} is not a Casimir on the domain "
                                        f"(max residual {rep.max_residual:.3e})")

    declared = set(J.variables)
    for name, e in (("d1", inp.d1), ("d2", inp.d2)):
        bad = e.variables() - declared
        if bad:
            raise ChartError("coordinates", f"{name} uses undeclared variable {sorted(bad)[0]!r}")

    forward = (inp.d1, inp.d2) + tuple(inp.casimirs)
    jac = tuple(
        tuple(simplify(differentiate(comp, v)) for v in J.variables)
        for comp in forward
    )

    jstar_entries = {}
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            e = bracket(J, forward[a - 1], forward[b - 1])
            if not e.is_const(0.0):
                jstar_entries[(a, b)] = e
    jstar = StructureCandidate(n, jstar_entries, name="transformed", variables=J.variables)
    eta = jstar.entry(1, 2)

    samples = dom.sample_array()
    jac_fns = [[None if e.is_const(0.0) else compile_evaluator(e, J.variables) for e in row]
               for row in jac]
    eta_fn = None if eta.is_const(0.0) else compile_evaluator(eta, J.variables)

    det_min, det_max = float("inf"), float("-inf")
    eta_min, eta_max = float("inf"), float("-inf")
    max_off = 0.0
    for m, row in enumerate(samples):
        M = np.zeros((n, n))
        for i in range(n):
            for k in range(n):
                f = jac_fns[i][k]
                if f is not None:
                    M[i, k] = f(row)
        det = float(np.linalg.det(M))
        det_min, det_max = min(det_min, det), max(det_max, det)
        if abs(det) <= tol:
            raise ChartError("detM", f"|det M| = {abs(det):.3e} <= tol at sample {m} "
                                     f"({dom.point_at(m).as_dict()})")
        ev = 0.0 if eta_fn is None else float(eta_fn(row))
        eta_min, eta_max = min(eta_min, ev), max(eta_max, ev)
        if abs(ev) <= tol:
            raise ChartError("eta", f"|eta| = {abs(ev):.3e} <= tol at sample {m} "
                                    f"({dom.point_at(m).as_dict()})")
        # numeric congruence cross-check and off-block structure
        Jp = J.as_matrix(row)
        numeric = M @ Jp @ M.T
        symbolic = jstar.as_matrix(row)
        scale = 1.0 + np.abs(numeric).max()
        if np.abs(numeric - symbolic).max() > 1e-9 * scale:
            raise ChartError("congruence",
                             "symbolic bracket entries disagree with M J M^T at a sample")
        off = np.abs(symbolic).copy()
        off[:2, :2] = 0.0
        worst = float(off.max())
        max_off = max(max_off, worst)
        if worst > tol:
            raise ChartError("block-shape",
                             f"J* has entry {worst:.3e} outside the leading block at sample {m}")

    inverse_checked = False
    max_inv_err: float | None = None
    jstar_in_y = None
    eta_in_y = None
    if inp.inverse_map is not None:
        yvars = y_variables(n)
        fwd_fns = [compile_evaluator(c, J.variables) for c in forward]
        inv_fns = [compile_evaluator(c, yvars) for c in inp.inverse_map]
        max_inv_err = 0.0
        for m, row in enumerate(samples):
            yvals = [f(row) for f in fwd_fns]
            back = np.array([g(yvals) for g in inv_fns])
            err = float(np.abs(back - row).max())
            max_inv_err = max(max_inv_err, err)
            if err > 1e-8 * (1.0 + float(np.abs(row).max())):
                raise ChartError("inverse",
                                 f"x(y(x)) differs from x by {err:.3e} at sample {m}")
        inverse_checked = True
        x_to_y = dict(zip(J.variables, inp.inverse_map))
        eta_in_y = simplify(substitute(eta, x_to_y))
        jstar_in_y = StructureCandidate(
            n,
            {ij: simplify(substitute(e, x_to_y)) for ij, e in jstar.upper_entries.items()},
            name="transformed (new coordinates)", variables=yvars)

    assumed = ["map is one-to-one on the full domain (checked only at samples)"]
    if not inverse_checked:
        assumed.append("inverse map exists (none supplied)")
    assumed.append("rank constancy and Casimir completeness beyond the sampled points")

    diagnostics = ChartDiagnostics(
        det_min=det_min, det_max=det_max, eta_min=eta_min, eta_max=eta_max,
        max_off_block=max_off, inverse_checked=inverse_checked,
        max_inverse_error=max_inv_err, assumed=tuple(assumed),
    )
    return DarbouxChart(input=inp, forward_map=forward, jacobian=jac,
                        jstar=jstar, eta=eta, diagnostics=diagnostics,
                        jstar_in_y=jstar_in_y, eta_in_y=eta_in_y)


@dataclass
class CanonicalReport:
    passed: bool
    max_deviation: float
    tolerance: float
    argmax_entry: tuple[int, int] | None = None
    argmax_sample: int | None = None

    def to_dict(self) -> dict:
        return {"kind": "canonical_form", "pass": self.passed,
                "max_deviation": self.max_deviation, "tolerance": self.tolerance}


def verify_canonical(chart: DarbouxChart, tol: float) -> CanonicalReport:
    """Check J*(p)/eta(p) == S2 (+) 0 entrywise at every kept sample."""
    n = chart.n
    target = np.zeros((n, n))
    target[0, 1], target[1, 0] = 1.0, -1.0
    eta_fn = chart.eta_fn()
    worst, arg_e, arg_s = 0.0, None, None
    for m, row in enumerate(chart.input.dom.sample_array()):
        dev = np.abs(chart.jstar.as_matrix(row) / eta_fn(row) - target)
        idx = np.unravel_index(np.argmax(dev), dev.shape)
        if dev[idx] > worst:
            worst, arg_e, arg_s = float(dev[idx]), (idx[0] + 1, idx[1] + 1), m
    return CanonicalReport(passed=bool(worst <= tol), max_deviation=worst,
                           tolerance=tol, argmax_entry=arg_e, argmax_sample=arg_s)


@dataclass
class ReducedSystem:
    """Canonical one-degree-of-freedom form of the reduced dynamics.

    Symbolic mode carries H*(y) and the right-hand side expressions
    (S2 (+) 0) grad H*; numeric mode carries only an evaluator that maps a
    point x to the reduced right-hand side at y(x).
    """

    mode: str
    y_variables: tuple[str, ...]
    hstar: Expr | None = None
    rhs: tuple[Expr, ...] | None = None
    rhs_at_x: Callable[[Sequence[float]], np.ndarray] | None = None

    def to_dict(self) -> dict:
        d = {"mode": self.mode}
        if self.hstar is not None:
            d["hstar"] = render(self.hstar)
            d["rhs"] = [render(e) for e in self.rhs]
        return d


def reduce_hamiltonian(chart: DarbouxChart, H: Expr) -> ReducedSystem:
    """Reduce dx/dt = J grad H to canonical equations in chart coordinates.

    With an inverse map: H*(y) = H(x(y)) and

        dy1/dtau = dH*/dy2,  dy2/dtau = -dH*/dy1,  dyj/dtau = 0 (j >= 3),

    i.e. the right-hand side is (S2 (+) 0) grad H*, matching J*/eta.
    Without an inverse, a numeric evaluator computes M J grad H / eta at
    given x, which is the same vector expressed along the forward map.
    """
    n = chart.n
    if chart.input.inverse_map is not None:
        yvars = y_variables(n)
        x_to_y = dict(zip(chart.x_variables, chart.input.inverse_map))
        hstar = simplify(substitute(H, x_to_y))
        d1 = simplify(differentiate(hstar, yvars[0]))
        d2 = simplify(differentiate(hstar, yvars[1]))
        rhs = (d2, simplify(-d1)) + tuple(ex.const(0.0) for _ in range(n - 2))
        return ReducedSystem(mode="symbolic", y_variables=yvars, hstar=hstar, rhs=rhs)

    from .structure import system_rhs
    field_exprs = system_rhs(chart.input.J, H)
    xvars = chart.x_variables
    field_fns = [None if e.is_const(0.0) else compile_evaluator(e, xvars) for e in field_exprs]
    jac_fns = [[None if e.is_const(0.0) else compile_evaluator(e, xvars) for e in row]
               for row in chart.jacobian]
    eta_fn = chart.eta_fn()

    def rhs_at_x(vals: Sequence[float]) -> np.ndarray:
        v = np.array([0.0 if f is None else f(vals) for f in field_fns])
        M = np.array([[0.0 if f is None else f(vals) for f in row] for row in jac_fns])
        return (M @ v) / eta_fn(vals)

    return ReducedSystem(mode="numeric", y_variables=y_variables(n), rhs_at_x=rhs_at_x)


def suggest_coordinate_pairs(J: StructureCandidate, dom: SampleDomain,
                             top: int = 5) -> list[tuple[tuple[int, int], float]]:
    """Coordinate pairs (x_i, x_j) ranked by how far |{x_i, x_j}| stays
    from zero on the samples.  A helper for choosing d1, d2; the choice is
    never made silently."""
    samples = dom.sample_array()
    scored = []
    for (i, j), e in J.upper_entries.items():
        f = compile_evaluator(e, J.variables)
        m = min(abs(f(row)) for row in samples)
        scored.append(((i, j), float(m)))
    scored.sort(key=lambda t: -t[1])
    return scored[:top]
