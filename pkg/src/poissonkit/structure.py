"""Candidate structure matrices and their core checks.

Holds the skew-symmetric matrix of symbolic entries, the Jacobi residual
sweep over a sampled domain, the Poisson bracket, the skew congruence
rank engine (2x2 pivot elimination), and the pushforward transformation
rule under coordinate changes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import EmptySampleSetError, EvalDomainError
from .expr import Expr, Point, compile_evaluator, differentiate, simplify

_ZERO = ex.const(0.0)


def default_variables(n: int) -> tuple[str, ...]:
    return tuple(f"x{i}" for i in range(1, n + 1))


class StructureCandidate:
    """An n x n skew-symmetric matrix of expressions, J_ij for i < j.

    Skew-symmetry holds by construction: only the strict upper triangle is
    stored, J_ji is synthesized as -J_ij and J_ii as 0.  Instances are
    immutable after construction and internally cache compiled entry and
    derivative evaluators.
    """

    def __init__(self, n: int, entries: Mapping[tuple[int, int], Expr],
                 name: str = "", variables: Sequence[str] | None = None):
        if n < 2:
            raise ValueError("dimension must be at least 2")
        self.n = n
        self.name = name
        self.variables = tuple(variables) if variables is not None else default_variables(n)
        if len(self.variables) != n:
            raise ValueError("variable list length must equal the dimension")
        declared = set(self.variables)
        table: dict[tuple[int, int], Expr] = {}
        for (i, j), e in entries.items():
            if not (1 <= i < j <= n):
                raise ValueError(f"entry index ({i},{j}) must satisfy 1 <= i < j <= n")
            bad = e.variables() - declared
            if bad:
                raise ValueError(f"entry ({i},{j}) uses undeclared variable {sorted(bad)[0]!r}")
            e = simplify(e)
            if not e.is_const(0.0):
                table[(i, j)] = e
        self._entries = table
        self._deriv_cache: dict[tuple[int, int, int], Expr] = {}

    @property
    def upper_entries(self) -> dict[tuple[int, int], Expr]:
        return dict(self._entries)

    def entry(self, i: int, j: int) -> Expr:
        """Signed entry J_ij as an expression (J_ii = 0, J_ji = -J_ij)."""
        if i == j:
            return _ZERO
        if i < j:
            return self._entries.get((i, j), _ZERO)
        e = self._entries.get((j, i), _ZERO)
        return _ZERO if e.is_const(0.0) else simplify(ex.Expr("neg", args=(e,)))

    def entry_derivative(self, i: int, j: int, l: int) -> Expr:
        """d J_ij / d x_l, cached; i < j required."""
        key = (i, j, l)
        if key not in self._deriv_cache:
            e = self._entries.get((i, j), _ZERO)
            self._deriv_cache[key] = simplify(differentiate(e, self.variables[l - 1]))
        return self._deriv_cache[key]

    def scale(self, eta: Expr, name: str = "") -> "StructureCandidate":
        """Entrywise product eta * J as a new candidate."""
        scaled = {ij: simplify(eta * e) for ij, e in self._entries.items()}
        return StructureCandidate(self.n, scaled, name=name or f"scaled {self.name}".strip(),
                                  variables=self.variables)

    def _values_of(self, p: Point | Sequence[float]) -> tuple[float, ...]:
        if isinstance(p, Point):
            return tuple(p[v] for v in self.variables)
        return tuple(p)

    def as_matrix(self, p: Point | Sequence[float]) -> np.ndarray:
        """Evaluate to a dense skew-symmetric matrix at the point."""
        vals = self._values_of(p)
        m = np.zeros((self.n, self.n))
        for (i, j), e in self._entries.items():
            v = compile_evaluator(e, self.variables)(vals)
            m[i - 1, j - 1] = v
            m[j - 1, i - 1] = -v
        return m

    def derivative_tensor(self, p: Point | Sequence[float]) -> np.ndarray:
        """d[l-1, i-1, j-1] = (d J_ij / d x_l)(p), fully signed."""
        vals = self._values_of(p)
        d = np.zeros((self.n, self.n, self.n))
        for (i, j) in self._entries:
            for l in range(1, self.n + 1):
                de = self.entry_derivative(i, j, l)
                if de.is_const(0.0):
                    continue
                v = compile_evaluator(de, self.variables)(vals)
                d[l - 1, i - 1, j - 1] = v
                d[l - 1, j - 1, i - 1] = -v
        return d

    def __repr__(self):
        return f"StructureCandidate(n={self.n}, name={self.name!r}, nonzero={len(self._entries)})"


# ---------------------------------------------------------------------------
# Sampled domains


class SampleDomain:
    """Axis-aligned box with deterministic seeded sampling.

    The computational stand-in for the open connected domain the theory
    assumes: verification is "no counterexample found on the kept
    samples", never a proof.  An optional exclusion expression drops
    samples at which it evaluates to zero (punctured domains).
    """

    def __init__(self, variables: Sequence[str],
                 bounds: Mapping[str, tuple[float, float]] | Sequence[tuple[float, float]],
                 sample_count: int = 200, seed: int = 42,
                 exclusion: Expr | None = None):
        self.variables = tuple(variables)
        if isinstance(bounds, Mapping):
            pairs = [bounds[v] for v in self.variables]
        else:
            pairs = list(bounds)
        if len(pairs) != len(self.variables):
            raise ValueError("one (lo, hi) interval required per variable")
        for lo, hi in pairs:
            if not (lo < hi):
                raise ValueError(f"empty interval [{lo}, {hi}]")
        if sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        self.lo = np.array([p[0] for p in pairs], dtype=float)
        self.hi = np.array([p[1] for p in pairs], dtype=float)
        self.sample_count = int(sample_count)
        self.seed = int(seed)
        self.exclusion = exclusion
        self._cache: np.ndarray | None = None

    def sample_array(self) -> np.ndarray:
        """Kept samples as a (m, n) array; raises if none survive."""
        if self._cache is None:
            rng = np.random.default_rng(self.seed)
            raw = rng.uniform(self.lo, self.hi, size=(self.sample_count, len(self.variables)))
            if self.exclusion is not None:
                f = compile_evaluator(self.exclusion, self.variables)
                keep = []
                for row in raw:
                    try:
                        v = f(row)
                    except (ValueError, ZeroDivisionError, OverflowError):
                        continue
                    if v != 0.0:
                        keep.append(row)
                raw = np.array(keep) if keep else np.empty((0, len(self.variables)))
            self._cache = raw
        if self._cache.shape[0] == 0:
            raise EmptySampleSetError(
                "exclusion predicate rejected every sample; verification would be vacuous")
        return self._cache

    def points(self) -> list[Point]:
        return [Point(tuple(zip(self.variables, row))) for row in self.sample_array()]

    def point_at(self, index: int) -> Point:
        row = self.sample_array()[index]
        return Point(tuple(zip(self.variables, row)))

    def with_overrides(self, sample_count=None, seed=None) -> "SampleDomain":
        return SampleDomain(self.variables, list(zip(self.lo, self.hi)),
                            sample_count or self.sample_count,
                            self.seed if seed is None else seed,
                            self.exclusion)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class ResidualReport:
    """Outcome of a residual sweep over samples and index tuples."""

    kind: str
    max_residual: float
    tolerance: float
    passed: bool
    argmax_indices: tuple[int, ...] | None = None
    argmax_sample: int | None = None
    argmax_point: Point | None = None
    sample_count: int = 0
    seed: int | None = None
    per_tuple_max: dict[tuple[int, ...], float] = field(default_factory=dict)
    note: str = ""

    def summary(self) -> str:
        state = "pass" if self.passed else "FAIL"
        loc = ""
        if self.argmax_indices is not None:
            loc = f" at indices {self.argmax_indices}, sample {self.argmax_sample}"
        return (f"{self.kind}: {state} (max residual {self.max_residual:.3e}, "
                f"tol {self.tolerance:.1e}{loc})")

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "pass": self.passed,
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
        }
        if not self.passed and self.argmax_indices is not None:
            d["witness"] = {
                "indices": list(self.argmax_indices),
                "sample_index": self.argmax_sample,
                "point": self.argmax_point.as_dict() if self.argmax_point else None,
                "seed": self.seed,
            }
        if self.note:
            d["note"] = self.note
        return d


# ---------------------------------------------------------------------------
# Jacobi identities


def jacobi_residual(J: StructureCandidate, i: int, j: int, k: int, p: Point) -> float:
    """Left-hand side of the Jacobi identity for the triple (i, j, k):

        sum_l ( J_li d_l J_jk + J_lj d_l J_ki + J_lk d_l J_ij )

    evaluated at p.  Exactly zero when two indices repeat; this is
    computed and then asserted rather than shortcut.
    """
    n = J.n
    for idx in (i, j, k):
        if not 1 <= idx <= n:
            raise ValueError(f"index {idx} out of range 1..{n}")
    total = 0.0
    for l in range(1, n + 1):
        for (a, b, c) in ((i, j, k), (j, k, i), (k, i, j)):
            coeff = _signed_value(J, l, a, p)
            if coeff == 0.0:
                continue
            total += coeff * _signed_derivative(J, b, c, l, p)
    if len({i, j, k}) < 3:
        assert total == 0.0, "residual must vanish identically for repeated indices"
    return total


def _signed_value(J: StructureCandidate, i: int, j: int, p: Point) -> float:
    if i == j:
        return 0.0
    if i < j:
        e = J._entries.get((i, j))
        sign = 1.0
    else:
        e = J._entries.get((j, i))
        sign = -1.0
    if e is None:
        return 0.0
    return sign * compile_evaluator(e, J.variables)(J._values_of(p))


def _signed_derivative(J: StructureCandidate, i: int, j: int, l: int, p: Point) -> float:
    if i == j:
        return 0.0
    sign = 1.0
    if i > j:
        i, j, sign = j, i, -1.0
    de = J.entry_derivative(i, j, l)
    if de.is_const(0.0):
        return 0.0
    return sign * compile_evaluator(de, J.variables)(J._values_of(p))


def _triples(n: int):
    return itertools.combinations(range(1, n + 1), 3)


def verify_jacobi(J: StructureCandidate, dom: SampleDomain, tol: float,
                  relative_to_terms: bool = False) -> ResidualReport:
    """Sweep the Jacobi residual over all i<j<k triples and all kept samples.

    With ``relative_to_terms`` the tolerance is scaled by the magnitude of
    the summands being cancelled at each sample, which keeps the check
    meaningful when entries are large (e.g. matrices scaled by an
    exponential factor); the reported residual is still absolute.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    samples = dom.sample_array()
    n = J.n
    worst = -1.0
    worst_scaled = -1.0
    arg = (None, None)
    per_tuple: dict[tuple[int, ...], float] = {}
    passed = True
    for m, row in enumerate(samples):
        mat = J.as_matrix(row)
        dt = J.derivative_tensor(row)
        for (i, j, k) in _triples(n):
            terms = (mat[:, i - 1] * dt[:, j - 1, k - 1]
                     + mat[:, j - 1] * dt[:, k - 1, i - 1]
                     + mat[:, k - 1] * dt[:, i - 1, j - 1])
            r = float(abs(terms.sum()))
            scale = float(np.abs(terms).sum()) if relative_to_terms else 0.0
            limit = tol * (1.0 + scale) if relative_to_terms else tol
            key = (i, j, k)
            if r > per_tuple.get(key, -1.0):
                per_tuple[key] = r
            scaled = r / (1.0 + scale)
            if scaled > worst_scaled:
                worst_scaled = scaled
                worst = r
                arg = (key, m)
            if r > limit:
                passed = False
    report = ResidualReport(
        kind="jacobi", max_residual=worst, tolerance=tol, passed=passed,
        argmax_indices=arg[0], argmax_sample=arg[1],
        argmax_point=dom.point_at(arg[1]) if arg[1] is not None else None,
        sample_count=samples.shape[0], seed=dom.seed, per_tuple_max=per_tuple,
        note="tolerance scaled by summand magnitude" if relative_to_terms else "",
    )
    return report


# ---------------------------------------------------------------------------
# Poisson bracket and vector fields


def bracket(J: StructureCandidate, f: Expr, g: Expr) -> Expr:
    """Poisson bracket {f, g} = sum_ij d_i f J_ij d_j g, simplified.

    Assembled over the strict upper triangle using skew-symmetry, so the
    canonical cases fold to the bare structure entry.
    """
    grads_f = [simplify(differentiate(f, v)) for v in J.variables]
    grads_g = [simplify(differentiate(g, v)) for v in J.variables]
    total = _ZERO
    for (i, j), e in J.upper_entries.items():
        fi, gj = grads_f[i - 1], grads_g[j - 1]
        fj, gi = grads_f[j - 1], grads_g[i - 1]
        term = simplify(e * (fi * gj - fj * gi))
        total = simplify(total + term)
    return total


def system_rhs(J: StructureCandidate, H: Expr) -> list[Expr]:
    """Right-hand side of dx/dt = J grad H, one expression per component."""
    grads = [simplify(differentiate(H, v)) for v in J.variables]
    out = []
    for i in range(1, J.n + 1):
        acc = _ZERO
        for j in range(1, J.n + 1):
            e = J.entry(i, j)
            if e.is_const(0.0) or grads[j - 1].is_const(0.0):
                continue
            acc = simplify(acc + e * grads[j - 1])
        out.append(acc)
    return out


# ---------------------------------------------------------------------------
# Rank via skew congruence elimination


@dataclass
class EliminationStage:
    pivot_pair: tuple[int, int]       # original (1-based) row/col indices
    pivot_value: float
    updated_block: np.ndarray         # trailing submatrix after the pivot update


@dataclass
class EliminationTrace:
    """Record of the 2x2-pivot congruence reduction of a skew matrix.

    ``transform @ input @ transform.T`` reproduces ``block_form`` (the
    invariant tests assert this), whose leading blocks are the pivots.
    """

    permutation: tuple[int, ...]
    stages: list[EliminationStage]
    rank: int
    transform: np.ndarray
    block_form: np.ndarray

    @property
    def pivot_pairs(self) -> list[tuple[int, int]]:
        return [s.pivot_pair for s in self.stages]


def skew_rank(matrix: np.ndarray, tol: float) -> tuple[int, EliminationTrace]:
    """Rank of a numeric skew-symmetric matrix by congruence elimination.

    Repeatedly permutes the largest remaining off-diagonal entry into the
    leading 2x2 pivot block and zeroes its bordering rows and columns with
    the update

        a~_kl = a_kl + (a_1l a_2k - a_1k a_2l) / a_12

    (indices taken after the permutation).  A pivot counts as zero when
    |pivot| <= tol * (max remaining |entry| + 1); the result is always
    even and at most n.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    B = np.array(matrix, dtype=float)
    n = B.shape[0]
    if B.shape != (n, n):
        raise ValueError("matrix must be square")
    E = np.eye(n)
    perm = list(range(n))
    stages: list[EliminationStage] = []
    start = 0
    rank = 0
    while start + 1 < n:
        sub = B[start:, start:]
        abssub = np.abs(np.triu(sub, k=1))
        pidx = np.unravel_index(np.argmax(abssub), abssub.shape)
        pivot = abssub[pidx]
        if pivot <= tol * (np.abs(sub).max() + 1.0):
            break
        r, c = pidx[0] + start, pidx[1] + start
        # start <= r < c, so the first swap cannot displace column c
        _swap(B, E, perm, start, r)
        _swap(B, E, perm, start + 1, c)
        a12 = B[start, start + 1]
        L = np.eye(n)
        for k in range(start + 2, n):
            L[k, start] = B[start + 1, k] / a12
            L[k, start + 1] = -B[start, k] / a12
        B = L @ B @ L.T
        E = L @ E
        stages.append(EliminationStage(
            pivot_pair=(perm[start] + 1, perm[start + 1] + 1),
            pivot_value=float(a12),
            updated_block=B[start + 2:, start + 2:].copy(),
        ))
        rank += 2
        start += 2
    trace = EliminationTrace(
        permutation=tuple(p + 1 for p in perm),
        stages=stages, rank=rank, transform=E,
        block_form=B,
    )
    return rank, trace


def _swap(B: np.ndarray, E: np.ndarray, perm: list[int], a: int, b: int):
    if a == b:
        return
    B[[a, b], :] = B[[b, a], :]
    B[:, [a, b]] = B[:, [b, a]]
    E[[a, b], :] = E[[b, a], :]
    perm[a], perm[b] = perm[b], perm[a]


def rank_at(J: StructureCandidate, p: Point, tol: float) -> tuple[int, EliminationTrace]:
    """Evaluate J at p and reduce it; returns (rank, elimination trace)."""
    return skew_rank(J.as_matrix(p), tol)


@dataclass
class RankReport:
    rank: int
    constant: bool
    per_sample_ranks: list[int]
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.constant

    def to_dict(self) -> dict:
        return {
            "kind": "constant_rank",
            "pass": self.constant,
            "rank": self.rank,
            "distinct_ranks": sorted(set(self.per_sample_ranks)),
            "note": self.note or ("rank constant on all kept samples; "
                                  "constancy on the full domain is assumed, not certified"),
        }


def verify_constant_rank(J: StructureCandidate, dom: SampleDomain, tol: float) -> tuple[int, RankReport]:
    """rank_at over every kept sample; passes iff all samples agree."""
    ranks = []
    for row in dom.sample_array():
        r, _ = skew_rank(J.as_matrix(row), tol)
        ranks.append(r)
    distinct = sorted(set(ranks))
    constant = len(distinct) == 1
    rep = RankReport(rank=distinct[-1], constant=constant, per_sample_ranks=ranks,
                     note="" if constant else f"rank varies across samples: {distinct}")
    return rep.rank, rep


# ---------------------------------------------------------------------------
# Coordinate changes


def transform_pushforward(J: StructureCandidate, y_map: Sequence[Expr],
                          p: Point) -> np.ndarray:
    """Value of the transformed matrix M J M^T at p, where M is the
    Jacobian of the map y(x).  This is J* at y(p) without needing the
    inverse map."""
    n = J.n
    if len(y_map) != n:
        raise ValueError("y_map must have one component per variable")
    vals = J._values_of(p)
    M = np.zeros((n, n))
    for i, comp in enumerate(y_map):
        for kk, v in enumerate(J.variables):
            d = simplify(differentiate(comp, v))
            if d.is_const(0.0):
                continue
            M[i, kk] = compile_evaluator(d, J.variables)(vals)
    return M @ J.as_matrix(p) @ M.T
