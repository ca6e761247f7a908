"""Casimir invariant checks and pointwise kernel diagnostics.

A Casimir invariant D satisfies J grad D = 0 everywhere; this module
verifies supplied candidates on sampled domains and exposes the numeric
null space of J at a point, reusing the skew congruence elimination so
that one tolerance convention governs both rank and kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, Point, compile_evaluator, differentiate, simplify
from .structure import SampleDomain, StructureCandidate, skew_rank


@dataclass(frozen=True)
class CasimirList:
    """Candidate Casimir invariants with display labels."""

    entries: tuple[Expr, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels",
                               tuple(f"D{i+3}" for i in range(len(self.entries))))
        if len(self.labels) != len(self.entries):
            raise ValueError("one label per Casimir entry")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def _gradient(D: Expr, variables) -> list[Expr]:
    return [simplify(differentiate(D, v)) for v in variables]


def casimir_residual(J: StructureCandidate, D: Expr, p: Point) -> np.ndarray:
    """The vector J(p) . grad D(p); identically zero for a true Casimir."""
    grad = _gradient(D, J.variables)
    vals = [0.0 if g.is_const(0.0) else compile_evaluator(g, J.variables)(J._values_of(p))
            for g in grad]
    return J.as_matrix(p) @ np.array(vals)


@dataclass
class CasimirReport:
    label: str
    passed: bool
    max_residual: float
    tolerance: float
    symbolically_zero: bool
    argmax_sample: int | None = None
    argmax_component: int | None = None
    sample_count: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": "casimir",
            "label": self.label,
            "pass": self.passed,
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
            "symbolically_zero": self.symbolically_zero,
        }


def is_casimir(J: StructureCandidate, D: Expr, dom: SampleDomain, tol: float,
               label: str = "D") -> CasimirReport:
    """Pass iff max_p max_i |(J grad D)_i| <= tol over the kept samples.

    Symbolic expansion is attempted first: when every component of
    J grad D folds to the literal zero constant the report says so
    (exactness came for free), otherwise the verdict is purely sampled.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    grad = _gradient(D, J.variables)
    components = []
    for i in range(1, J.n + 1):
        acc = simplify(sum((J.entry(i, j) * grad[j - 1]
                            for j in range(1, J.n + 1)
                            if not J.entry(i, j).is_const(0.0)
                            and not grad[j - 1].is_const(0.0)),
                           Expr("const", value=0.0)))
        components.append(acc)
    symbolic = all(c.is_const(0.0) for c in components)
    samples = dom.sample_array()
    worst = 0.0
    arg_s = arg_c = None
    compiled = [None if c.is_const(0.0) else compile_evaluator(c, J.variables)
                for c in components]
    for m, row in enumerate(samples):
        for i, f in enumerate(compiled):
            if f is None:
                continue
            r = abs(f(row))
            if r > worst:
                worst, arg_s, arg_c = r, m, i + 1
    return CasimirReport(
        label=label, passed=bool(worst <= tol), max_residual=float(worst),
        tolerance=tol, symbolically_zero=symbolic, argmax_sample=arg_s,
        argmax_component=arg_c, sample_count=samples.shape[0],
    )


def kernel_basis_at(J: StructureCandidate, p: Point, tol: float) -> list[np.ndarray]:
    """Orthonormal basis of the numeric null space of J(p).

    Derived from the congruence E J(p) E^T = B of the rank engine: the
    rows of E beyond the pivot block span the kernel.  Dimension equals
    n - rank_at(J, p).
    """
    A = J.as_matrix(p)
    rank, trace = skew_rank(A, tol)
    rows = trace.transform[rank:, :]
    if rows.shape[0] == 0:
        return []
    q, _ = np.linalg.qr(rows.T)
    return [q[:, i] for i in range(rows.shape[0])]


def scaling_agreement(J: StructureCandidate, eta: Expr, D: Expr,
                      dom: SampleDomain, tol: float) -> tuple[CasimirReport, CasimirReport, bool]:
    """Cross-check that D is a Casimir of eta*J exactly when it is one of J.

    This is the sampled instance of the equivalence for nonvanishing
    factors; callers supply an eta known to be nonvanishing on dom.
    """
    plain = is_casimir(J, D, dom, tol)
    scaled = is_casimir(J.scale(eta), D, dom, tol * _eta_scale(eta, dom))
    return scaled, plain, scaled.passed == plain.passed


def _eta_scale(eta: Expr, dom: SampleDomain) -> float:
    f = compile_evaluator(eta, dom.variables)
    vals = [abs(f(row)) for row in dom.sample_array()]
    return max(1.0, max(vals))
