"""Built-in example systems used as fixtures by tests, docs and the CLI.

Each entry carries a structure matrix, a Hamiltonian, its Casimirs, a
recommended sampling domain and the known factor-classification verdict;
``self_test`` re-verifies all stored claims so the catalog can never
drift from what the toolkit actually computes.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from . import expr as ex
from .casimir import CasimirList, is_casimir
from .darboux import DarbouxInput, build_chart, verify_canonical
from .expr import Expr, const, render, var
from .reparam import classify
from .structure import SampleDomain, StructureCandidate, verify_jacobi


@dataclass
class CatalogEntry:
    name: str
    J: StructureCandidate
    hamiltonian: Expr
    casimirs: CasimirList
    dom: SampleDomain
    verdict: str
    darboux_input: DarbouxInput | None = None
    extras: dict = dc_field(default_factory=dict)   # export-only payload

    def self_test(self, tol: float = 1e-9) -> None:
        """Re-verify every stored claim; raises AssertionError on drift."""
        rep = verify_jacobi(self.J, self.dom, max(tol, 1e-10))
        assert rep.passed, f"{self.name}: Jacobi sweep failed ({rep.max_residual:.3e})"
        c = classify(self.J, self.dom, tol)
        assert c.verdict == self.verdict, (
            f"{self.name}: stored verdict {self.verdict!r} but classify says {c.verdict!r}")
        for label, D in zip(self.casimirs.labels, self.casimirs):
            crep = is_casimir(self.J, D, self.dom, max(tol, 1e-10), label=label)
            assert crep.passed, f"{self.name}: stored Casimir {label} fails"
        if self.darboux_input is not None:
            chart = build_chart(self.darboux_input, tol)
            crep = verify_canonical(chart, max(tol, 1e-10))
            assert crep.passed, f"{self.name}: canonical form check fails"

    def to_model_dict(self) -> dict:
        """Serialize to the CLI model-file schema."""
        J, dom = self.J, self.dom
        doc = {
            "name": self.name,
            "dimension": J.n,
            "variables": list(J.variables),
            "matrix": {f"{i},{j}": render(e) for (i, j), e in sorted(J.upper_entries.items())},
            "hamiltonian": render(self.hamiltonian),
            "casimirs": [render(D) for D in self.casimirs],
            "domain": {
                "box": {v: [float(lo), float(hi)]
                        for v, lo, hi in zip(dom.variables, dom.lo, dom.hi)},
                "exclusion": render(dom.exclusion) if dom.exclusion is not None else None,
            },
            "sampling": {"count": dom.sample_count, "seed": dom.seed},
            "tolerance": 1e-9,
        }
        if self.darboux_input is not None:
            di = self.darboux_input
            doc["darboux"] = {
                "d1": render(di.d1),
                "d2": render(di.d2),
                "inverse": ([render(c) for c in di.inverse_map]
                            if di.inverse_map is not None else None),
            }
        doc.update(self.extras)
        return doc


def _coords(n: int) -> list[Expr]:
    return [var(f"x{i}") for i in range(1, n + 1)]


def _half_sum_of_squares(xs) -> Expr:
    total = xs[0] * xs[0]
    for x in xs[1:]:
        total = total + x * x
    return ex.simplify(total / 2)


def canonical(n: int) -> CatalogEntry:
    """The constant block matrix S_n; only constant factors for n >= 4."""
    if n % 2 != 0 or n < 2:
        raise ValueError("canonical structure needs even dimension n >= 2")
    entries = {(i, i + 1): const(1.0) for i in range(1, n, 2)}
    J = StructureCandidate(n, entries, name=f"S{n}")
    xs = _coords(n)
    return CatalogEntry(
        name=f"canonical_{n}",
        J=J,
        hamiltonian=_half_sum_of_squares(xs),
        casimirs=CasimirList((), ()),
        dom=SampleDomain(J.variables, [(-1.0, 1.0)] * n),
        verdict="universal" if n == 2 else "constants-only",
    )


def euler_top() -> CatalogEntry:
    """Rigid-body structure J_12 = x3, J_13 = -x2, J_23 = x1 on the open
    positive octant: the minimal rank-2 system with a closed-form global
    chart (d1 = x1, d2 = x2, quadratic Casimir, explicit inverse)."""
    x1, x2, x3 = _coords(3)
    J = StructureCandidate(3, {(1, 2): x3, (1, 3): -x2, (2, 3): x1}, name="euler_top")
    casimir = _half_sum_of_squares([x1, x2, x3])
    dom = SampleDomain(J.variables, [(0.1, 2.0)] * 3)
    y1, y2, y3 = var("y1"), var("y2"), var("y3")
    inverse = (y1, y2, ex.sqrt(2 * y3 - y1 * y1 - y2 * y2))
    darboux = DarbouxInput(
        J=J, casimirs=CasimirList((casimir,), ("C",)),
        d1=x1, d2=x2, dom=dom, inverse_map=inverse,
    )
    H = ex.simplify((x1 * x1 + 2 * (x2 * x2) + 3 * (x3 * x3)) / 2)
    return CatalogEntry(
        name="euler_top", J=J, hamiltonian=H,
        casimirs=CasimirList((casimir,), ("C",)), dom=dom,
        verdict="universal", darboux_input=darboux,
        extras={
            "reparam": [render(ex.exp(casimir))],
            "simulate": {"x0": [1.0, 1.0, 1.0], "t_end": 10.0,
                         "method": "rk4", "step": 1e-3},
        },
    )


def rank2_single_entry(n: int, f: Expr | None = None) -> CatalogEntry:
    """J_12 = f(x), every other entry zero: rank 2 wherever f is nonzero,
    so every smooth nonvanishing function is a factor."""
    if n < 3:
        raise ValueError("single-entry family needs n >= 3")
    if f is None:
        x3 = var("x3")
        f = 1 + x3 * x3
    J = StructureCandidate(n, {(1, 2): f}, name=f"rank2_single_{n}")
    xs = _coords(n)
    casimirs = CasimirList(tuple(xs[2:]), tuple(f"x{i}" for i in range(3, n + 1)))
    dom = SampleDomain(J.variables, [(-1.0, 1.0)] * n, exclusion=f)
    darboux = None
    if n >= 3:
        yvars = [var(f"y{i}") for i in range(1, n + 1)]
        inverse = tuple([yvars[0], yvars[1]] + yvars[2:])
        darboux = DarbouxInput(J=J, casimirs=casimirs, d1=xs[0], d2=xs[1],
                               dom=dom, inverse_map=inverse)
    return CatalogEntry(
        name=f"rank2_single_entry_{n}", J=J,
        hamiltonian=_half_sum_of_squares(xs[:2]),
        casimirs=casimirs, dom=dom, verdict="universal",
        darboux_input=darboux,
    )


def padded_symplectic(n: int, k: int) -> CatalogEntry:
    """S_n (+) 0_k in dimension n + k: intermediate rank, so factors exist
    (all smooth nonvanishing functions of the k trailing coordinates) but
    not every smooth function works."""
    if n % 2 != 0 or n < 4:
        raise ValueError("padded symplectic needs even n >= 4")
    if k < 1:
        raise ValueError("padding k must be >= 1")
    dim = n + k
    entries = {(i, i + 1): const(1.0) for i in range(1, n, 2)}
    J = StructureCandidate(dim, entries, name=f"S{n}+0{k}")
    xs = _coords(dim)
    casimirs = CasimirList(tuple(xs[n:]), tuple(f"x{i}" for i in range(n + 1, dim + 1)))
    return CatalogEntry(
        name=f"padded_symplectic_{n}_{k}", J=J,
        hamiltonian=_half_sum_of_squares(xs[:n]),
        casimirs=casimirs,
        dom=SampleDomain(J.variables, [(-1.0, 1.0)] * dim),
        verdict="casimir-family-available",
    )


def default_catalog() -> list[CatalogEntry]:
    """The fixture set exercised by the acceptance suite."""
    return [
        canonical(2),
        canonical(4),
        canonical(6),
        euler_top(),
        rank2_single_entry(4),
        rank2_single_entry(5, ex.exp(var("x1"))),
        padded_symplectic(4, 2),
    ]
