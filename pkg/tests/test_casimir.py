import numpy as np
import pytest

from poissonkit.casimir import (
    CasimirList,
    casimir_residual,
    is_casimir,
    kernel_basis_at,
    scaling_agreement,
)
from poissonkit.expr import Point, const, exp, var
from poissonkit.structure import SampleDomain, StructureCandidate

X1, X2, X3 = var("x1"), var("x2"), var("x3")


def euler_top():
    return StructureCandidate(3, {(1, 2): X3, (1, 3): -X2, (2, 3): X1})


def canonical(n):
    return StructureCandidate(n, {(i, i + 1): const(1.0) for i in range(1, n, 2)})


def sphere_casimir():
    return (X1 ** const(2.0) + X2 ** const(2.0) + X3 ** const(2.0)) / 2


def box(n, lo=-2.0, hi=2.0, count=200, seed=42):
    return SampleDomain(tuple(f"x{i}" for i in range(1, n + 1)), [(lo, hi)] * n, count, seed)


def pt(*vals):
    return Point(tuple((f"x{i+1}", v) for i, v in enumerate(vals)))


class TestResidual:
    def test_constant_is_trivial_casimir(self):
        r = casimir_residual(euler_top(), const(5.0), pt(1.0, 2.0, 3.0))
        assert np.array_equal(r, np.zeros(3))

    def test_sphere_function_annihilated(self):
        J = euler_top()
        for p in (pt(1.0, 2.0, 3.0), pt(-0.3, 0.7, 1.1)):
            assert np.max(np.abs(casimir_residual(J, sphere_casimir(), p))) <= 1e-14

    def test_coordinate_not_casimir(self):
        r = casimir_residual(euler_top(), X1, pt(1.0, 1.0, 1.0))
        # first column of J at p: (0, -x3, x2)
        assert r == pytest.approx([0.0, -1.0, 1.0])
        assert np.max(np.abs(r)) == 1.0


class TestIsCasimir:
    def test_euler_sphere_passes(self):
        rep = is_casimir(euler_top(), sphere_casimir(), box(3), 1e-10)
        assert rep.passed

    def test_symplectic_has_only_constant_casimirs(self):
        rep = is_casimir(canonical(4), var("x2"), box(4), 1e-10)
        assert not rep.passed

    def test_single_entry_matrix_coordinate_casimir(self):
        J = StructureCandidate(4, {(1, 2): 1 + var("x3") ** const(2.0)})
        rep = is_casimir(J, var("x4"), box(4), 1e-10)
        assert rep.passed
        assert rep.symbolically_zero  # every product folds to literal zero

    def test_functional_closure(self):
        J = euler_top()
        D = sphere_casimir()
        dom = box(3)
        assert is_casimir(J, exp(D), dom, 1e-10).passed
        assert is_casimir(J, D * D + 1, dom, 1e-10).passed


class TestKernel:
    def test_full_rank_empty_kernel(self):
        assert kernel_basis_at(canonical(4), pt(0.0, 0.0, 0.0, 0.0), 1e-9) == []

    def test_euler_kernel_is_radial(self):
        vecs = kernel_basis_at(euler_top(), pt(1.0, 2.0, 3.0), 1e-9)
        assert len(vecs) == 1
        direction = np.array([1.0, 2.0, 3.0]) / np.sqrt(14.0)
        v = vecs[0]
        assert np.allclose(np.abs(v @ direction), 1.0, atol=1e-12)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)

    def test_zero_matrix_standard_basis(self):
        J = StructureCandidate(3, {})
        vecs = kernel_basis_at(J, pt(0.1, 0.2, 0.3), 1e-9)
        assert len(vecs) == 3
        assert np.allclose(np.abs(np.column_stack(vecs)), np.eye(3), atol=1e-12)

    def test_casimir_gradient_lies_in_kernel_span(self):
        J = euler_top()
        D = sphere_casimir()
        from poissonkit.expr import differentiate, evaluate, simplify
        grads = [simplify(differentiate(D, v)) for v in ("x1", "x2", "x3")]
        for row in box(3, 0.3, 1.5, count=40).sample_array():
            p = pt(*row)
            g = np.array([evaluate(e, p) for e in grads])
            basis = kernel_basis_at(J, p, 1e-9)
            proj = sum((g @ b) * b for b in basis)
            assert np.linalg.norm(g - proj) <= 1e-8 * (1 + np.linalg.norm(g))


class TestScalingAgreement:
    def test_agreement_for_casimir_factor(self):
        J = euler_top()
        D0 = sphere_casimir()
        dom = box(3, -1.0, 1.0)
        for candidate, expected in ((D0, True), (X1, False)):
            scaled, plain, agree = scaling_agreement(J, exp(D0), candidate, dom, 1e-10)
            assert agree
            assert plain.passed is expected


class TestCasimirList:
    def test_default_labels(self):
        cl = CasimirList((X3, var("x2")))
        assert cl.labels == ("D3", "D4")
        assert len(cl) == 2

    def test_label_mismatch(self):
        with pytest.raises(ValueError):
            CasimirList((X3,), labels=("a", "b"))
