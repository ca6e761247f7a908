import math

import numpy as np
import pytest

from poissonkit.catalog import canonical, euler_top
from poissonkit.darboux import build_chart
from poissonkit.errors import ChartError, IntegrationError
from poissonkit.expr import Point, const, exp, parse, var
from poissonkit.integrate import (
    IntegratorConfig,
    Trajectory,
    conserved_drift,
    darboux_equivalence,
    integrate,
    reparam_equivalence,
    write_csv,
)
from poissonkit.structure import system_rhs

RK4 = IntegratorConfig(method="rk4", step=1e-3)
RK45 = IntegratorConfig(method="rk45", abs_tol=1e-9, rel_tol=1e-9)


def oscillator_rhs():
    # S2 with H = (x1^2 + x2^2)/2: dx1 = x2, dx2 = -x1
    e = canonical(2)
    return system_rhs(e.J, e.hamiltonian)


class TestIntegrate:
    def test_zero_rhs_constant_trajectory(self):
        rhs = [const(0.0), const(0.0)]
        traj = integrate(rhs, Point.of({"x1": 1.0, "x2": -2.0}), 1.0, RK4)
        assert np.allclose(traj.states, traj.states[0])

    def test_harmonic_oscillator_period(self):
        traj = integrate(oscillator_rhs(), Point.of({"x1": 1.0, "x2": 0.0}),
                         2 * math.pi, RK4)
        assert np.abs(traj.final_state() - np.array([1.0, 0.0])).max() <= 1e-8

    def test_adaptive_matches_fixed(self):
        x0 = Point.of({"x1": 1.0, "x2": 0.0})
        a = integrate(oscillator_rhs(), x0, 3.0, RK45)
        b = integrate(oscillator_rhs(), x0, 3.0, RK4)
        assert np.abs(a.final_state() - b.final_state()).max() <= 1e-7

    def test_rk4_order_under_step_halving(self):
        x0 = Point.of({"x1": 1.0, "x2": 0.0})
        t_end = 2.0
        exact = np.array([math.cos(t_end), -math.sin(t_end)])
        errs = []
        for h in (0.02, 0.01):
            traj = integrate(oscillator_rhs(), x0, t_end,
                             IntegratorConfig(method="rk4", step=h))
            errs.append(np.abs(traj.final_state() - exact).max())
        ratio = errs[0] / errs[1]
        assert 12.0 <= ratio <= 20.0

    def test_domain_error_reports_time_and_state(self):
        rhs = [parse("-1/x1", ("x1",))]
        with pytest.raises(IntegrationError) as exc:
            integrate(rhs, Point.of({"x1": 0.5}), 10.0, RK4)
        assert exc.value.t is not None

    def test_step_budget(self):
        cfg = IntegratorConfig(method="rk4", step=1e-3, max_steps=10)
        with pytest.raises(IntegrationError):
            integrate(oscillator_rhs(), Point.of({"x1": 1.0, "x2": 0.0}), 1.0, cfg)

    def test_dense_output_accuracy(self):
        traj = integrate(oscillator_rhs(), Point.of({"x1": 1.0, "x2": 0.0}), 3.0, RK45)
        for t in np.linspace(0.1, 2.9, 17):
            exact = np.array([math.cos(t), -math.sin(t)])
            assert np.abs(traj.state_at(t) - exact).max() <= 1e-7


class TestConservedDrift:
    def test_constant_function(self):
        traj = integrate(oscillator_rhs(), Point.of({"x1": 1.0, "x2": 0.0}), 1.0, RK4)
        assert conserved_drift(traj, const(5.0)) == 0.0

    def test_euler_invariants_small_drift(self):
        e = euler_top()
        rhs = system_rhs(e.J, e.hamiltonian)
        x0 = Point.of({"x1": 1.0, "x2": 1.0, "x3": 1.0})
        traj = integrate(rhs, x0, 10.0, RK4)
        assert conserved_drift(traj, e.hamiltonian) <= 1e-6
        assert conserved_drift(traj, e.casimirs.entries[0]) <= 1e-6

    def test_nonconserved_direction(self):
        traj = integrate(oscillator_rhs(), Point.of({"x1": 1.0, "x2": 0.0}),
                         2 * math.pi, RK4)
        swing = conserved_drift(traj, var("x1"))
        assert swing == pytest.approx(2.0, abs=1e-3)

    def test_drift_scales_fourth_order(self):
        e = euler_top()
        rhs = system_rhs(e.J, e.hamiltonian)
        x0 = Point.of({"x1": 0.8, "x2": 0.5, "x3": 1.2})
        drifts = []
        for h in (4e-3, 2e-3):
            traj = integrate(rhs, x0, 2.0, IntegratorConfig(method="rk4", step=h))
            drifts.append(conserved_drift(traj, e.hamiltonian))
        ratio = drifts[0] / drifts[1]
        assert 10.0 <= ratio <= 24.0


class TestCsv:
    def test_header_and_precision(self, tmp_path):
        traj = integrate(oscillator_rhs(), Point.of({"x1": 1.0, "x2": 0.0}),
                         0.01, IntegratorConfig(method="rk4", step=5e-3))
        path = tmp_path / "traj.csv"
        write_csv(traj, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x1,x2"
        assert len(lines) == 1 + len(traj.times)
        first = [float(v) for v in lines[1].split(",")]
        assert first == [0.0, 1.0, 0.0]


class TestReparamEquivalence:
    def test_identity_factor(self):
        e = canonical(2)
        rep = reparam_equivalence(e.J, e.hamiltonian, const(1.0),
                                  Point.of({"x1": 1.0, "x2": 0.0}), 3.0, RK45, 1e-8)
        assert rep.passed

    def test_constant_speedup(self):
        e = canonical(2)
        rep = reparam_equivalence(e.J, e.hamiltonian, const(2.0),
                                  Point.of({"x1": 1.0, "x2": 0.0}), 3.0, RK45, 1e-8)
        assert rep.passed
        assert rep.tau_end == pytest.approx(1.5, rel=1e-9)

    def test_euler_casimir_exponential(self):
        e = euler_top()
        eta = exp(e.casimirs.entries[0])
        rep = reparam_equivalence(e.J, e.hamiltonian, eta,
                                  Point.of({"x1": 1.0, "x2": 1.0, "x3": 1.0}),
                                  5.0, RK45, 1e-5)
        assert rep.passed

    def test_eta_sign_change_detected(self):
        e = canonical(2)
        with pytest.raises(IntegrationError):
            reparam_equivalence(e.J, e.hamiltonian, var("x1"),
                                Point.of({"x1": 1.0, "x2": 0.0}), 6.0, RK45, 1e-5)


class TestDarbouxEquivalence:
    def test_euler_chart(self):
        e = euler_top()
        chart = build_chart(e.darboux_input, 1e-9)
        rep = darboux_equivalence(chart, e.hamiltonian,
                                  Point.of({"x1": 1.0, "x2": 1.0, "x3": 1.0}),
                                  5.0, RK45, 1e-4)
        assert rep.passed
        assert rep.casimir_coordinate_drift <= 1e-6

    def test_hamiltonian_equal_to_casimir(self):
        e = euler_top()
        chart = build_chart(e.darboux_input, 1e-9)
        rep = darboux_equivalence(chart, e.casimirs.entries[0],
                                  Point.of({"x1": 1.0, "x2": 1.0, "x3": 1.0}),
                                  2.0, RK45, 1e-8)
        assert rep.passed  # both sides constant

    def test_x0_outside_domain_is_chart_error(self):
        e = euler_top()
        chart = build_chart(e.darboux_input, 1e-9)
        with pytest.raises(ChartError):
            darboux_equivalence(chart, e.hamiltonian,
                                Point.of({"x1": 1.0, "x2": 1.0, "x3": 0.01}),
                                1.0, RK45, 1e-4)
