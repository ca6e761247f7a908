"""ODE integration for Poisson systems and their reparametrized forms.

Fixed-step classical RK4 and adaptive Dormand-Prince 5(4) steppers over
compiled expression right-hand sides, with cubic Hermite dense output so
trajectories computed on different step grids can be compared at matched
times.  The time map of a reparametrization is accumulated as an extra
state component integrated by the same scheme, keeping one error order
throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import IntegrationError
from .expr import Expr, Point, compile_evaluator, render
from .structure import StructureCandidate, system_rhs

_ARITH_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


@dataclass(frozen=True)
class IntegratorConfig:
    """method "rk4" uses fixed ``step``; "rk45" adapts to abs_tol/rel_tol."""

    method: str = "rk4"
    step: float = 1e-3
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_steps: int = 2_000_000
    max_step: float | None = None   # cap keeps Hermite interpolation error small

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError("method must be 'rk4' or 'rk45'")
        if self.step <= 0 or self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("step and tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class Trajectory:
    """Accepted integration nodes with derivatives for dense output."""

    variables: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    method: str
    step_count: int

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory states must be finite")

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def initial_state(self) -> np.ndarray:
        return self.states[0]

    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: float) -> np.ndarray:
        """Cubic Hermite interpolation between bracketing nodes."""
        ts = self.times
        if t <= ts[0]:
            return self.states[0]
        if t >= ts[-1]:
            return self.states[-1]
        hi = int(np.searchsorted(ts, t))
        lo = hi - 1
        h = ts[hi] - ts[lo]
        s = (t - ts[lo]) / h
        y0, y1 = self.states[lo], self.states[hi]
        f0, f1 = self.derivs[lo], self.derivs[hi]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1

    def point_at_index(self, idx: int) -> Point:
        return Point(tuple(zip(self.variables, self.states[idx])))


def write_csv(traj: Trajectory, path) -> None:
    """Header ``t,x1,...,xn``; one row per accepted step, 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(traj.variables) + "\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")


# ---------------------------------------------------------------------------
# Core steppers over callables f(t, y) -> ndarray

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


def _call(f, t, y):
    try:
        out = np.asarray(f(t, y), dtype=float)
    except _ARITH_ERRORS as err:
        raise IntegrationError(f"right-hand side failed: {err}", t=t, state=y) from err
    if not np.all(np.isfinite(out)):
        raise IntegrationError("right-hand side returned non-finite values", t=t, state=y)
    return out


def _rk4_step(f, t, y, h):
    k1 = _call(f, t, y)
    k2 = _call(f, t + h / 2, y + h / 2 * k1)
    k3 = _call(f, t + h / 2, y + h / 2 * k2)
    k4 = _call(f, t + h, y + h * k3)
    return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_fn(f: Callable[[float, np.ndarray], np.ndarray], y0: np.ndarray,
                 t_end: float, cfg: IntegratorConfig,
                 variables: tuple[str, ...]) -> Trajectory:
    """Integrate dy/dt = f(t, y) from t=0 to t_end > 0."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    y = np.array(y0, dtype=float)
    times = [0.0]
    states = [y.copy()]
    derivs = [_call(f, 0.0, y)]
    steps = 0

    if cfg.method == "rk4":
        h = cfg.step if cfg.max_step is None else min(cfg.step, cfg.max_step)
        t = 0.0
        while t < t_end - 1e-14 * t_end:
            step = min(h, t_end - t)
            if steps >= cfg.max_steps:
                raise IntegrationError("step budget exhausted", t=t, state=y)
            y = _rk4_step(f, t, y, step)
            t = min(t + step, t_end)
            if not np.all(np.isfinite(y)):
                raise IntegrationError("state became non-finite", t=t, state=y)
            times.append(t)
            states.append(y.copy())
            derivs.append(_call(f, t, y))
            steps += 1
    else:
        hmax = cfg.max_step if cfg.max_step is not None else min(0.05, t_end / 20.0)
        h = min(hmax, t_end / 100.0)
        t = 0.0
        k1 = derivs[0]
        while t < t_end - 1e-14 * t_end:
            if steps >= cfg.max_steps:
                raise IntegrationError("step budget exhausted", t=t, state=y)
            h = min(h, t_end - t, hmax)
            if h < 1e-13 * max(1.0, t_end):
                raise IntegrationError("step size underflow", t=t, state=y)
            ks = [k1]
            for stage in range(1, 7):
                ya = y + h * sum(a * k for a, k in zip(_DP_A[stage], ks))
                ks.append(_call(f, t + _DP_C[stage] * h, ya))
            y5 = y + h * sum(b * k for b, k in zip(_DP_B5, ks))
            err = h * sum((b5 - b4) * k for b5, b4, k in zip(_DP_B5, _DP_B4, ks))
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y5))
            norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            steps += 1
            if norm <= 1.0:
                t = t + h
                y = y5
                if not np.all(np.isfinite(y)):
                    raise IntegrationError("state became non-finite", t=t, state=y)
                k1 = ks[6]  # FSAL: last stage is f at the new point
                times.append(t)
                states.append(y.copy())
                derivs.append(k1)
            factor = 0.9 * (norm ** -0.2) if norm > 0 else 5.0
            h *= min(5.0, max(0.2, factor))

    return Trajectory(variables=variables, times=np.array(times),
                      states=np.array(states), derivs=np.array(derivs),
                      method=cfg.method, step_count=steps)


def integrate(rhs: Sequence[Expr], x0: Point, t_end: float,
              cfg: IntegratorConfig) -> Trajectory:
    """Integrate the symbolic system dx/dt = rhs(x) from the point x0."""
    variables = x0.names
    fns = [compile_evaluator(e, variables) for e in rhs]

    def f(t, y):
        return np.array([fn(y) for fn in fns])

    return integrate_fn(f, np.array(x0.values()), t_end, cfg, variables)


def conserved_drift(traj: Trajectory, f: Expr) -> float:
    """max over nodes of |f(state) - f(initial state)|."""
    fn = compile_evaluator(f, traj.variables)
    base = fn(traj.states[0])
    return float(max(abs(fn(row) - base) for row in traj.states))


# ---------------------------------------------------------------------------
# Orbit-equivalence checks


@dataclass
class EquivalenceReport:
    kind: str
    passed: bool
    max_discrepancy: float
    tolerance: float
    tau_end: float
    node_count: int
    eta_min_abs: float | None = None
    casimir_coordinate_drift: float | None = None
    inside_box_fraction: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "pass": self.passed,
            "max_discrepancy": self.max_discrepancy,
            "tolerance": self.tolerance,
            "tau_end": self.tau_end,
        }
        if self.eta_min_abs is not None:
            d["eta_min_abs"] = self.eta_min_abs
        if self.casimir_coordinate_drift is not None:
            d["casimir_coordinate_drift"] = self.casimir_coordinate_drift
        if self.inside_box_fraction is not None:
            d["inside_box_fraction"] = self.inside_box_fraction
        if self.notes:
            d["notes"] = self.notes
        return d


def _guard_eta_sign(eta_fn, times, states, what: str) -> float:
    """Nonvanishing, sign-constant eta along the trajectory; returns min |eta|."""
    sign0 = 0.0
    min_abs = float("inf")
    for t, row in zip(times, states):
        v = eta_fn(row)
        if v == 0.0:
            raise IntegrationError(f"{what} vanished along the trajectory", t=float(t), state=row)
        if sign0 == 0.0:
            sign0 = math.copysign(1.0, v)
        elif math.copysign(1.0, v) != sign0:
            raise IntegrationError(f"{what} changed sign along the trajectory",
                                   t=float(t), state=row)
        min_abs = min(min_abs, abs(v))
    return min_abs


def reparam_equivalence(J: StructureCandidate, H: Expr, eta: Expr, x0: Point,
                        t_end: float, cfg: IntegratorConfig, tol: float) -> EquivalenceReport:
    """Check that the time reparametrization d tau = dt / eta changes the
    parametrization and not the orbit.

    Integrates the augmented original system (dx/dt = J grad H,
    d tau/dt = 1/eta) to obtain matched pairs (tau_m, x_m), then runs
    dx/d tau = eta J grad H from the same start and compares its dense
    output at each tau_m.
    """
    variables = J.variables
    n = J.n
    field_exprs = system_rhs(J, H)
    field_fns = [None if e.is_const(0.0) else compile_evaluator(e, variables)
                 for e in field_exprs]
    eta_fn = compile_evaluator(eta, variables)

    def f_aug(t, y):
        x = y[:n]
        v = eta_fn(x)
        if v == 0.0:
            raise IntegrationError("eta vanished during integration", t=t, state=x)
        out = np.empty(n + 1)
        for i, fn in enumerate(field_fns):
            out[i] = 0.0 if fn is None else fn(x)
        out[n] = 1.0 / v
        return out

    y0 = np.array(list(x0.values()) + [0.0])
    aug = integrate_fn(f_aug, y0, t_end, cfg, variables + ("tau",))
    min_eta = _guard_eta_sign(eta_fn, aug.times, aug.states[:, :n], "eta")

    taus = aug.states[:, n]
    tau_end = float(taus[-1])
    direction = 1.0 if tau_end > 0 else -1.0

    def f_new(t, y):
        out = np.empty(n)
        v = eta_fn(y)
        for i, fn in enumerate(field_fns):
            out[i] = 0.0 if fn is None else v * fn(y)
        return direction * out

    span = abs(tau_end)
    if span == 0.0:
        raise IntegrationError("time map accumulated zero new time", t=t_end)
    new = integrate_fn(f_new, np.array(x0.values()), span, cfg, variables)

    worst = 0.0
    for tau, xrow in zip(taus, aug.states[:, :n]):
        xnew = new.state_at(direction * tau)
        worst = max(worst, float(np.abs(xnew - xrow).max()))
    return EquivalenceReport(
        kind="reparam_equivalence", passed=bool(worst <= tol),
        max_discrepancy=worst, tolerance=tol, tau_end=tau_end,
        node_count=len(taus), eta_min_abs=float(min_eta),
    )


def darboux_equivalence(chart, H: Expr, x0: Point, t_end: float,
                        cfg: IntegratorConfig, tol: float) -> EquivalenceReport:
    """Check the chart dynamically: the original trajectory mapped through
    y(x) must coincide with the reduced canonical system integrated in the
    reparametrized time d tau = eta dt, and the Casimir coordinates
    y_3..y_n must stay constant.
    """
    from .darboux import reduce_hamiltonian
    from .errors import ChartError

    inp = chart.input
    if inp.inverse_map is None:
        raise ChartError("inverse", "dynamic equivalence needs the inverse map "
                                    "to integrate the reduced system")
    J = inp.J
    n = J.n
    variables = J.variables

    vals0 = np.array([x0[v] for v in variables])
    if np.any(vals0 < inp.dom.lo) or np.any(vals0 > inp.dom.hi):
        raise ChartError("domain", f"x0 {x0.as_dict()} lies outside the chart domain box")
    eta_fn = chart.eta_fn()
    if abs(eta_fn(vals0)) == 0.0:
        raise ChartError("eta", "eta vanishes at x0; the time map is degenerate there")

    field_exprs = system_rhs(J, H)
    field_fns = [None if e.is_const(0.0) else compile_evaluator(e, variables)
                 for e in field_exprs]

    def f_aug(t, y):
        x = y[:n]
        out = np.empty(n + 1)
        for i, fn in enumerate(field_fns):
            out[i] = 0.0 if fn is None else fn(x)
        out[n] = eta_fn(x)
        return out

    aug = integrate_fn(f_aug, np.append(vals0, 0.0), t_end, cfg, variables + ("tau",))
    min_eta = _guard_eta_sign(eta_fn, aug.times, aug.states[:, :n], "eta")

    inside = np.logical_and(
        np.all(aug.states[:, :n] >= inp.dom.lo - 1e-12, axis=1),
        np.all(aug.states[:, :n] <= inp.dom.hi + 1e-12, axis=1),
    )
    inside_fraction = float(inside.mean())

    forward = chart.forward_fn()
    mapped = np.array([forward(row) for row in aug.states[:, :n]])
    taus = aug.states[:, n]
    tau_end = float(taus[-1])
    direction = 1.0 if tau_end > 0 else -1.0

    reduced = reduce_hamiltonian(chart, H)
    yvars = reduced.y_variables
    rhs_fns = [None if e.is_const(0.0) else compile_evaluator(e, yvars)
               for e in reduced.rhs]

    def f_red(t, y):
        out = np.empty(n)
        for i, fn in enumerate(rhs_fns):
            out[i] = 0.0 if fn is None else fn(y)
        return direction * out

    span = abs(tau_end)
    if span == 0.0:
        raise IntegrationError("time map accumulated zero new time", t=t_end)
    red = integrate_fn(f_red, mapped[0], span, cfg, yvars)

    worst = 0.0
    for tau, yrow in zip(taus, mapped):
        ynew = red.state_at(direction * tau)
        worst = max(worst, float(np.abs(ynew - yrow).max()))

    casimir_drift = 0.0
    if n > 2:
        drift_mapped = np.abs(mapped[:, 2:] - mapped[0, 2:]).max()
        drift_reduced = np.abs(red.states[:, 2:] - red.states[0, 2:]).max()
        casimir_drift = float(max(drift_mapped, drift_reduced))

    notes = []
    if inside_fraction < 1.0:
        notes.append(
            f"trajectory left the sampled box ({inside_fraction:.0%} of nodes inside); "
            "eta stayed sign-constant so the chart remains valid along the orbit")
    return EquivalenceReport(
        kind="darboux_equivalence",
        passed=bool(worst <= tol and casimir_drift <= tol),
        max_discrepancy=worst, tolerance=tol, tau_end=tau_end,
        node_count=len(taus), eta_min_abs=float(min_eta),
        casimir_coordinate_drift=casimir_drift,
        inside_box_fraction=inside_fraction, notes=notes,
    )
