"""Adaptive Dormand-Prince 5(4) integration of the reduced equations of motion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .dynamics import Observable, PhaseState, rhs_arrays
from .geometry import R_MIN, DomainError, MetricSpec

# Dormand & Prince (1980) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order minus embedded fourth-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension (Hairer, Norsett & Wanner): y(t + th h) = y + h K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

# PI controller constants (Lund stabilization as in DOPRI5)
_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2
_FAC_MAX = 10.0


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    """Step size fell below the floating point resolution of t."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    t_max: float = 100.0
    max_step: float = math.inf
    sample_interval: float = 0.1

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 0 < v <= 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2], got {v}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 6): x1, x2, x3, Pi1, Pi2, Pi3
    q: float
    status: str = "ok"
    n_steps: int = 0
    n_rejected: int = 0
    observables: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> PhaseState:
        return PhaseState(self.states[i, :3], self.states[i, 3:], self.q)

    def phase_states(self) -> list[PhaseState]:
        return [self.state(i) for i in range(len(self))]

    @property
    def final(self) -> PhaseState:
        return self.state(len(self) - 1)


def _initial_step(fun, t0, y0, f0, rtol, atol, order=5) -> float:
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / (order + 1))
    return min(100 * h0, h1)


def dp54_solve(fun: Callable[[float, np.ndarray], np.ndarray], y0, t_max: float,
               sample_times: np.ndarray, rtol: float, atol: float,
               max_step: float = math.inf,
               stop: Optional[Callable[[np.ndarray], bool]] = None):
    """Integrate y' = fun(t, y) from 0 to t_max, returning dense samples.

    Returns (times, samples, status, n_steps, n_rejected).  ``stop`` is
    checked on every accepted state; a True result ends the run with
    status "singularity".
    """
    y = np.array(y0, dtype=float)
    t = 0.0
    k0 = fun(t, y)
    h = min(max_step, _initial_step(fun, t, y, k0, rtol, atol), t_max)
    err_old = 1e-4
    out_t = [0.0]
    out_y = [y.copy()]
    next_sample = 1
    n_steps = n_rej = 0
    status = "ok"
    K = np.empty((7, y.size))
    rejected_last = False
    while t < t_max:
        if h < 16 * np.finfo(float).eps * max(1.0, abs(t)):
            result = (np.array(out_t), np.array(out_y), "underflow", n_steps, n_rej)
            raise StepSizeUnderflow(f"step size underflow at t={t}", result)
        last = t + h >= t_max
        if last:
            h = t_max - t
        K[0] = k0
        try:
            for s in range(1, 7):
                dy = np.dot(_A[s], K[:s]) * h
                K[s] = fun(t + _C[s] * h, y + dy)
        except DomainError:
            n_rej += 1
            h *= 0.25
            rejected_last = True
            continue
        y_new = y + h * (_B[:6] @ K[:6])
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((h * (_E @ K) / scale) ** 2)))
        if not np.isfinite(err):
            n_rej += 1
            h *= 0.25
            rejected_last = True
            continue
        fac11 = err**_EXPO if err > 0 else 0.0
        if err <= 1.0:
            t_new = t_max if last else t + h
            Q = K.T @ _P
            while next_sample < len(sample_times) and sample_times[next_sample] <= t_new:
                ts = sample_times[next_sample]
                if ts == t_new:
                    ys = y_new.copy()
                else:
                    th = (ts - t) / h
                    ys = y + h * (Q @ np.array([th, th**2, th**3, th**4]))
                out_t.append(ts)
                out_y.append(ys)
                next_sample += 1
            n_steps += 1
            t, y, k0 = t_new, y_new, K[6].copy()
            if stop is not None and stop(y):
                status = "singularity"
                if out_t[-1] != t:
                    out_t.append(t)
                    out_y.append(y.copy())
                break
            fac = fac11 / err_old**_BETA / _SAFETY
            fac = min(1 / _FAC_MIN, max(1 / _FAC_MAX, fac)) if fac > 0 else 1 / _FAC_MAX
            h_new = h / fac
            if rejected_last:
                h_new = min(h_new, h)
            h = min(h_new, max_step)
            err_old = max(err, 1e-4)
            rejected_last = False
        else:
            n_rej += 1
            h = h / min(1 / _FAC_MIN, fac11 / _SAFETY)
            rejected_last = True
    return np.array(out_t), np.array(out_y), status, n_steps, n_rej


def sample_grid(t_max: float, interval: float) -> np.ndarray:
    n = int(math.floor(t_max / interval + 1e-9))
    grid = np.arange(n + 1) * interval
    if t_max - grid[-1] > 1e-12 * t_max:
        grid = np.append(grid, t_max)
    else:
        grid[-1] = t_max
    return grid


def integrate(state0: PhaseState, spec: MetricSpec, cfg: IntegratorConfig) -> Trajectory:
    """Evolve state0 to cfg.t_max, sampling every cfg.sample_interval.

    A run that comes within 10 r_min of a singular center stops early with
    ``status == "singularity"``.
    """
    q = state0.q

    def fun(t, y):
        dx, dp = rhs_arrays(y[:3], y[3:], q, spec)
        return np.concatenate([dx, dp])

    def near_singularity(y):
        return spec.singular_distance(y[:3]) < 10 * R_MIN

    grid = sample_grid(cfg.t_max, cfg.sample_interval)
    try:
        times, ys, status, ns, nr = dp54_solve(
            fun, state0.as_array(), cfg.t_max, grid, cfg.rel_tol, cfg.abs_tol,
            cfg.max_step, near_singularity)
    except StepSizeUnderflow as exc:
        times, ys, status, ns, nr = exc.trajectory
        raise StepSizeUnderflow(str(exc), Trajectory(times, ys, q, status, ns, nr)) from None
    return Trajectory(times, ys, q, status, ns, nr)


# -- drift monitoring ------------------------------------------------------------------


@dataclass(frozen=True)
class Drift:
    initial: float
    max_abs: float
    max_rel: float


@dataclass
class DriftReport:
    entries: dict

    def __getitem__(self, name: str) -> Drift:
        return self.entries[name]

    def to_dict(self) -> dict:
        return {k: {"initial": d.initial, "max_abs_deviation": d.max_abs,
                    "max_rel_deviation": d.max_rel} for k, d in self.entries.items()}


StateFunc = Callable[[PhaseState], float]


def drift_report(traj: Trajectory, observables: Mapping[str, Union[StateFunc, Observable]]) -> DriftReport:
    """Evaluate each observable on every sample and record its deviation from t = 0."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    states = traj.phase_states()
    entries = {}
    for name, obs in observables.items():
        if isinstance(obs, Observable):
            series = np.array([obs(s.x, s.Pi) for s in states])
        else:
            series = np.array([float(obs(s)) for s in states])
        traj.observables[name] = series
        v0 = float(series[0])
        dev = float(np.max(np.abs(series - v0)))
        rel = dev / abs(v0) if v0 != 0 else (0.0 if dev == 0 else math.inf)
        entries[name] = Drift(v0, dev, rel)
    return DriftReport(entries)
