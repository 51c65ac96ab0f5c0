"""Reduced Hamiltonian system on the curved 3-manifold.

State is (x, Pi, q) with Pi the covariant momentum f dx/dt and q the
conserved vertical momentum.  The Hamiltonian is

    H = Pi^2 / 2f + V,   V = q^2 / 2h + U,

and the fundamental brackets are {x^i, Pi_j} = delta^i_j, {Pi_i, Pi_j} = q F_ij.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .geometry import (
    DomainError,
    MetricSpec,
    _as_vec,
    _center_sum,
    _radial,
    dirac_potential,
    fd_gradient,
    fd_laplacian,
    magnetic_field,
    metric_eval,
)


@dataclass(frozen=True)
class PhaseState:
    x: np.ndarray
    Pi: np.ndarray
    q: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", _as_vec(self.x))
        object.__setattr__(self, "Pi", _as_vec(self.Pi))
        object.__setattr__(self, "q", float(self.q))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.Pi])

    @classmethod
    def from_array(cls, y, q: float) -> "PhaseState":
        return cls(y[:3], y[3:6], q)


# -- effective potentials G = f W ----------------------------------------------


class EffectivePotential:
    """Scalar G(x) entering the effective Hamiltonian Pi^2/2 + G."""

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        return fd_gradient(self.value, x)

    def laplacian(self, x) -> float:
        return fd_laplacian(self.value, x)


class MetricEffectivePotential(EffectivePotential):
    """G = f (U + q^2/2h + E/f - E), assembled from a metric and its potential."""

    def __init__(self, spec: MetricSpec, q: float, energy: float):
        self.spec = spec
        self.q = float(q)
        self.energy = float(energy)

    def value(self, x) -> float:
        s = metric_eval(self.spec, x)
        return s.f * s.U + 0.5 * self.q**2 * s.f / s.h + self.energy * (1 - s.f)

    def gradient(self, x) -> np.ndarray:
        s = metric_eval(self.spec, x)
        q2 = 0.5 * self.q**2
        return (s.U * s.grad_f + s.f * s.grad_U
                + q2 * (s.grad_f / s.h - s.f * s.grad_h / s.h**2)
                - self.energy * s.grad_f)

    def components(self, x) -> float:
        """f (U + q^2/2h + E/f - E) written out term by term."""
        s = metric_eval(self.spec, x)
        w = s.U + 0.5 * self.q**2 / s.h + self.energy / s.f - self.energy
        return s.f * w


class RadialEffectivePotential(EffectivePotential):
    """G = q^2 g^2 / 2r^2 + beta / r + gamma."""

    def __init__(self, q: float, g: float, beta: float, gamma: float):
        self.q, self.g, self.beta, self.gamma = float(q), float(g), float(beta), float(gamma)

    def value(self, x) -> float:
        r, _ = _radial(_as_vec(x))
        return 0.5 * (self.q * self.g) ** 2 / r**2 + self.beta / r + self.gamma

    def gradient(self, x) -> np.ndarray:
        r, n = _radial(_as_vec(x))
        return (-(self.q * self.g) ** 2 / r**3 - self.beta / r**2) * n

    def laplacian(self, x) -> float:
        r, _ = _radial(_as_vec(x))
        return (self.q * self.g) ** 2 / r**4


class TwoCenterEffectivePotential(EffectivePotential):
    """G = q^2 S^2 / 2 + beta S + gamma with S = m1/|x - a| + m2/|x + a|."""

    def __init__(self, m1: float, m2: float, a, q: float, beta: float, gamma: float):
        a = _as_vec(a)
        self.masses = (float(m1), float(m2))
        self.positions = (tuple(a), tuple(-a))
        self.q, self.beta, self.gamma = float(q), float(beta), float(gamma)

    def value(self, x) -> float:
        s, _ = _center_sum(_as_vec(x), self.masses, self.positions)
        return 0.5 * self.q**2 * s * s + self.beta * s + self.gamma

    def gradient(self, x) -> np.ndarray:
        s, ds = _center_sum(_as_vec(x), self.masses, self.positions)
        return (self.q**2 * s + self.beta) * ds

    def laplacian(self, x) -> float:
        # S is harmonic off the centers
        _, ds = _center_sum(_as_vec(x), self.masses, self.positions)
        return self.q**2 * float(ds @ ds)


class CallableEffectivePotential(EffectivePotential):
    def __init__(self, func: Callable[[np.ndarray], float],
                 grad: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self.func = func
        self.grad = grad

    def value(self, x) -> float:
        return float(self.func(_as_vec(x)))

    def gradient(self, x) -> np.ndarray:
        if self.grad is not None:
            return _as_vec(self.grad(_as_vec(x)))
        return fd_gradient(self.value, x)


# -- Hamiltonian and equations of motion ------------------------------------------


def potential_V(spec: MetricSpec, x, q: float) -> tuple[float, np.ndarray]:
    s = metric_eval(spec, x)
    v = 0.5 * q * q / s.h + s.U
    dv = -0.5 * q * q * s.grad_h / s.h**2 + s.grad_U
    return v, dv


def hamiltonian(state: PhaseState, spec: MetricSpec) -> float:
    s = metric_eval(spec, state.x)
    return 0.5 * float(state.Pi @ state.Pi) / s.f + 0.5 * state.q**2 / s.h + s.U


def energy(state: PhaseState, spec: MetricSpec) -> float:
    """Pi^2/2f + q^2/2h + U, written with the radial-case names."""
    s = metric_eval(spec, state.x)
    kinetic = float(state.Pi @ state.Pi) / (2 * s.f)
    return kinetic + state.q**2 / (2 * s.h) + s.U


def hamiltonian_gradient(state: PhaseState, spec: MetricSpec) -> tuple[np.ndarray, np.ndarray]:
    """(dH/dx, dH/dPi)."""
    s = metric_eval(spec, state.x)
    p2 = float(state.Pi @ state.Pi)
    q2 = state.q**2
    dx = -0.5 * p2 * s.grad_f / s.f**2 - 0.5 * q2 * s.grad_h / s.h**2 + s.grad_U
    return dx, state.Pi / s.f


def rhs_arrays(x: np.ndarray, Pi: np.ndarray, q: float, spec: MetricSpec) -> tuple[np.ndarray, np.ndarray]:
    s = metric_eval(spec, x)
    xdot = Pi / s.f
    B = magnetic_field(spec, x).B
    dV = -0.5 * q * q * s.grad_h / s.h**2 + s.grad_U
    # Gamma^k_ij Pi_k xdot^j contracts to Pi^2 grad f / 2 f^2 for g = f delta
    curvature = 0.5 * float(Pi @ Pi) * s.grad_f / s.f**2
    return xdot, q * np.cross(xdot, B) - dV + curvature


def eom_rhs(state: PhaseState, spec: MetricSpec) -> tuple[np.ndarray, np.ndarray]:
    """Hamilton equations: dx^i = Pi_i / f, dPi_i = q F_ij dx^j - d_i V + Gamma^k_ij Pi_k dx^j."""
    return rhs_arrays(state.x, state.Pi, state.q, spec)


def vertical_velocity(state: PhaseState, spec: MetricSpec) -> float:
    """dx^4/dt = q/h - A_k dx^k/dt in the Dirac-string gauge (radial kinds only)."""
    if spec.kind == "multicenter":
        raise ValueError("vertical reconstruction is only provided for radial metrics")
    s = metric_eval(spec, state.x)
    A = dirac_potential(spec, state.x)
    return state.q / s.h - float(A @ (state.Pi / s.f))


# -- observables and brackets -------------------------------------------------------

ObsFunc = Callable[[np.ndarray, np.ndarray], float]


@dataclass
class Observable:
    """A phase-space function of (x, Pi) at fixed q, with an optional analytic gradient."""

    name: str
    func: ObsFunc
    grad: Optional[Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]] = None

    def __call__(self, x, Pi) -> float:
        return float(self.func(_as_vec(x), _as_vec(Pi)))

    def gradients(self, x, Pi, step: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
        x, Pi = _as_vec(x), _as_vec(Pi)
        if self.grad is not None:
            gx, gp = self.grad(x, Pi)
            return _as_vec(gx), _as_vec(gp)
        hx = step * max(1.0, float(np.linalg.norm(x)))
        hp = step * max(1.0, float(np.linalg.norm(Pi)))
        gx = np.empty(3)
        gp = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = hx
            gx[i] = (self.func(x + e, Pi) - self.func(x - e, Pi)) / (2 * hx)
            e[i] = hp
            gp[i] = (self.func(x, Pi + e) - self.func(x, Pi - e)) / (2 * hp)
        return gx, gp


def hamiltonian_observable(spec: MetricSpec, q: float) -> Observable:
    def func(x, Pi):
        return hamiltonian(PhaseState(x, Pi, q), spec)

    def grad(x, Pi):
        return hamiltonian_gradient(PhaseState(x, Pi, q), spec)

    return Observable("H", func, grad)


def _as_observable(obs: Union[Observable, ObsFunc]) -> Observable:
    return obs if isinstance(obs, Observable) else Observable(getattr(obs, "__name__", "obs"), obs)


def poisson_bracket(obs_a, obs_b, state: PhaseState, spec: MetricSpec) -> float:
    """{A, B} = d_k A dB/dPi_k - dA/dPi_k d_k B + q F_kl dA/dPi_k dB/dPi_l."""
    a = _as_observable(obs_a)
    b = _as_observable(obs_b)
    ax, ap = a.gradients(state.x, state.Pi)
    bx, bp = b.gradients(state.x, state.Pi)
    F = magnetic_field(spec, state.x).F
    return float(ax @ bp - ap @ bx + state.q * ap @ F @ bp)


def random_state(rng: np.random.Generator, spec: MetricSpec, q: float,
                 r_range: Sequence[float] = (1.5, 4.0), p_scale: float = 1.0,
                 max_tries: int = 1000) -> PhaseState:
    """Draw a state with x in a spherical shell, retrying until it is in the domain."""
    for _ in range(max_tries):
        v = rng.normal(size=3)
        x = v / np.linalg.norm(v) * rng.uniform(*r_range)
        try:
            metric_eval(spec, x)
            if spec.kind == "multicenter" and spec.singular_distance(x) < 0.5:
                continue
        except DomainError:
            continue
        return PhaseState(x, p_scale * rng.normal(size=3), q)
    raise DomainError("could not draw a state inside the metric domain")
