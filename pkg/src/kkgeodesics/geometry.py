"""Conformally flat 3-metrics g_ij = f(x) delta_ij with vertical factor h, gauge field and potential.

Every preset evaluates f, h, U and their gradients in closed form.  The
``custom`` kind takes user callables and differentiates them numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

R_MIN = 1e-9

RADIAL_KINDS = ("taub-nut", "lee-lee", "winding-string", "extended-taub-nut", "flat-kepler")
KINDS = RADIAL_KINDS + ("multicenter", "custom")


class DomainError(ValueError):
    """Evaluation point outside the domain of the metric."""


class GaugeStringError(DomainError):
    """Point lies on a Dirac string of the gauge potential."""


def _as_vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(3)


def _radial(x: np.ndarray, r_min: float = R_MIN) -> tuple[float, np.ndarray]:
    r = float(np.sqrt(x @ x))
    if r <= r_min:
        raise DomainError(f"point {x} lies within r_min={r_min:g} of the origin")
    return r, x / r


def fd_gradient(func: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with step ``step * max(1, |x|)``."""
    x = _as_vec(x)
    h = step * max(1.0, float(np.sqrt(x @ x)))
    out = np.empty(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        out[i] = (func(x + e) - func(x - e)) / (2.0 * h)
    return out


def fd_laplacian(func: Callable[[np.ndarray], float], x, step: float = 1e-3) -> float:
    """Fourth-order five-point Laplacian, one stencil per axis."""
    x = _as_vec(x)
    h = step * max(1.0, float(np.sqrt(x @ x)))
    f0 = func(x)
    total = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        total += (-func(x + 2 * e) + 16 * func(x + e) - 30 * f0
                  + 16 * func(x - e) - func(x - 2 * e)) / (12.0 * h * h)
    return total


# -- external potentials ------------------------------------------------------
#
# A potential sees the already evaluated f and h so that forms defined
# relative to the metric (Lee-Lee, the general radial form, the two-center
# form) need no second copy of the metric parameters.


@dataclass(frozen=True)
class Potential:
    """U(x) = 0."""

    def evaluate(self, x, f, grad_f, h, grad_h) -> tuple[float, np.ndarray]:
        return 0.0, np.zeros(3)

    def describe(self) -> dict:
        return {"type": "none"}


@dataclass(frozen=True)
class ConstantPotential(Potential):
    value: float = 0.0

    def evaluate(self, x, f, grad_f, h, grad_h):
        return float(self.value), np.zeros(3)

    def describe(self):
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class KeplerPotential(Potential):
    """U = -k / r."""

    k: float = 1.0

    def evaluate(self, x, f, grad_f, h, grad_h):
        r, n = _radial(x)
        return -self.k / r, self.k * n / r**2

    def describe(self):
        return {"type": "kepler", "k": self.k}


@dataclass(frozen=True)
class LeeLeePotential(Potential):
    """U = a0^2 / (2 f), the Higgs-vev correction to Taub-NUT."""

    a0: float = 0.0

    def evaluate(self, x, f, grad_f, h, grad_h):
        c = 0.5 * self.a0**2
        return c / f, -c * grad_f / f**2

    def describe(self):
        return {"type": "lee-lee", "a0": self.a0}


@dataclass(frozen=True)
class RadialRungeLenzPotential(Potential):
    """U = (q^2 g^2 / 2r^2 + beta/r + gamma) / f - q^2 / 2h + E.

    The most general radial potential for which a Runge-Lenz vector exists
    in a generalized Taub-NUT metric.
    """

    q: float
    g: float
    beta: float
    gamma: float
    energy: float

    def evaluate(self, x, f, grad_f, h, grad_h):
        r, n = _radial(x)
        qg2 = (self.q * self.g) ** 2
        p = 0.5 * qg2 / r**2 + self.beta / r + self.gamma
        dp = (-qg2 / r**3 - self.beta / r**2) * n
        u = p / f - 0.5 * self.q**2 / h + self.energy
        du = dp / f - p * grad_f / f**2 + 0.5 * self.q**2 * grad_h / h**2
        return u, du

    def describe(self):
        return {"type": "radial-runge-lenz", "q": self.q, "g": self.g, "beta": self.beta,
                "gamma": self.gamma, "E": self.energy}


@dataclass(frozen=True)
class TwoCenterPotential(Potential):
    """U chosen so that f W = q^2 S^2 / 2 + beta S + gamma, S = sum m_i / |x - a_i|.

    Uses the multicenter identity h = 1/f.
    """

    masses: tuple[float, ...]
    positions: tuple[tuple[float, float, float], ...]
    q: float
    beta: float
    gamma: float
    energy: float

    def evaluate(self, x, f, grad_f, h, grad_h):
        s, ds = _center_sum(x, self.masses, self.positions)
        q2 = self.q**2
        fw = 0.5 * q2 * s * s + self.beta * s + self.gamma
        dfw = (q2 * s + self.beta) * ds
        # fW = fU + q^2 f / (2h) + E - fE
        e = self.energy
        u = (fw - e) / f + e - 0.5 * q2 / h
        du = dfw / f - (fw - e) * grad_f / f**2 + 0.5 * q2 * grad_h / h**2
        return u, du

    def describe(self):
        return {"type": "two-center", "q": self.q, "beta": self.beta, "gamma": self.gamma,
                "E": self.energy}


def _center_sum(x, masses, positions, r_min: float = R_MIN) -> tuple[float, np.ndarray]:
    s = 0.0
    ds = np.zeros(3)
    for m, a in zip(masses, positions):
        d = x - np.asarray(a, dtype=float)
        dist = float(np.sqrt(d @ d))
        if dist <= r_min:
            raise DomainError(f"point {x} lies within r_min of the center {a}")
        s += m / dist
        ds -= m * d / dist**3
    return s, ds


# -- metric -------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSpec:
    """Parameters of one metric family plus its monopole charge and potential U."""

    kind: str
    m: float = 0.0
    a0: float = 0.0
    a: float = 0.0
    b: float = 1.0
    c: float = 0.0
    d: float = 0.0
    f0: float = 1.0
    centers: tuple[tuple[float, tuple[float, float, float]], ...] = ()
    g: float = 0.0
    potential: Potential = field(default_factory=Potential)
    f_func: Optional[Callable[[np.ndarray], float]] = None
    h_func: Optional[Callable[[np.ndarray], float]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "multicenter" and not self.centers:
            raise ValueError("multicenter metric needs at least one center")
        if self.kind == "custom" and self.f_func is None:
            raise ValueError("custom metric needs f_func")

    @property
    def masses(self) -> tuple[float, ...]:
        return tuple(float(m) for m, _ in self.centers)

    @property
    def positions(self) -> tuple[tuple[float, float, float], ...]:
        return tuple(tuple(float(v) for v in a) for _, a in self.centers)

    def with_potential(self, potential: Potential) -> "MetricSpec":
        from dataclasses import replace
        return replace(self, potential=potential)

    def singular_distance(self, x) -> float:
        """Distance from x to the nearest coordinate singularity."""
        x = _as_vec(x)
        if self.kind == "multicenter":
            return min(float(np.linalg.norm(x - np.asarray(a))) for a in self.positions)
        r = float(np.linalg.norm(x))
        if self.kind == "flat-kepler" and self.g == 0 and not isinstance(self.potential, KeplerPotential):
            return math.inf
        if self.kind == "winding-string":
            return abs(r - 1.0)
        return r


def taub_nut(m: float = 1.0, g: Optional[float] = None, potential: Potential = Potential()) -> MetricSpec:
    return MetricSpec("taub-nut", m=m, g=4 * m if g is None else g, potential=potential)


def lee_lee(m: float = 1.0, a0: float = 1.0, g: Optional[float] = None) -> MetricSpec:
    return MetricSpec("lee-lee", m=m, a0=a0, g=4 * m if g is None else g,
                      potential=LeeLeePotential(a0))


def winding_string(g: float = 1.0, potential: Potential = Potential()) -> MetricSpec:
    return MetricSpec("winding-string", g=g, potential=potential)


def extended_taub_nut(a: float, b: float, c: float, d: float, g: float = 1.0,
                      potential: Potential = Potential()) -> MetricSpec:
    return MetricSpec("extended-taub-nut", a=a, b=b, c=c, d=d, g=g, potential=potential)


def flat_kepler(k: float = 1.0, g: float = 0.0) -> MetricSpec:
    return MetricSpec("flat-kepler", g=g, potential=KeplerPotential(k) if k else Potential())


def multicenter(f0: float, centers: Sequence[tuple[float, Sequence[float]]],
                potential: Potential = Potential()) -> MetricSpec:
    cs = tuple((float(m), tuple(float(v) for v in a)) for m, a in centers)
    return MetricSpec("multicenter", f0=f0, centers=cs, potential=potential)


def two_center(m1: float, m2: float, a: Sequence[float], f0: float = 1.0,
               potential: Potential = Potential()) -> MetricSpec:
    a = tuple(float(v) for v in a)
    return multicenter(f0, [(m1, a), (m2, tuple(-v for v in a))], potential)


def custom(f_func: Callable[[np.ndarray], float], h_func: Optional[Callable] = None,
           g: float = 0.0, potential: Potential = Potential()) -> MetricSpec:
    return MetricSpec("custom", f_func=f_func, h_func=h_func, g=g, potential=potential)


@dataclass(frozen=True)
class MetricSample:
    f: float
    grad_f: np.ndarray
    laplacian_f: float
    h: float
    grad_h: np.ndarray
    U: float
    grad_U: np.ndarray


def _radial_fh(spec: MetricSpec, r: float) -> tuple[float, float, float, float, float]:
    """f, f', f'' and h, h' as functions of r for the radial presets."""
    k = spec.kind
    if k in ("taub-nut", "lee-lee"):
        f = 1 + 4 * spec.m / r
        df = -4 * spec.m / r**2
        d2f = 8 * spec.m / r**3
        return f, df, d2f, 1 / f, -df / f**2
    if k == "winding-string":
        if r <= 1 + R_MIN:
            raise DomainError(f"winding-string metric requires r > 1, got r={r}")
        u = 1 - 1 / r
        return 1.0, 0.0, 0.0, u**-2, -2 * u**-3 / r**2
    if k == "extended-taub-nut":
        a, b, c, d = spec.a, spec.b, spec.c, spec.d
        f = b + a / r
        df = -a / r**2
        d2f = 2 * a / r**3
        num = a * r + b * r * r
        den = 1 + d * r + c * r * r
        h = num / den
        dh = ((a + 2 * b * r) * den - num * (d + 2 * c * r)) / den**2
        return f, df, d2f, h, dh
    return 1.0, 0.0, 0.0, 1.0, 0.0  # flat-kepler


def metric_eval(spec: MetricSpec, x) -> MetricSample:
    """Evaluate f, h, U and their derivatives at x."""
    x = _as_vec(x)
    if spec.kind == "flat-kepler":
        # flat space is regular at the origin; only a Kepler U is not
        f, grad_f, lap_f, h, grad_h = 1.0, np.zeros(3), 0.0, 1.0, np.zeros(3)
    elif spec.kind in RADIAL_KINDS:
        r, n = _radial(x)
        f, df, d2f, h, dh = _radial_fh(spec, r)
        grad_f = df * n
        lap_f = d2f + 2 * df / r
        grad_h = dh * n
    elif spec.kind == "multicenter":
        s, ds = _center_sum(x, spec.masses, spec.positions)
        f = spec.f0 + s
        grad_f = ds
        lap_f = 0.0
        h = 1 / f if f > 0 else -1.0
        grad_h = -grad_f / f**2 if f > 0 else np.zeros(3)
    else:
        f = float(spec.f_func(x))
        grad_f = fd_gradient(spec.f_func, x)
        lap_f = fd_laplacian(spec.f_func, x)
        if spec.h_func is None:
            h, grad_h = 1.0, np.zeros(3)
        else:
            h = float(spec.h_func(x))
            grad_h = fd_gradient(spec.h_func, x)
    if not f > 0:
        raise DomainError(f"conformal factor f={f} is not positive at {x}")
    if not h > 0:
        raise DomainError(f"vertical factor h={h} is not positive at {x}")
    u, grad_u = spec.potential.evaluate(x, f, grad_f, h, grad_h)
    return MetricSample(f, grad_f, lap_f, h, grad_h, float(u), np.asarray(grad_u, dtype=float))


@dataclass(frozen=True)
class ChristoffelSample:
    gamma: np.ndarray  # gamma[k, i, j] = Gamma^k_ij


def christoffel(sample: MetricSample, x=None) -> ChristoffelSample:
    """Gamma^k_ij = (delta^k_i d_j f + delta^k_j d_i f - delta_ij d_k f) / 2f."""
    if not sample.f > 0:
        raise DomainError("christoffel requires f > 0")
    gf = sample.grad_f
    eye = np.eye(3)
    gam = (eye[:, :, None] * gf[None, None, :]
           + eye[:, None, :] * gf[None, :, None]
           - gf[:, None, None] * eye[None, :, :]) / (2 * sample.f)
    return ChristoffelSample(gam)


@dataclass(frozen=True)
class FieldSample:
    B: np.ndarray
    F: np.ndarray  # F[i, j] = eps_ijk B_k


def field_strength(B) -> np.ndarray:
    b1, b2, b3 = B
    return np.array([[0.0, b3, -b2], [-b3, 0.0, b1], [b2, -b1, 0.0]])


def field_from_strength(F) -> np.ndarray:
    """B_k = 1/2 eps_kij F_ij."""
    return np.array([F[1, 2], F[2, 0], F[0, 1]])


def magnetic_field(spec: MetricSpec, x) -> FieldSample:
    """B = g x / r^3 for radial kinds, sum m_i (x - a_i) / |x - a_i|^3 for multicenter."""
    x = _as_vec(x)
    if spec.kind == "multicenter":
        B = np.zeros(3)
        for m, a in spec.centers:
            d = x - np.asarray(a)
            dist = float(np.sqrt(d @ d))
            if dist <= R_MIN:
                raise DomainError(f"point {x} lies on the center {a}")
            B += m * d / dist**3
    elif spec.g == 0.0:
        B = np.zeros(3)
    else:
        r, _ = _radial(x)
        B = spec.g * x / r**3
    return FieldSample(B, field_strength(B))


def dirac_potential(spec: MetricSpec, x) -> np.ndarray:
    """Cartesian components of A = -g cos(theta) dphi, one term per center.

    The string runs along the z axis through each center; points closer
    than r_min to it raise GaugeStringError.
    """
    x = _as_vec(x)
    if spec.kind == "multicenter":
        terms = [(m, np.asarray(a)) for m, a in spec.centers]
    else:
        terms = [(spec.g, np.zeros(3))]
    A = np.zeros(3)
    for g, a in terms:
        if g == 0.0:
            continue
        d = x - a
        rho2 = d[0] ** 2 + d[1] ** 2
        r = float(np.sqrt(d @ d))
        if rho2 <= (R_MIN * max(1.0, r)) ** 2:
            raise GaugeStringError(f"point {x} lies on the Dirac string of the center {a}")
        A += -g * (d[2] / r) * np.array([-d[1], d[0], 0.0]) / rho2
    return A
