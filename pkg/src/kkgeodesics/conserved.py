"""Closed-form conserved quantities, admissible potentials and lifted Killing-Stackel tensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .dynamics import EffectivePotential, PhaseState, hamiltonian
from .geometry import R_MIN, DomainError, MetricSpec, _as_vec
from .killing import KillingCoefficients


def _r(x: np.ndarray) -> float:
    r = float(np.sqrt(x @ x))
    if r <= R_MIN:
        raise DomainError("observable is singular at the origin")
    return r


def cross_matrix(n) -> np.ndarray:
    """N with N @ x = n x x."""
    n1, n2, n3 = _as_vec(n)
    return np.array([[0.0, -n3, n2], [n3, 0.0, -n1], [-n2, n1, 0.0]])


# -- radial systems --------------------------------------------------------------


def angular_momentum(state: PhaseState, g: float) -> np.ndarray:
    """J = x x Pi - q g x / r."""
    x = state.x
    return np.cross(x, state.Pi) - state.q * g * x / _r(x)


def runge_lenz_radial(state: PhaseState, g: float, beta: float) -> np.ndarray:
    """K = Pi x J + beta x / r."""
    J = angular_momentum(state, g)
    return np.cross(state.Pi, J) + beta * state.x / _r(state.x)


def conic_defect(state: PhaseState, g: float, beta: float) -> float:
    """K . x - beta r - (J^2 - q^2 g^2); vanishes identically."""
    J = angular_momentum(state, g)
    K = runge_lenz_radial(state, g, beta)
    r = _r(state.x)
    return float(K @ state.x - beta * r - (J @ J - (state.q * g) ** 2))


def theorem3_potential(f: Callable[[float], float], h: Callable[[float], float], q: float, g: float,
                       beta: float, gamma: float, E: float) -> Callable:
    """U(r) = (q^2 g^2 / 2r^2 + beta / r + gamma) / f(r) - q^2 / 2h(r) + E."""

    def U(r):
        r = np.asarray(r, dtype=float)
        return ((0.5 * (q * g) ** 2 / r**2 + beta / r + gamma) / f(r)
                - 0.5 * q * q / h(r) + E)

    return U


def taub_nut_runge_lenz_parameters(m: float, q: float, E: float) -> tuple[float, float]:
    """(beta, gamma) for which the Taub-NUT metric with U = 0 has a Runge-Lenz vector."""
    return -4 * m * (E - q * q), 0.5 * q * q - E


def lee_lee_runge_lenz_parameters(m: float, a0: float, q: float, E: float) -> tuple[float, float]:
    """Taub-NUT values with gamma shifted by a0^2/2 (E -> E - a0^2/2 in gamma only)."""
    beta, gamma = taub_nut_runge_lenz_parameters(m, q, E)
    return beta, gamma + 0.5 * a0**2


def extended_taub_nut_runge_lenz_parameters(a: float, b: float, c: float, d: float,
                                            q: float, E: float) -> tuple[float, float]:
    return -a * E + 0.5 * d * q * q, -b * E + 0.5 * c * q * q


def winding_string_runge_lenz_parameters(q: float, U0: float, E: float) -> tuple[float, float]:
    """beta = -q^2; gamma fixed by E = q^2/2 - gamma + U0 for constant U = U0."""
    return -q * q, 0.5 * q * q + U0 - E


# -- coefficient sets for the hierarchy -----------------------------------------------


def hamiltonian_coefficients(eff: EffectivePotential) -> KillingCoefficients:
    """C = G, C^ij = delta: the effective Hamiltonian itself."""
    return KillingCoefficients(2, C=eff.value, Cij=lambda x: np.eye(3), dC=eff.gradient,
                               dCij=lambda x: np.zeros((3, 3, 3)), name="H")


def angular_momentum_coefficients(n, q: float, g: float) -> KillingCoefficients:
    """C^i = (n x x)^i, C = -q g n.x / r."""
    n = _as_vec(n)
    N = cross_matrix(n)

    def C(x):
        return -q * g * (n @ x) / _r(x)

    def dC(x):
        r = _r(x)
        return -q * g * (n / r - (n @ x) * x / r**3)

    return KillingCoefficients(1, C=C, Ci=lambda x: N @ x, dC=dC, dCi=lambda x: N.T.copy(),
                               n=n, name="J.n")


def runge_lenz_tensor(n, x) -> np.ndarray:
    """2 (n.x) delta - n x - x n, the flat Runge-Lenz Killing tensor."""
    n = _as_vec(n)
    x = _as_vec(x)
    return 2 * (n @ x) * np.eye(3) - np.outer(n, x) - np.outer(x, n)


def _runge_lenz_tensor_jac(n) -> np.ndarray:
    eye = np.eye(3)
    return (2 * np.einsum("k,ij->kij", n, eye)
            - np.einsum("i,jk->kij", n, eye)
            - np.einsum("ik,j->kij", eye, n))


def runge_lenz_coefficients(n, q: float, g: float, beta: float) -> KillingCoefficients:
    """C^ij = 2 n.x delta - n x - x n, C^i = (q g / r)(n x x)^i, C = beta n.x / r."""
    n = _as_vec(n)
    N = cross_matrix(n)
    dT = _runge_lenz_tensor_jac(n)

    def Ci(x):
        return q * g * (N @ x) / _r(x)

    def dCi(x):
        r = _r(x)
        return q * g * (N.T / r - np.outer(x, N @ x) / r**3)

    def C(x):
        return beta * (n @ x) / _r(x)

    def dC(x):
        r = _r(x)
        return beta * (n / r - (n @ x) * x / r**3)

    return KillingCoefficients(2, C=C, Ci=Ci, Cij=lambda x: runge_lenz_tensor(n, x),
                               dC=dC, dCi=dCi, dCij=lambda x: dT, n=n, name="K.n")


# Covariant tensors on g = f delta, as consumed by the curved Killing check.


def rotation_killing_vector(spec: MetricSpec, n) -> KillingCoefficients:
    """C_i = g_ij eps^j_kl n^k x^l."""
    from .geometry import metric_eval

    n = _as_vec(n)
    N = cross_matrix(n)

    def Ci(x):
        return metric_eval(spec, x).f * (N @ x)

    def dCi(x):
        s = metric_eval(spec, x)
        return np.outer(s.grad_f, N @ x) + s.f * N.T

    return KillingCoefficients(1, Ci=Ci, dCi=dCi, n=n, name="rotation")


def metric_killing_tensor(spec: MetricSpec) -> KillingCoefficients:
    from .geometry import metric_eval

    def Cij(x):
        return metric_eval(spec, x).f * np.eye(3)

    def dCij(x):
        return np.einsum("k,ij->kij", metric_eval(spec, x).grad_f, np.eye(3))

    return KillingCoefficients(2, Cij=Cij, dCij=dCij, name="metric")


def runge_lenz_killing_tensor(spec: MetricSpec, n) -> KillingCoefficients:
    """C_ij = 2 g_ij n_k x^k - g_ik n_j x^k - g_jk n_i x^k."""
    from .geometry import metric_eval

    n = _as_vec(n)
    dT = _runge_lenz_tensor_jac(n)

    def Cij(x):
        return metric_eval(spec, x).f * runge_lenz_tensor(n, x)

    def dCij(x):
        s = metric_eval(spec, x)
        return np.einsum("k,ij->kij", s.grad_f, runge_lenz_tensor(n, x)) + s.f * dT

    return KillingCoefficients(2, Cij=Cij, dCij=dCij, n=n, name="runge-lenz")


# -- two-center systems -------------------------------------------------------------


@dataclass(frozen=True)
class TwoCenterSpec:
    m1: float
    m2: float
    a: tuple
    f0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        if not (self.m1 > 0 and self.m2 > 0):
            raise ValueError("two-center masses must be positive")
        if not np.linalg.norm(self.a) > 0:
            raise ValueError("half-separation vector a must be nonzero")

    @property
    def avec(self) -> np.ndarray:
        return np.array(self.a)

    @property
    def axis(self) -> np.ndarray:
        a = self.avec
        return a / np.linalg.norm(a)

    def metric(self, potential=None) -> MetricSpec:
        from .geometry import Potential, two_center

        return two_center(self.m1, self.m2, self.a, self.f0, potential or Potential())

    def center_sum(self, x) -> tuple[float, np.ndarray]:
        """S = m1/|x - a| + m2/|x + a| and its gradient."""
        x = _as_vec(x)
        a = self.avec
        s = 0.0
        ds = np.zeros(3)
        for m, d in ((self.m1, x - a), (self.m2, x + a)):
            dist = float(np.sqrt(d @ d))
            if dist <= R_MIN:
                raise DomainError("point lies on a center")
            s += m / dist
            ds -= m * d / dist**3
        return s, ds

    def axial_charge(self, x) -> tuple[float, np.ndarray]:
        """u = (m1 (x - a)/|x - a| + m2 (x + a)/|x + a|) . a_hat and its gradient."""
        x = _as_vec(x)
        a = self.avec
        ah = self.axis
        u = 0.0
        du = np.zeros(3)
        for m, d in ((self.m1, x - a), (self.m2, x + a)):
            dist = float(np.sqrt(d @ d))
            if dist <= R_MIN:
                raise DomainError("point lies on a center")
            u += m * (d @ ah) / dist
            du += m * (ah / dist - (d @ ah) * d / dist**3)
        return u, du


@dataclass(frozen=True)
class SphereSpec:
    rho: float
    center: np.ndarray
    radius: float

    def deviation(self, x) -> float:
        """(|x - center| - R) / R."""
        return (float(np.linalg.norm(_as_vec(x) - self.center)) - self.radius) / self.radius

    def normal(self, x) -> np.ndarray:
        d = _as_vec(x) - self.center
        return d / np.linalg.norm(d)

    def point(self, polar: float, azimuth: float, axis) -> np.ndarray:
        """Point on the sphere at the given angles measured from ``axis``."""
        e3 = _as_vec(axis) / np.linalg.norm(axis)
        e1 = np.cross(e3, [1.0, 0.0, 0.0])
        if np.linalg.norm(e1) < 1e-8:
            e1 = np.cross(e3, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(e3, e1)
        u = (np.sin(polar) * np.cos(azimuth) * e1 + np.sin(polar) * np.sin(azimuth) * e2
             + np.cos(polar) * e3)
        return self.center + self.radius * u


@dataclass(frozen=True)
class MedianPlane:
    """Degenerate equal-mass case: the plane through the midpoint normal to a."""

    normal: np.ndarray

    def deviation(self, x) -> float:
        return float(_as_vec(x) @ self.normal)


def two_center_sphere(tc: TwoCenterSpec) -> Union[SphereSpec, MedianPlane]:
    """Sphere on which m2/|x + a|^3 = m1/|x - a|^3, or the median plane when m1 = m2."""
    if tc.m1 == tc.m2:
        return MedianPlane(tc.axis)
    w1 = tc.m1 ** (2 / 3)
    w2 = tc.m2 ** (2 / 3)
    rho = (w1 + w2) / (w2 - w1)
    a = tc.avec
    return SphereSpec(rho, rho * a, float(np.linalg.norm(a)) * np.sqrt(rho * rho - 1))


def two_center_effective_potential(tc: TwoCenterSpec, q: float, beta: float, gamma: float, x) -> float:
    """fW = q^2 S^2 / 2 + beta S + gamma."""
    s, _ = tc.center_sum(x)
    return 0.5 * q * q * s * s + beta * s + gamma


def two_center_observables(state: PhaseState, tc: TwoCenterSpec,
                           beta: float) -> tuple[float, float, Optional[float]]:
    """(J_a, Q, K_a); K_a is None for neutral particles."""
    x, Pi, q = state.x, state.Pi, state.q
    ah = tc.axis
    u, _ = tc.axial_charge(x)
    La = float(np.cross(x, Pi) @ ah)
    Ja = La - q * u
    Pa = float(Pi @ ah)
    Q = Ja * Ja + Pa * Pa
    if q == 0:
        return Ja, Q, None
    a = tc.avec
    w = np.zeros(3)
    for m, d in ((tc.m1, x - a), (tc.m2, x + a)):
        w += m * d / np.linalg.norm(d)
    J = np.cross(x, Pi) - q * w
    Ka = float(np.cross(Pi, J) @ ah) + beta / q * (La - Ja)
    return Ja, Q, Ka


def two_center_Ja_coefficients(tc: TwoCenterSpec, q: float) -> KillingCoefficients:
    ah = tc.axis
    N = cross_matrix(ah)
    return KillingCoefficients(
        1, C=lambda x: -q * tc.axial_charge(x)[0], Ci=lambda x: N @ x,
        dC=lambda x: -q * tc.axial_charge(x)[1], dCi=lambda x: N.T.copy(), n=ah, name="Ja")


def two_center_Q_coefficients(tc: TwoCenterSpec, q: float) -> KillingCoefficients:
    """Reducible tensor 2 (a x x)(a x x) + 2 a a with its lower-order partners, giving J_a^2 + Pi_a^2."""
    ah = tc.axis
    N = cross_matrix(ah)

    def Cij(x):
        v = N @ x
        return 2 * np.outer(v, v) + 2 * np.outer(ah, ah)

    def dCij(x):
        v = N @ x
        return 2 * (np.einsum("ik,j->kij", N, v) + np.einsum("i,jk->kij", v, N))

    def Ci(x):
        return -2 * q * (N @ x) * tc.axial_charge(x)[0]

    def dCi(x):
        u, du = tc.axial_charge(x)
        return -2 * q * (np.outer(du, N @ x) + u * N.T)

    def C(x):
        return q * q * tc.axial_charge(x)[0] ** 2

    def dC(x):
        u, du = tc.axial_charge(x)
        return 2 * q * q * u * du

    return KillingCoefficients(2, C=C, Ci=Ci, Cij=Cij, dC=dC, dCi=dCi, dCij=dCij, n=ah, name="Q")


def two_center_Ka_coefficients(tc: TwoCenterSpec, q: float, beta: float) -> KillingCoefficients:
    """C^ij = 2 a.x delta - a x - x a, C^i = q S (a x x)^i, C = beta u (a unit axis)."""
    ah = tc.axis
    N = cross_matrix(ah)
    dT = _runge_lenz_tensor_jac(ah)

    def Ci(x):
        return q * tc.center_sum(x)[0] * (N @ x)

    def dCi(x):
        s, ds = tc.center_sum(x)
        return q * (np.outer(ds, N @ x) + s * N.T)

    return KillingCoefficients(
        2, C=lambda x: beta * tc.axial_charge(x)[0], Ci=Ci, Cij=lambda x: runge_lenz_tensor(ah, x),
        dC=lambda x: beta * tc.axial_charge(x)[1], dCi=dCi, dCij=lambda x: dT, n=ah, name="Ka")


def sphere_tangent_state(tc: TwoCenterSpec, sphere: SphereSpec, polar: float, azimuth: float,
                         velocity_tangent, q: float, speed: Optional[float] = None,
                         f_at: Optional[Callable] = None) -> PhaseState:
    """State on the confinement sphere with velocity projected onto its tangent plane.

    ``velocity_tangent`` is any 3-vector; its normal part is removed.  The
    covariant momentum is f times the velocity.
    """
    x = sphere.point(polar, azimuth, tc.axis)
    nrm = sphere.normal(x)
    v = _as_vec(velocity_tangent)
    v = v - (v @ nrm) * nrm
    if speed is not None:
        v = v / np.linalg.norm(v) * speed
    s, _ = tc.center_sum(x)
    f = tc.f0 + s if f_at is None else f_at(x)
    return PhaseState(x, f * v, q)


def sphere_circular_state(tc: TwoCenterSpec, sphere: SphereSpec, polar: float, azimuth: float,
                          q: float, gamma: float = 0.0) -> tuple[PhaseState, float, float]:
    """Circular latitude orbit on the confinement sphere.

    Returns (state, beta, E).  On the sphere B = 2 lambda x with
    lambda = m1/|x - a|^3, and the effective motion Pi' = q Pi x B - grad G
    keeps a circle about the axis iff Pi = omega (a_hat x x) with
    omega = -2 lambda q |x|^2 / z0, z0 = x . a_hat, and beta as below.
    E is fixed by Pi^2/2 + G(x) so the run is on shell.
    """
    if q == 0:
        raise ValueError("circular sphere orbits need a nonzero charge")
    x = sphere.point(polar, azimuth, tc.axis)
    ah = tc.axis
    z0 = float(x @ ah)
    if abs(z0) < 1e-12:
        raise DomainError("circular orbit through the median plane is undefined")
    lam = tc.m1 / float(np.linalg.norm(x - tc.avec)) ** 3
    omega = -2 * lam * q * float(x @ x) / z0
    v = np.cross(ah, x)
    rho_c2 = float(v @ v)
    if rho_c2 < 1e-24:
        raise DomainError("circular orbit at a pole of the sphere is degenerate")
    s, _ = tc.center_sum(x)
    beta = q * omega * rho_c2 / z0 - q * q * s
    Pi = omega * v
    G = 0.5 * q * q * s * s + beta * s + gamma
    E = 0.5 * float(Pi @ Pi) + G
    return PhaseState(x, Pi, q), beta, E


# -- lifted tensors ----------------------------------------------------------------


@dataclass
class LiftedTensor:
    """Symmetric contravariant tensor on the 4- or 5-dimensional extension, at one point."""

    dim: int
    components: np.ndarray

    def quadratic_form(self, p) -> float:
        """K = C^{mu nu} p_mu p_nu / 2."""
        p = np.asarray(p, dtype=float)
        return 0.5 * float(p @ self.components @ p)

    def trace(self, metric_lower: np.ndarray) -> float:
        return float(np.sum(self.components * metric_lower))


def lift_killing_stackel(coeffs: KillingCoefficients, q: float,
                         A: Callable[[np.ndarray], np.ndarray], x) -> LiftedTensor:
    """4D tensor with C^{i4} = C^i/q - C^i_k A^k, C^{44} = 2C/q^2 - 2 C_k A^k / q + C_jk A^j A^k."""
    if q == 0:
        raise ValueError("the lift requires a nonzero charge")
    x = _as_vec(x)
    Av = _as_vec(A(x))
    Cij = np.asarray(coeffs.Cij(x), dtype=float)
    Ci = np.asarray(coeffs.Ci(x), dtype=float)
    C = float(coeffs.C(x))
    M = np.zeros((4, 4))
    M[:3, :3] = Cij
    M[:3, 3] = M[3, :3] = Ci / q - Cij @ Av
    M[3, 3] = 2 * C / q**2 - 2 * (Ci @ Av) / q + Av @ Cij @ Av
    return LiftedTensor(4, M)


def canonical_momentum(state: PhaseState, A) -> np.ndarray:
    """(p_1, p_2, p_3, p_4) = (Pi + q A, q)."""
    return np.concatenate([state.Pi + state.q * _as_vec(A), [state.q]])


def bargmann_metric(V: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper components of dx^2 + 2 dx^4 dx^5 - 2 V (dx^5)^2."""
    g = np.zeros((5, 5))
    g[:3, :3] = np.eye(3)
    g[3, 4] = g[4, 3] = 1.0
    g[4, 4] = -2 * V
    ginv = np.zeros((5, 5))
    ginv[:3, :3] = np.eye(3)
    ginv[3, 4] = ginv[4, 3] = 1.0
    ginv[3, 3] = 2 * V
    return g, ginv


def _potential_value(V, x) -> float:
    return float(V(x)) if callable(V) else float(V)


def bargmann_kepler_tensor(n, x, V) -> LiftedTensor:
    """C^ij = 2 eta delta^ij - n^i x^j - n^j x^i and C^44 = 2 eta V, eta = n.x."""
    n = _as_vec(n)
    x = _as_vec(x)
    if np.linalg.norm(x) <= R_MIN:
        raise DomainError("Bargmann tensor is singular at the origin")
    eta = float(n @ x)
    M = np.zeros((5, 5))
    M[:3, :3] = runge_lenz_tensor(n, x)
    M[3, 3] = 2 * eta * _potential_value(V, x)
    return LiftedTensor(5, M)


def bargmann_eta(n, x) -> np.ndarray:
    """eta^ij = n^i x^j + n^j x^i - eta delta^ij, eta^45 = eta^54 = n.x."""
    n = _as_vec(n)
    x = _as_vec(x)
    eta = float(n @ x)
    E = np.zeros((5, 5))
    E[:3, :3] = np.outer(n, x) + np.outer(x, n) - eta * np.eye(3)
    E[3, 4] = E[4, 3] = eta
    return E


def bargmann_trace_free_tensor(n, x, V) -> LiftedTensor:
    """C^ab = (eta_hat / g^c_c) g^ab - eta^ab with eta_hat = eta^ab g_ab."""
    g, ginv = bargmann_metric(_potential_value(V, x))
    E = bargmann_eta(n, x)
    eta_hat = float(np.sum(E * g))
    return LiftedTensor(5, eta_hat / 5.0 * ginv - E)


def bargmann_runge_lenz(n, x, p, V, mass: float) -> float:
    """(p x L + m^2 V x) . n with L = x x p."""
    x = _as_vec(x)
    p = _as_vec(p)
    L = np.cross(x, p)
    return float((np.cross(p, L) + mass**2 * _potential_value(V, x) * x) @ _as_vec(n))


def bargmann_null_momentum(x, p, V, mass: float) -> np.ndarray:
    """(p, p_4 = m, p_5) with p_5 fixed by g^ab p_a p_b = 0."""
    p = _as_vec(p)
    v = _potential_value(V, x)
    p5 = -(p @ p / 2 + v * mass**2) / mass
    return np.concatenate([p, [mass, p5]])


def kepler_V(k: float = 1.0) -> Callable[[np.ndarray], float]:
    def V(x):
        return -k / _r(_as_vec(x))

    return V


# -- observable registry --------------------------------------------------------


def observable_registry(spec: MetricSpec, q: float, *, beta: float = 0.0, g: Optional[float] = None,
                        tc: Optional[TwoCenterSpec] = None, n=None, mass: float = 1.0,
                        kepler_k: float = 1.0) -> dict:
    """Named state functions used for drift monitoring and CSV columns."""
    g = spec.g if g is None else g
    reg = {
        "H": lambda s: hamiltonian(s, spec),
        "q": lambda s: s.q,
    }
    for i, axis in enumerate("xyz"):
        reg["J" + axis] = lambda s, i=i: float(angular_momentum(s, g)[i])
        reg["K" + axis] = lambda s, i=i: float(runge_lenz_radial(s, g, beta)[i])
    reg["conic"] = lambda s: float(
        runge_lenz_radial(s, g, beta) @ s.x - beta * np.linalg.norm(s.x))
    if tc is not None:
        reg["Ja"] = lambda s: two_center_observables(s, tc, beta)[0]
        reg["Q2"] = lambda s: two_center_observables(s, tc, beta)[1]
        if q != 0:
            reg["Ka"] = lambda s: two_center_observables(s, tc, beta)[2]
    if n is not None:
        nn = _as_vec(n)
        V = kepler_V(kepler_k)
        reg["Kn"] = lambda s: bargmann_runge_lenz(nn, s.x, s.Pi, V, mass)
    return reg
