"""Killing equations and the van Holten constraint hierarchy, checked pointwise.

Conventions
-----------
Coefficient fields take a point x (shape (3,)) and return C (scalar),
C^i (3,), C^ij (3, 3) or C^ijk (3, 3, 3).  Jacobians put the derivative
index first: ``dCi[k, i] = d_k C^i``.

``van_holten_residuals`` reads the fields as the coefficients of the
momentum polynomial Q = C + C^i Pi_i + C^ij Pi_i Pi_j / 2 + ... and checks
{Q, Pi^2/2 + G} = 0 order by order.  The kinetic term of that effective
Hamiltonian is flat, so derivatives there are partial derivatives and
indices move with delta.

``symmetrized_covariant_derivative`` instead reads Ci / Cij as covariant
tensor components on the curved metric g = f delta and uses the
Levi-Civita connection of g.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Optional

import numpy as np

from .dynamics import EffectivePotential
from .geometry import (
    DomainError,
    MetricSpec,
    R_MIN,
    _as_vec,
    christoffel,
    magnetic_field,
    metric_eval,
)

FD_STEP = 1e-5


def _fd_jacobian(func: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    h = step * max(1.0, float(np.linalg.norm(x)))
    rows = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        rows.append((np.asarray(func(x + e), dtype=float) - np.asarray(func(x - e), dtype=float)) / (2 * h))
    return np.array(rows)


def _zero_scalar(x):
    return 0.0


def _zero_vector(x):
    return np.zeros(3)


def _zero_matrix(x):
    return np.zeros((3, 3))


def _zero_rank3(x):
    return np.zeros((3, 3, 3))


@dataclass
class KillingCoefficients:
    """Coefficient fields of a momentum-polynomial observable (orders 0 to 3)."""

    order: int
    C: Callable = _zero_scalar
    Ci: Callable = _zero_vector
    Cij: Callable = _zero_matrix
    Cijk: Callable = _zero_rank3
    dC: Optional[Callable] = None
    dCi: Optional[Callable] = None
    dCij: Optional[Callable] = None
    dCijk: Optional[Callable] = None
    n: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if self.order not in (0, 1, 2, 3):
            raise ValueError("order must be 0..3")
        if self.n is not None:
            self.n = _as_vec(self.n)

    def grad_C(self, x):
        return _as_vec(self.dC(x)) if self.dC else _fd_jacobian(self.C, x)

    def jac_Ci(self, x):
        return np.asarray(self.dCi(x)) if self.dCi else _fd_jacobian(self.Ci, x)

    def jac_Cij(self, x):
        return np.asarray(self.dCij(x)) if self.dCij else _fd_jacobian(self.Cij, x)

    def jac_Cijk(self, x):
        return np.asarray(self.dCijk(x)) if self.dCijk else _fd_jacobian(self.Cijk, x)

    def polynomial(self, x, Pi) -> float:
        """C + C^i Pi_i + C^ij Pi_i Pi_j / 2 + C^ijk Pi_i Pi_j Pi_k / 6."""
        x, Pi = _as_vec(x), _as_vec(Pi)
        val = float(self.C(x)) + float(np.asarray(self.Ci(x)) @ Pi)
        val += 0.5 * float(Pi @ np.asarray(self.Cij(x)) @ Pi)
        if self.order >= 3:
            val += float(np.einsum("ijk,i,j,k->", np.asarray(self.Cijk(x)), Pi, Pi, Pi)) / 6
        return val


@dataclass
class ConstraintResiduals:
    order0: float
    order1: float
    order2: float
    order3: float
    lines: dict = field(default_factory=dict, repr=False)

    def max(self) -> float:
        return max(self.order0, self.order1, self.order2, self.order3)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.order0, self.order1, self.order2, self.order3)


# -- conditions on the conformal factor -------------------------------------------


def _unit(n) -> np.ndarray:
    n = _as_vec(n)
    norm = np.linalg.norm(n)
    if not abs(norm - 1.0) < 1e-12:
        raise ValueError(f"direction must be a unit vector, |n|={norm}")
    return n


def rank1_rotation_condition(spec: MetricSpec, n, x) -> float:
    """|(n x grad f) . x|; zero iff C_i = g_ij eps^j_kl n^k x^l is a Killing vector."""
    n = _unit(n)
    x = _as_vec(x)
    gf = metric_eval(spec, x).grad_f
    return abs(float(np.cross(n, gf) @ x))


def rank2_rl_vector(spec: MetricSpec, n, x) -> np.ndarray:
    """n x (x x grad f), linear in n."""
    x = _as_vec(x)
    gf = metric_eval(spec, x).grad_f
    return np.cross(_as_vec(n), np.cross(x, gf))


def rank2_rl_condition(spec: MetricSpec, n, x) -> tuple[np.ndarray, float]:
    """Residual vector n x (x x grad f) of the Runge-Lenz tensor condition, and its norm."""
    v = rank2_rl_vector(spec, _unit(n), x)
    return v, float(np.linalg.norm(v))


# -- curved Killing equation ---------------------------------------------------


def _cyclic_sum3(T: np.ndarray) -> np.ndarray:
    """T_ijl + T_jli + T_lij for T indexed [i, j, l]."""
    return T + T.transpose(1, 2, 0) + T.transpose(2, 0, 1)


def covariant_derivative(coeffs: KillingCoefficients, spec: MetricSpec, x, rank: int) -> np.ndarray:
    """D_k C_i (rank 1) or D_k C_ij (rank 2), derivative index first."""
    x = _as_vec(x)
    gam = christoffel(metric_eval(spec, x), x).gamma
    if rank == 1:
        Cv = np.asarray(coeffs.Ci(x))
        return coeffs.jac_Ci(x) - np.einsum("mki,m->ki", gam, Cv)
    if rank == 2:
        Cm = np.asarray(coeffs.Cij(x))
        return (coeffs.jac_Cij(x)
                - np.einsum("mki,mj->kij", gam, Cm)
                - np.einsum("mkj,im->kij", gam, Cm))
    raise ValueError("rank must be 1 or 2")


def symmetrized_covariant_derivative_tensor(coeffs: KillingCoefficients, spec: MetricSpec, x,
                                            rank: int, normalized: bool = True) -> np.ndarray:
    D = covariant_derivative(coeffs, spec, x, rank)
    if rank == 1:
        S = D + D.T
        return S / 2 if normalized else S
    S = _cyclic_sum3(D)
    return S / 3 if normalized else S


def symmetrized_covariant_derivative(coeffs: KillingCoefficients, spec: MetricSpec, x,
                                     rank: int, normalized: bool = True) -> float:
    """max |D_(i C_j)| or max |D_(i C_jl)| on the metric g = f delta.

    ``normalized`` divides the symmetrization by the number of terms.
    """
    return float(np.max(np.abs(symmetrized_covariant_derivative_tensor(coeffs, spec, x, rank, normalized))))


def _sym3_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cyclic sum of a_ij b_l for symmetric a."""
    return _cyclic_sum3(np.einsum("ij,l->ijl", a, b))


def runge_lenz_derivative_closed_form(spec: MetricSpec, n, x) -> np.ndarray:
    """Cyclic sum D_i C_jl + D_j C_li + D_l C_ij for C_ij = f (2 n.x delta - n x - x n).

    Equals sum over permutations of d_f n x minus (x . grad f) (delta n)
    minus (n . grad f) (delta x), each cyclically summed.
    """
    x = _as_vec(x)
    n = _as_vec(n)
    gf = metric_eval(spec, x).grad_f
    eye = np.eye(3)
    S6 = np.zeros((3, 3, 3))
    for p in permutations((gf, n, x)):
        S6 += np.einsum("i,j,l->ijl", *p)
    return S6 - (x @ gf) * _sym3_outer(eye, n) - (n @ gf) * _sym3_outer(eye, x)


def stated_f1_closed_form(spec: MetricSpec, n, x) -> np.ndarray:
    """Stated closed form f^-1 (g_(ij d_l) f n.x - g_(ij x_l) n . grad f), cyclic sums.

    Identically zero for radial f; kept to contrast with the true derivative.
    """
    x = _as_vec(x)
    n = _as_vec(n)
    s = metric_eval(spec, x)
    g = s.f * np.eye(3)
    return (_sym3_outer(g, s.grad_f) * (n @ x) - _sym3_outer(g, x) * (n @ s.grad_f)) / s.f


# -- van Holten hierarchy --------------------------------------------------------------


def van_holten_lines(coeffs: KillingCoefficients, spec: MetricSpec, eff: EffectivePotential,
                     q: float, x) -> dict:
    """Left-minus-right of each constraint line at x, as arrays."""
    x = _as_vec(x)
    F = magnetic_field(spec, x).F
    dG = eff.gradient(x)
    Ci = np.asarray(coeffs.Ci(x), dtype=float)
    Cij = np.asarray(coeffs.Cij(x), dtype=float)
    Cijk = np.asarray(coeffs.Cijk(x), dtype=float)

    line0 = float(Ci @ dG)
    line1 = coeffs.grad_C(x) - q * F @ Ci - Cij @ dG
    dCi = coeffs.jac_Ci(x)  # [k, i] = d_k C^i
    FC = F @ Cij  # [i, l] = F_im C^ml
    line2 = dCi + dCi.T - q * (FC + FC.T) - Cijk @ dG
    dCij = coeffs.jac_Cij(x)  # [k, i, j]
    FC3 = np.einsum("im,mlj->ilj", F, Cijk)  # F_im C^mlj
    line3 = _cyclic_sum3(dCij) - q * _cyclic_sum3(FC3)
    return {"order0": line0, "order1": line1, "order2": line2, "order3": line3}


def van_holten_residuals(coeffs: KillingCoefficients, spec: MetricSpec, eff: EffectivePotential,
                         q: float, x) -> ConstraintResiduals:
    """Max-norm residual of each order of the van Holten constraints at x."""
    lines = van_holten_lines(coeffs, spec, eff, q, x)
    res = [float(np.max(np.abs(lines[k]))) for k in ("order0", "order1", "order2", "order3")]
    return ConstraintResiduals(*res, lines=lines)


def laplace_obstruction(eff: EffectivePotential, q: float, g: float, x) -> float:
    """Laplacian of G - q^2 g^2 / 2r^2, the integrability condition for a Runge-Lenz vector."""
    x = _as_vec(x)
    r = float(np.linalg.norm(x))
    if r <= R_MIN:
        raise DomainError("laplace obstruction is undefined at the origin")
    return float(eff.laplacian(x)) - (q * g) ** 2 / r**4


def magnetic_laplace_obstruction(eff: EffectivePotential, spec: MetricSpec, q: float, x) -> float:
    """Laplacian of G minus q^2 |B|^2; reduces to the radial obstruction for B = g x / r^3."""
    x = _as_vec(x)
    B = magnetic_field(spec, x).B
    return float(eff.laplacian(x)) - q * q * float(B @ B)
