import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from kkgeodesics import conserved as cs
from kkgeodesics import geometry as geo
from kkgeodesics.dynamics import MetricEffectivePotential, PhaseState, RadialEffectivePotential, hamiltonian, random_state
from kkgeodesics.integrate import IntegratorConfig, drift_report, integrate
from kkgeodesics.killing import KillingCoefficients, van_holten_residuals

TC = cs.TwoCenterSpec(1.0, 8.0, (0, 0, 1))
SPHERE = cs.two_center_sphere(TC)


# -- radial observables -----------------------------------------------------------

def test_angular_momentum_examples():
    s = PhaseState([1, 0, 0], [0, 1, 0], 0.0)
    np.testing.assert_allclose(cs.angular_momentum(s, 0.0), [0, 0, 1])
    s = PhaseState([1, 0, 0], [0, 1, 0], 1.0)
    np.testing.assert_allclose(cs.angular_momentum(s, 2.0), [-2, 0, 1])
    with pytest.raises(geo.DomainError):
        cs.angular_momentum(PhaseState([0, 0, 0], [1, 0, 0], 1.0), 1.0)


def test_runge_lenz_vanishes_on_circular_kepler_orbit():
    np.testing.assert_allclose(cs.runge_lenz_radial(PhaseState([1, 0, 0], [0, 1, 0], 0.0), 0.0, -1.0), 0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conic_identity_and_JK(seed):
    rng = np.random.default_rng(seed)
    q, g, beta = rng.uniform(-1, 1, 3) * (1, 4, 2)
    s = PhaseState(oracles.random_shell_point(rng), rng.normal(size=3), q)
    assert abs(cs.conic_defect(s, g, beta)) < 1e-10
    J = cs.angular_momentum(s, g)
    K = cs.runge_lenz_radial(s, g, beta)
    assert J @ K == pytest.approx(-beta * q * g, abs=1e-10)


def _trajectory(spec, s0, t_max=50):
    return integrate(s0, spec, IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, t_max=t_max))


def test_taub_nut_runge_lenz_conserved():
    m, q = 1.0, 0.5
    spec = geo.taub_nut(m)
    s0 = PhaseState([3.0, 1.0, 0.5], [-0.3, 0.8, 0.4], q)
    beta, _ = cs.taub_nut_runge_lenz_parameters(m, q, hamiltonian(s0, spec))
    tr = _trajectory(spec, s0)
    rep = drift_report(tr, {f"K{i}": (lambda s, i=i: cs.runge_lenz_radial(s, 4 * m, beta)[i]) for i in range(3)})
    assert max(d.max_rel for d in rep.entries.values()) < 1e-8


def test_extended_taub_nut_runge_lenz_conserved():
    a, b, c, d, q = 1.0, 1.0, 0.5, 0.3, 0.5
    spec = geo.extended_taub_nut(a, b, c, d)
    s0 = PhaseState([2.0, 1.5, -0.5], [0.3, -0.4, 0.6], q)
    beta, _ = cs.extended_taub_nut_runge_lenz_parameters(a, b, c, d, q, hamiltonian(s0, spec))
    tr = _trajectory(spec, s0)
    rep = drift_report(tr, {f"K{i}": (lambda s, i=i: cs.runge_lenz_radial(s, 1.0, beta)[i]) for i in range(3)})
    assert max(d.max_rel for d in rep.entries.values()) < 1e-8


# -- admissible radial potentials -----------------------------------------------------

def _fh(spec):
    return (lambda r: geo.metric_eval(spec, [r, 0, 0]).f, lambda r: geo.metric_eval(spec, [r, 0, 0]).h)


def test_theorem3_reproduces_zero_taub_nut_potential():
    m, q, E = 1.0, 0.5, 0.9
    spec = geo.taub_nut(m)
    beta, gamma = cs.taub_nut_runge_lenz_parameters(m, q, E)
    U = cs.theorem3_potential(*_fh(spec), q, 4 * m, beta, gamma, E)
    for r in np.geomspace(0.1, 100, 200):
        assert abs(U(r)) < 1e-12


def test_theorem3_reproduces_lee_lee_potential():
    m, a0, q, E = 1.0, 0.6, 0.5, 0.9
    spec = geo.lee_lee(m, a0)
    beta, gamma = cs.lee_lee_runge_lenz_parameters(m, a0, q, E)
    U = cs.theorem3_potential(*_fh(spec), q, 4 * m, beta, gamma, E)
    for r in np.geomspace(0.1, 100, 50):
        assert U(r) == pytest.approx(geo.metric_eval(spec, [r, 0, 0]).U, abs=1e-12)


def test_theorem3_winding_and_extended():
    q, U0, E = 0.5, 0.2, 0.7
    ws = geo.winding_string()
    U = cs.theorem3_potential(*_fh(ws), q, 1.0, *cs.winding_string_runge_lenz_parameters(q, U0, E), E)
    for r in np.geomspace(1.01, 100, 50):
        assert U(r) == pytest.approx(U0, abs=1e-12)
    ext = geo.extended_taub_nut(1.0, 1.2, 0.5, 0.3)
    U = cs.theorem3_potential(*_fh(ext), q, 1.0,
                              *cs.extended_taub_nut_runge_lenz_parameters(1.0, 1.2, 0.5, 0.3, q, E), E)
    for r in np.geomspace(0.1, 100, 50):
        assert abs(U(r)) < 1e-12


def test_theorem3_flat_consistency():
    q = 0.8
    U = cs.theorem3_potential(lambda r: 1.0, lambda r: 1.0, q, 0.0, 0.0, 0.0, q * q / 2)
    assert U(np.array([0.5, 2.0, 7.0])) == pytest.approx(0.0)


@pytest.mark.parametrize("name", ["taub-nut", "lee-lee", "winding-string", "extended-taub-nut"])
def test_intrinsic_effective_potential_has_radial_form(name, rng):
    """fW of each preset equals q^2 g^2/2r^2 + beta/r + gamma + E for its (beta, gamma)."""
    q, E = 0.5, 0.6
    spec, g, (beta, gamma) = {
        "taub-nut": (geo.taub_nut(1.0), 4.0, cs.taub_nut_runge_lenz_parameters(1.0, q, E)),
        "lee-lee": (geo.lee_lee(1.0, 0.6), 4.0, cs.lee_lee_runge_lenz_parameters(1.0, 0.6, q, E)),
        "winding-string": (geo.winding_string(potential=geo.ConstantPotential(0.2)), 1.0,
                           cs.winding_string_runge_lenz_parameters(q, 0.2, E)),
        "extended-taub-nut": (geo.extended_taub_nut(1.0, 1.0, 0.5, 0.3), 1.0,
                              cs.extended_taub_nut_runge_lenz_parameters(1.0, 1.0, 0.5, 0.3, q, E)),
    }[name]
    eff = MetricEffectivePotential(spec, q, E)
    rad = RadialEffectivePotential(q, g, beta, gamma + E)
    for x in (oracles.random_shell_point(rng) for _ in range(20)):
        assert eff.value(x) == pytest.approx(rad.value(x), rel=1e-12, abs=1e-12)


# -- two centers ---------------------------------------------------------------------

def test_sphere_for_one_and_eight():
    assert SPHERE.rho == pytest.approx(5 / 3)
    np.testing.assert_allclose(SPHERE.center, [0, 0, 5 / 3])
    assert SPHERE.radius == pytest.approx(4 / 3)


def test_sphere_points_balance_the_centers(rng):
    for tc in (TC, cs.TwoCenterSpec(2.0, 0.5, (0.3, -0.4, 1.2))):
        sph = cs.two_center_sphere(tc)
        a = tc.avec
        for _ in range(50):
            x = sph.point(rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi), tc.axis)
            assert abs(sph.deviation(x)) < 1e-14
            lhs = tc.m2 / np.linalg.norm(x + a) ** 3
            rhs = tc.m1 / np.linalg.norm(x - a) ** 3
            assert lhs == pytest.approx(rhs, rel=1e-10)


def test_equal_masses_give_median_plane():
    s = cs.two_center_sphere(cs.TwoCenterSpec(1.0, 1.0, (0, 0, 2)))
    assert isinstance(s, cs.MedianPlane)
    np.testing.assert_allclose(s.normal, [0, 0, 1])
    assert s.deviation([3, 4, 0]) == 0


def test_sphere_collapses_for_heavy_second_center():
    s = cs.two_center_sphere(cs.TwoCenterSpec(1.0, 1e12, (0, 0, 1)))
    assert 1 < s.rho < 1 + 1e-6 and s.radius < 1e-3


def test_two_center_spec_validation():
    with pytest.raises(ValueError):
        cs.TwoCenterSpec(0.0, 1.0, (0, 0, 1))
    with pytest.raises(ValueError):
        cs.TwoCenterSpec(1.0, 1.0, (0, 0, 0))


def test_two_center_observable_examples():
    tc = cs.TwoCenterSpec(1.0, 1.0, (0, 0, 1))
    Ja, Q, Ka = cs.two_center_observables(PhaseState([1, 0, 0], [0, 1, 0], 1.0), tc, 0.3)
    assert Ja == pytest.approx(1.0)
    s = PhaseState([0.3, -1.2, 0.7], [0.5, 0.1, -0.4], 0.0)
    Ja, Q, Ka = cs.two_center_observables(s, TC, 0.3)
    La = np.cross(s.x, s.Pi)[2]
    assert Ja == pytest.approx(La) and Q == pytest.approx(La**2 + s.Pi[2] ** 2) and Ka is None


def test_two_center_reduces_to_single_monopole(rng):
    tc = cs.TwoCenterSpec(1.0, 1e-14, (0, 0, 1e-13))
    for _ in range(10):
        s = PhaseState(oracles.random_shell_point(rng), rng.normal(size=3), 0.7)
        Ja, _, _ = cs.two_center_observables(s, tc, 0.0)
        assert Ja == pytest.approx(cs.angular_momentum(s, 1.0)[2], abs=1e-10)


def test_two_center_effective_potential_values():
    assert cs.two_center_effective_potential(TC, 0.0, 0.0, 0.0, [1, 2, 3]) == 0.0
    tc = cs.TwoCenterSpec(1.0, 1.0, (0, 0, 1))
    q, beta, gamma = 0.7, 0.3, -0.2
    assert cs.two_center_effective_potential(tc, q, beta, gamma, [0, 0, 0]) == pytest.approx(
        2 * q * q + 2 * beta + gamma)


def test_two_center_polynomials_match_observables(rng):
    q, beta = 0.5, 0.3
    for _ in range(20):
        x = oracles.random_shell_point(rng)
        if np.linalg.norm(x - TC.avec) < 0.3 or np.linalg.norm(x + TC.avec) < 0.3:
            continue
        Pi = rng.normal(size=3)
        Ja, Q, Ka = cs.two_center_observables(PhaseState(x, Pi, q), TC, beta)
        assert cs.two_center_Ja_coefficients(TC, q).polynomial(x, Pi) == pytest.approx(Ja, rel=1e-12, abs=1e-12)
        assert cs.two_center_Q_coefficients(TC, q).polynomial(x, Pi) == pytest.approx(Q, rel=1e-12, abs=1e-12)
        assert cs.two_center_Ka_coefficients(TC, q, beta).polynomial(x, Pi) == pytest.approx(Ka, rel=1e-12, abs=1e-12)


def _two_center_eff(q, beta, gamma, E=0.0):
    pot = geo.TwoCenterPotential((1.0, 8.0), ((0, 0, 1), (0, 0, -1)), q, beta, gamma, E)
    spec = TC.metric(pot)
    return spec, MetricEffectivePotential(spec, q, E)


def test_two_center_potential_is_assembled_exactly(rng):
    q, beta, gamma, E = 0.5, 0.3, 0.1, 0.4
    spec, eff = _two_center_eff(q, beta, gamma, E)
    for _ in range(20):
        x = oracles.random_shell_point(rng)
        if spec.singular_distance(x) < 0.3:
            continue
        assert eff.value(x) == pytest.approx(cs.two_center_effective_potential(TC, q, beta, gamma, x), rel=1e-12)


def test_two_center_hierarchies(rng):
    q, beta = 0.5, 0.3
    spec, eff = _two_center_eff(q, beta, 0.0)
    Ja = cs.two_center_Ja_coefficients(TC, q)
    Ka = cs.two_center_Ka_coefficients(TC, q, beta)
    Q = cs.two_center_Q_coefficients(TC, q)
    q_order2 = []
    for _ in range(50):
        x = SPHERE.point(rng.uniform(0.05, 0.95) * np.pi, rng.uniform(0, 2 * np.pi), TC.axis)
        assert van_holten_residuals(Ja, spec, eff, q, x).max() < 1e-8
        assert van_holten_residuals(Ka, spec, eff, q, x).max() < 1e-8
        q_order2.append(van_holten_residuals(Q, spec, eff, q, x).order2)
    # Pi_a is not conserved in the two-center field, so neither is J_a^2 + Pi_a^2 in general
    assert max(q_order2) > 1e-2
    x = np.array([1.5, 0.4, -0.8])
    assert van_holten_residuals(Ka, spec, eff, q, x).max() > 1e-3


def test_circular_sphere_orbit_is_confined():
    q = 0.5
    state, beta, E = cs.sphere_circular_state(TC, SPHERE, 1.0, 0.3, q)
    assert abs(SPHERE.deviation(state.x)) < 1e-12
    assert abs(state.Pi @ SPHERE.normal(state.x)) < 1e-12 * np.linalg.norm(state.Pi)
    spec, _ = _two_center_eff(q, beta, 0.0, E)
    assert hamiltonian(state, spec) == pytest.approx(E, rel=1e-12)
    tr = integrate(state, spec, IntegratorConfig(t_max=20))
    assert max(abs(SPHERE.deviation(x)) for x in tr.states[:, :3]) < 1e-8
    rep = drift_report(tr, {k: (lambda s, i=i: cs.two_center_observables(s, TC, beta)[i])
                            for i, k in enumerate(("Ja", "Q", "Ka"))})
    assert max(d.max_rel for d in rep.entries.values()) < 1e-8


def test_circular_sphere_orbit_needs_charge():
    with pytest.raises(ValueError):
        cs.sphere_circular_state(TC, SPHERE, 1.0, 0.3, 0.0)


def test_sphere_tangent_state_is_tangent(rng):
    s = cs.sphere_tangent_state(TC, SPHERE, 1.1, 0.4, rng.normal(size=3), 0.5, speed=0.7)
    assert abs(SPHERE.deviation(s.x)) < 1e-12
    assert abs(s.Pi @ SPHERE.normal(s.x)) < 1e-12
    f = geo.metric_eval(TC.metric(), s.x).f
    assert np.linalg.norm(s.Pi) == pytest.approx(0.7 * f)


# -- lifts ---------------------------------------------------------------------------

def test_lift_without_gauge_field():
    c = KillingCoefficients(2, C=lambda x: 3.0, Ci=lambda x: np.array([1.0, 2.0, 3.0]),
                            Cij=lambda x: np.zeros((3, 3)))
    L = cs.lift_killing_stackel(c, 2.0, lambda x: np.zeros(3), [1, 1, 1])
    np.testing.assert_allclose(L.components[:3, 3], [0.5, 1.0, 1.5])
    assert L.components[3, 3] == pytest.approx(1.5)
    np.testing.assert_array_equal(L.components, L.components.T)
    with pytest.raises(ValueError):
        cs.lift_killing_stackel(c, 0.0, lambda x: np.zeros(3), [1, 1, 1])


def test_lift_round_trip_taub_nut(rng):
    m, q = 1.0, 0.5
    spec = geo.taub_nut(m)
    beta, _ = cs.taub_nut_runge_lenz_parameters(m, q, 0.8)

    def A(x):
        return geo.dirac_potential(spec, x)

    for _ in range(100):
        s = random_state(rng, spec, q)
        n = oracles.random_unit(rng)
        for coeffs in (cs.runge_lenz_coefficients(n, q, 4 * m, beta), cs.angular_momentum_coefficients(n, q, 4 * m)):
            L = cs.lift_killing_stackel(coeffs, q, A, s.x)
            np.testing.assert_allclose(L.components[:3, :3], coeffs.Cij(s.x))
            p = cs.canonical_momentum(s, A(s.x))
            assert L.quadratic_form(p) == pytest.approx(coeffs.polynomial(s.x, s.Pi), abs=1e-10)
        K = cs.runge_lenz_radial(s, 4 * m, beta) @ n
        L = cs.lift_killing_stackel(cs.runge_lenz_coefficients(n, q, 4 * m, beta), q, A, s.x)
        assert L.quadratic_form(cs.canonical_momentum(s, A(s.x))) == pytest.approx(K, abs=1e-10)


def test_lift_is_gauge_invariant(rng):
    m, q = 1.0, 0.5
    spec = geo.taub_nut(m)
    coeffs = cs.runge_lenz_coefficients([0.6, 0, 0.8], q, 4 * m, -1.0)

    def A(x):
        return geo.dirac_potential(spec, x)

    def A2(x):
        # A + grad chi with chi = sin(x) y + z^2
        return A(x) + np.array([np.cos(x[0]) * x[1], np.sin(x[0]), 2 * x[2]])

    for _ in range(20):
        s = random_state(rng, spec, q)
        v1 = cs.lift_killing_stackel(coeffs, q, A, s.x).quadratic_form(cs.canonical_momentum(s, A(s.x)))
        v2 = cs.lift_killing_stackel(coeffs, q, A2, s.x).quadratic_form(cs.canonical_momentum(s, A2(s.x)))
        assert v1 == pytest.approx(v2, abs=1e-10)


def test_lift_on_gauge_string():
    spec = geo.taub_nut(1.0)
    with pytest.raises(geo.GaugeStringError):
        cs.lift_killing_stackel(cs.angular_momentum_coefficients([0, 0, 1], 0.5, 4.0), 0.5,
                                lambda x: geo.dirac_potential(spec, x), [0, 0, 2])


def test_bargmann_components_on_axis():
    r = 2.5
    V = cs.kepler_V(1.0)
    L = cs.bargmann_kepler_tensor([0, 0, 1], [0, 0, r], V)
    C = L.components
    assert L.dim == 5
    assert C[2, 2] == pytest.approx(0) and C[0, 0] == pytest.approx(2 * r) and C[1, 1] == pytest.approx(2 * r)
    assert C[3, 3] == pytest.approx(2 * r * V([0, 0, r]))
    assert np.count_nonzero(C) == 3


def test_bargmann_trace_free_and_null_agreement(rng):
    V = cs.kepler_V(1.0)
    for _ in range(20):
        x = oracles.random_shell_point(rng)
        n = oracles.random_unit(rng)
        g, ginv = cs.bargmann_metric(V(x))
        np.testing.assert_allclose(g @ ginv, np.eye(5), atol=1e-15)
        E = cs.bargmann_eta(n, x)
        assert E[3, 4] == pytest.approx(n @ x)
        T = cs.bargmann_trace_free_tensor(n, x, V)
        assert abs(T.trace(g)) < 1e-12
        p = cs.bargmann_null_momentum(x, rng.normal(size=3), V, 1.0)
        assert abs(p @ ginv @ p) < 1e-12
        C = cs.bargmann_kepler_tensor(n, x, V)
        K = cs.bargmann_runge_lenz(n, x, p[:3], V, 1.0)
        assert C.quadratic_form(p) == pytest.approx(K, abs=1e-12)
        # the component tensor is the trace-free one plus a pure-trace part, invisible on null momenta
        eta_hat = float(np.sum(E * g))
        np.testing.assert_allclose(C.components, T.components + 0.8 * eta_hat * ginv, atol=1e-12)
        assert T.quadratic_form(p) == pytest.approx(K, abs=1e-12)
        assert eta_hat == pytest.approx(n @ x)


def test_observable_registry_names():
    spec = geo.taub_nut(1.0)
    reg = cs.observable_registry(spec, 0.5, beta=-1.0, tc=TC, n=[1, 0, 0])
    for name in ("H", "q", "Jx", "Jy", "Jz", "Kx", "Ky", "Kz", "Ja", "Q2", "Ka", "Kn", "conic"):
        assert name in reg
    assert "Ka" not in cs.observable_registry(spec, 0.0, tc=TC)
