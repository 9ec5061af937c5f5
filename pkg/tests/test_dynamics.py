import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from avgcontrol.dynamics import (ControlField, DynamicsClass, adjoint_average_trace, averaged_adjoint,
                                 classify_dynamics, controlled_final_state, default_profile, gaussian_average,
                                 propagate_controlled, propagate_free, transport_average_demo)
from avgcontrol.errors import ConfigurationError, DomainError
from avgcontrol.geometry import GeometrySpec, TimeGrid, time_quadrature
from avgcontrol.kernels import MultiplierKernel
from avgcontrol.spectral import Boundary, Interior, SpectralState, eigenvalues

PI2 = np.pi**2
K = MultiplierKernel.parse


def test_free_propagation_example():
    k = K("exponential", "heat")
    traj = propagate_free(SpectralState.unit(1, 4), k, TimeGrid.uniform(1.0, 11))
    # frozen from 40-digit evaluation of exp(-pi^2) / (pi^2 + 1)
    assert traj.final.coeffs[0] == pytest.approx(4.7585159767754358892e-06, rel=1e-13)
    assert np.all(traj.final.coeffs[1:] == 0)
    assert np.all(traj.coeffs[0] == SpectralState.unit(1, 4).coeffs)


def test_cauchy_average_is_deterministic_heat():
    y0 = SpectralState(np.linspace(1, 2, 8) + 0.5j)
    grid = TimeGrid.uniform(0.2, 9)
    traj = propagate_free(y0, K("cauchy", "schrodinger"), grid)
    lam = eigenvalues(8)
    want = np.exp(-lam[None, :] * grid.nodes[:, None]) * y0.coeffs[None, :]
    assert np.allclose(traj.coeffs, want, rtol=1e-14, atol=0)


def test_averaged_flow_is_not_a_semigroup():
    k = K("exponential", "heat")
    y0 = SpectralState.unit(1, 1)
    half = propagate_free(y0, k, TimeGrid.uniform(0.5, 2)).final
    twice = propagate_free(half, k, TimeGrid.uniform(0.5, 2)).final
    once = propagate_free(y0, k, TimeGrid.uniform(1.0, 2)).final
    assert abs(twice.coeffs[0] - once.coeffs[0]) > 0.5 * abs(once.coeffs[0])


def _geometry(time_set=((0.0, 0.4), (0.6, 1.0)), region=((0.0, 1.0),)):
    return GeometrySpec(Interior(list(region)), list(time_set), 1.0)


def _mode_one_control(geo, k, n):
    q = time_quadrature(geo.time_set, geo.horizon, k, n)
    vals = np.zeros((len(q), n))
    vals[:, 0] = 1.0

    def ev(s):
        out = np.zeros((np.size(s), n))
        out[:, 0] = 1.0
        return out

    return ControlField(q, vals, ev)


def test_duhamel_example():
    k = K("exponential", "heat")
    geo = _geometry()
    u = _mode_one_control(geo, k, 3)
    y = controlled_final_state(SpectralState.zeros(3), k, geo, u)
    # frozen from 40-digit quadrature of int_E exp(-pi^2 (1-s)) / (pi^2 (1-s) + 1) ds
    assert y.coeffs[0] == pytest.approx(0.060120677966167491099, rel=1e-12)
    assert np.max(np.abs(y.coeffs[1:])) < 1e-15


def test_trajectory_matches_final_and_needs_evaluator():
    k = K("exponential", "heat")
    geo = _geometry()
    u = _mode_one_control(geo, k, 3)
    y0 = SpectralState([1.0, 0.5, 0.25])
    traj = propagate_controlled(y0, k, geo, u, TimeGrid.uniform(1.0, 6))
    assert np.array_equal(traj.final.coeffs, controlled_final_state(y0, k, geo, u).coeffs)
    assert np.allclose(traj.coeffs[0], y0.coeffs)
    nodal = ControlField(u.quadrature, u.values)
    with pytest.raises(ConfigurationError):
        propagate_controlled(y0, k, geo, nodal, TimeGrid.uniform(1.0, 6))
    with pytest.raises(DomainError):
        propagate_controlled(y0, k, geo, u, TimeGrid.uniform(0.9, 6))


def test_control_outside_time_set_rejected():
    k = K("exponential", "heat")
    wide = _geometry(time_set=((0.0, 1.0),))
    u = _mode_one_control(wide, k, 2)
    with pytest.raises(DomainError):
        controlled_final_state(SpectralState.zeros(2), k, _geometry(), u)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_final_state_is_affine(a, b, seed):
    rng = np.random.default_rng(seed)
    n = 5
    k = K("uniform(1,2)", "schrodinger")
    geo = _geometry(region=((0.2, 0.7),))
    q = time_quadrature(geo.time_set, 1.0, k, n)
    y1, y2 = (SpectralState(rng.normal(size=n) + 1j * rng.normal(size=n)) for _ in range(2))
    u1, u2 = (ControlField(q, rng.normal(size=(len(q), n))) for _ in range(2))
    lhs = controlled_final_state(a * y1 + b * y2, k, geo, a * u1 + b * u2)
    rhs = a * controlled_final_state(y1, k, geo, u1) + b * controlled_final_state(y2, k, geo, u2)
    assert np.allclose(lhs.coeffs, rhs.coeffs, rtol=1e-12, atol=1e-12)


def test_control_algebra_requires_same_quadrature():
    k = K("exponential", "heat")
    u = _mode_one_control(_geometry(), k, 2)
    v = _mode_one_control(_geometry(time_set=((0.0, 0.5),)), k, 2)
    with pytest.raises(DomainError):
        u + v
    assert (u - u).norm_sq(np.eye(2)) == 0.0


def test_adjoint_uses_conjugate_multiplier():
    k = K("uniform(1,2)", "schrodinger")
    z0 = SpectralState.unit(2, 3)
    z = averaged_adjoint(z0, k, 1.0, [0.25])
    assert z[0, 1] == pytest.approx(np.conj(k(4 * PI2, 0.75)), rel=1e-15)
    geo = _geometry(time_set=((0.5, 1.0),))
    tr = adjoint_average_trace(z0, k, geo, np.array([0.25, 0.75]))
    assert np.all(tr.values[0] == 0) and not tr.in_time_set[0]
    assert tr.in_time_set[1]
    with pytest.raises(DomainError):
        adjoint_average_trace(z0, k, geo, np.array([1.5]))


@pytest.mark.parametrize("law,kind,label", [
    ("exponential", "heat", DynamicsClass.PARABOLIC_LIKE),
    ("uniform(1,2)", "heat", DynamicsClass.PARABOLIC_LIKE),
    ("cauchy", "schrodinger", DynamicsClass.PARABOLIC_LIKE),
    ("normal", "schrodinger", DynamicsClass.PARABOLIC_LIKE),
    ("normal", "fractional(0.4)", DynamicsClass.PARABOLIC_LIKE),
    ("uniform(1,2)", "schrodinger", DynamicsClass.CONSERVATIVE),
    ("exponential", "schrodinger", DynamicsClass.CONSERVATIVE),
    ("laplace", "schrodinger", DynamicsClass.CONSERVATIVE),
    ("chi2(3)", "schrodinger", DynamicsClass.CONSERVATIVE),
])
def test_classifier(law, kind, label):
    assert classify_dynamics(K(law, kind), 1e4, 1.0).label is label


def test_classifier_needs_three_modes():
    assert classify_dynamics(K("exponential", "heat"), 50.0, 1.0).label is DynamicsClass.INDETERMINATE


def test_gaussian_average_preserves_mass():
    x = np.linspace(-8, 8, 4001)
    avg = gaussian_average(default_profile, x, 0.7)
    mass0 = 256.0 / 315.0  # int (1 - z^2)^4 dz on [-1, 1]
    assert trapezoid(avg, x) == pytest.approx(mass0, rel=1e-10)
    assert np.all(avg >= 0)


def test_transport_residual_is_second_order():
    norms = [transport_average_demo(0.5, h).residual_norm for h in (0.1, 0.05, 0.025)]
    rates = np.log2(np.array(norms[:-1]) / np.array(norms[1:]))
    assert np.all(np.abs(rates - 2) < 0.05)
    assert transport_average_demo(0.0, 0.1).residual is None


def test_semigroup_gap_at_pi_squared():
    k = K("exponential", "heat")
    # e^{-pi^2}/(pi^2+1) against (e^{-pi^2/2}/(pi^2/2+1))^2
    assert abs(k(PI2, 1.0) - k(PI2, 0.5) ** 2) > 1e-3 * abs(k(PI2, 1.0))


def test_gaussian_profile_spreads_by_t_squared():
    sigma, t, L = 0.3, 0.5, 3.0
    profile = lambda z: np.exp(-z**2 / (2 * sigma**2)) / (np.sqrt(2 * np.pi) * sigma)  # noqa: E731
    x = np.linspace(-4, 4, 81)
    got = gaussian_average(profile, x, t, support=(-L, L), nodes=512, panels=16)
    v = sigma**2 + t**2
    want = np.exp(-x**2 / (2 * v)) / np.sqrt(2 * np.pi * v)
    assert np.max(np.abs(got - want)) < 1e-9


def test_adjoint_trace_examples():
    k = K("exponential", "heat")
    t = np.linspace(0, 1, 7)
    full = GeometrySpec(Interior([(0.0, 1.0)]), [(0.0, 1.0)], 1.0)
    tr = adjoint_average_trace(SpectralState.unit(1, 3), k, full, t)
    assert np.allclose(tr.values[:, 0], k(PI2, 1.0 - t), rtol=1e-14, atol=0)
    assert np.max(np.abs(tr.values[:, 1:])) < 1e-15
    bnd = GeometrySpec(Boundary(0), [(0.0, 1.0)], 1.0)
    tr = adjoint_average_trace(SpectralState.unit(1, 3), k, bnd, t)
    assert np.allclose(np.abs(tr.values[:, 0]), np.sqrt(2) * np.pi * k(PI2, 1.0 - t).real, rtol=1e-14)
    assert not np.any(adjoint_average_trace(SpectralState.zeros(3), k, bnd, t).values)
