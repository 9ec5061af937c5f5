import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from avgcontrol.control import ControlProblem, Null, assemble_gramian
from avgcontrol.errors import ConfigurationError, DomainError
from avgcontrol.geometry import GeometrySpec
from avgcontrol.kernels import MultiplierKernel
from avgcontrol.observability import (averaged_observability_constant, boundary_observability_demo, build_telescope,
                                      deterministic_fractional_gramian, factorization_identity_check,
                                      fractional_study, ratio_bound, spectral_inequality_fit)
from avgcontrol.spectral import Boundary, Interior, SpectralState, eigenvalues

E_TEL = [(0.2, 0.5), (0.7, 0.9)]


def test_spectral_inequality_fit_shape():
    fit = spectral_inequality_fit(Interior([(0.3, 0.8)]), [(n * np.pi) ** 2 for n in (2, 4, 6, 8, 10)])
    assert np.all(np.diff(fit.sigma) <= 0)
    assert fit.c1 > 0
    assert np.all(fit.constants >= 1.0)
    assert list(fit.mode_counts) == [2, 4, 6, 8, 10]


def test_spectral_inequality_fit_errors():
    with pytest.raises(ConfigurationError):
        spectral_inequality_fit(Boundary(0), [100.0])
    with pytest.raises(DomainError):
        spectral_inequality_fit(Interior([(0.3, 0.8)]), [5.0])


def test_telescope_geometry():
    t = build_telescope(E_TEL, 1.0, 2.0, 1.5, 0.01)
    assert t.density_point == pytest.approx(0.35)
    assert t.l1 == pytest.approx(0.5125)
    assert t.measure_ok and t.containment_ok
    assert np.all(np.diff(t.nodes) < 0)
    # first block length (l1 - l)(1 - 1/a)
    assert t.critical_c1 == pytest.approx((0.5125 - 0.35) * 0.5 / 6)
    assert len(t.shifted_sets) == 20


def test_telescope_weights_nonnegative_below_critical_constant():
    # for C1 below d_1 / 6 a large enough ratio makes every f_k nonnegative
    assert build_telescope(E_TEL, 1.0, 2.0, 20.0, 0.01).all_nonnegative
    assert build_telescope(E_TEL, 1.0, 2.0, 10.0, 0.005).all_nonnegative
    # above it f_1 stays negative however large the ratio
    t = build_telescope(E_TEL, 1.0, 2.0, 200.0, 0.02)
    assert t.weight_signs[0] < 0 and np.all(t.weight_signs[1:] > 0)


def test_telescope_validation():
    with pytest.raises(DomainError):
        build_telescope(E_TEL, 1.0, 1.0, 2.0, 0.1)
    with pytest.raises(DomainError):
        build_telescope(E_TEL, 1.0, 2.0, 0.5, 0.1)
    with pytest.raises(DomainError):
        build_telescope(E_TEL, 1.0, 2.0, 2.0, -1.0)
    assert ratio_bound(0.316, 2.0, 0.1625) == pytest.approx((0.316 + 6 * np.log(12 * 0.316 * 2)) / 0.1625)


def test_null_constant_oracle():
    k = MultiplierKernel.parse("cauchy", "schrodinger")
    geo = GeometrySpec(Interior([(0.0, 1.0)]), [(0.0, 1.0)], 1.0)
    p = ControlProblem(k, geo, 6, SpectralState.zeros(6), Null())
    c = averaged_observability_constant(p, "null")
    # frozen from 40-digit evaluation of exp(-2 pi^2) 2 pi^2 / (1 - exp(-2 pi^2)), the j = 1 term
    assert c.value == pytest.approx(5.2808068403052440662e-08, rel=1e-11)
    g = assemble_gramian(p)
    ex = averaged_observability_constant(p, "exact", g)
    assert ex.value == pytest.approx(1.0 / np.linalg.eigvalsh(g.matrix)[0], rel=1e-12)
    with pytest.raises(ConfigurationError):
        averaged_observability_constant(p, "weak", g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 3.0), st.floats(0.1, 2.0))
def test_factorization_identity(seed, a, width):
    rng = np.random.default_rng(seed)
    z0 = SpectralState(rng.standard_normal(16) + 1j * rng.standard_normal(16))
    r = factorization_identity_check(a, a + width, z0, np.linspace(0, 1, 41))
    assert r.residual <= 1e-11 * max(1.0, np.abs(z0.coeffs).max())


def test_factorization_needs_distinct_bounds():
    with pytest.raises(DomainError):
        factorization_identity_check(1.0, 1.0, SpectralState.unit(1, 2), [0.0, 1.0])


def test_deterministic_fractional_gramian_entry():
    op = Interior([(0.3, 0.8)])
    G = deterministic_fractional_gramian(0.4, 5, 1.0, op)
    mu = eigenvalues(5) ** 0.4
    j, k = 1, 3
    re = quad(lambda t: np.cos((mu[j] - mu[k]) * (1 - t)), 0, 1)[0]
    im = quad(lambda t: -np.sin((mu[j] - mu[k]) * (1 - t)), 0, 1)[0]
    assert G[j, k] == pytest.approx((re + 1j * im) * op.gram(5)[j, k], rel=1e-12)
    assert G[2, 2] == pytest.approx(op.gram(5)[2, 2], rel=1e-14)


def test_fractional_study_small():
    rep = fractional_study(0.4, [4, 8], 1.0, [(0.3, 0.8)])
    assert rep.deterministic_min_eig[1] < rep.deterministic_min_eig[0]
    assert np.all(np.isfinite(rep.averaged_null_constant))
    assert np.all(rep.gaps > 0) and np.all(np.diff(rep.gaps) < 0)


def test_boundary_demo():
    rep = boundary_observability_demo(MultiplierKernel.parse("exponential", "heat"), 1.0, 0, (4, 6))
    assert rep.closed_loop_ratio < 1e-6
    assert np.all(np.diff(rep.condition_numbers) > 0)
    with pytest.raises(ConfigurationError):
        boundary_observability_demo(MultiplierKernel.parse("uniform(1,2)", "schrodinger"), 1.0, 0)
