import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import quad_vec

from avgcontrol.finite_dim import A, B, averaged_gramian, finite_dim_averaged_demo


def test_gramian_against_quadrature():
    bbar = 1.5 * B
    want, _ = quad_vec(lambda s: np.outer(scipy.linalg.expm(A * (1 - s)) @ bbar,
                                          scipy.linalg.expm(A * (1 - s)) @ bbar), 0, 1, epsabs=1e-14)
    assert np.allclose(averaged_gramian(1.0, bbar), want, rtol=1e-11, atol=1e-13)


def test_average_is_nulled_but_not_every_realisation():
    r = finite_dim_averaged_demo()
    assert r.averaged_ok
    assert np.linalg.norm(r.averaged_final) < 1e-10
    assert max(np.linalg.norm(f) for f in r.realisation_finals) > 0.1
    # A y0 = 0, so the free part stays (1, 0) and the stacked system cannot cancel it
    assert r.stacked_residual == pytest.approx(1 / np.sqrt(5), rel=1e-12)
    assert r.stacked_residual_discrete == pytest.approx(1 / np.sqrt(5), rel=1e-9)
    assert r.simultaneous_infeasible


def test_zero_data():
    r = finite_dim_averaged_demo((0.0, 0.0))
    assert r.control_norm == 0.0
    assert r.stacked_residual == 0.0
