"""Acceptance criteria 1-10 at their stated tolerances, one verdict line each."""

import time

import numpy as np
import pytest

from avgcontrol.control import ControlProblem, Exact, Null, assemble_gramian, minimal_norm_check, solve_dual, \
    target_tolerance
from avgcontrol.dynamics import propagate_free, transport_average_demo
from avgcontrol.finite_dim import finite_dim_averaged_demo
from avgcontrol.geometry import GeometrySpec, TimeGrid
from avgcontrol.kernels import MultiplierKernel, admissible_kernels
from avgcontrol.montecarlo import McConfig, mc_controlled_average, mc_multiplier_grid
from avgcontrol.observability import (build_telescope, factorization_identity_check, fractional_study, ratio_bound,
                                      spectral_inequality_fit)
from avgcontrol.spectral import Interior, SpectralState, eigenvalues

G0 = [(0.3, 0.8)]
E = [(0.0, 0.4), (0.6, 1.0)]


def geometry():
    return GeometrySpec(Interior(G0), E, 1.0)


@pytest.fixture(scope="module")
def null_run():
    start = time.perf_counter()
    n = 24
    y0 = SpectralState(np.r_[1.0 / np.arange(1, 9), np.zeros(n - 8)])
    problem = ControlProblem(MultiplierKernel.parse("exponential", "heat"), geometry(), n, y0, Null())
    g = assemble_gramian(problem)
    sol = solve_dual(problem, g)
    est = mc_controlled_average(problem, sol.control, McConfig(10**4, 20240611))
    return problem, g, sol, est, time.perf_counter() - start


@pytest.fixture(scope="module")
def exact_run():
    start = time.perf_counter()
    n = 16
    problem = ControlProblem(MultiplierKernel.parse("exponential", "schrodinger"), geometry(), n,
                             SpectralState.unit(1, n), Exact(SpectralState.unit(2, n)), space_index=2.0)
    g = assemble_gramian(problem)
    sol = solve_dual(problem, g)
    return problem, g, sol, time.perf_counter() - start


def test_criterion_01_multiplier_oracle(verdict):
    start = time.perf_counter()
    lam = np.pi**2 * np.array([1.0, 4.0, 25.0])
    L, T = [a.ravel() for a in np.meshgrid(lam, [0.05, 0.3, 1.0], indexing="ij")]
    cfg = McConfig(10**6, 20240611)
    worst = 0.0
    for k in admissible_kernels():
        for est, l, t in zip(mc_multiplier_grid(k, L, T, cfg), L, T):
            # |closed form - MC mean| <= 5 sd / sqrt(n), n = 10^6
            worst = max(worst, est.z_score(k(l, t)))
    elapsed = time.perf_counter() - start
    ok = worst <= 5.0 and elapsed <= 120.0
    verdict(1, ok, f"{len(admissible_kernels())} pairs, max z = {worst:.2f}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_null_control(verdict, null_run):
    problem, _, sol, est, elapsed = null_run
    ratio = np.linalg.norm(sol.final_state.coeffs) / problem.y0.norm(0)
    z = est.z_scores(SpectralState.zeros(problem.mode_count)).max()
    ok = ratio <= 1e-6 and z <= 5.0 and elapsed <= 30.0
    verdict(2, ok, f"||avg y(T)|| / ||y0|| = {ratio:.2e}, MC max z = {z:.2f}, {elapsed:.1f} s")
    assert ok


def test_criterion_03_exact_control(verdict, exact_run):
    problem, _, sol, elapsed = exact_run
    d = sol.diagnostics
    tol = target_tolerance(problem)
    ok = d.achieved_error <= tol and d.duality_gap <= 1e-8 * d.control_norm**2 and elapsed <= 30.0
    verdict(3, ok, f"V error {d.achieved_error:.2e} (tol {tol:.1e}), gap {d.duality_gap:.2e}, "
                   f"||u||^2 = {d.control_norm**2:.3e}, {elapsed:.1f} s")
    assert ok


def test_criterion_04_cauchy_heat(verdict):
    n = 32
    y0 = SpectralState(1.0 / np.arange(1, n + 1))
    grid = TimeGrid.uniform(1.0, 20)
    traj = propagate_free(y0, MultiplierKernel.parse("cauchy", "schrodinger"), grid)
    heat = np.exp(-eigenvalues(n)[None, :] * grid.nodes[:, None]) * y0.coeffs[None, :]
    err = float(np.max(np.abs(traj.coeffs - heat)))
    ok = err <= 1e-14
    verdict(4, ok, f"max coefficient difference {err:.1e}")
    assert ok


def test_criterion_05_factorization(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        z0 = SpectralState(rng.standard_normal(16) + 1j * rng.standard_normal(16))
        worst = max(worst, factorization_identity_check(1.0, 2.0, z0, np.linspace(0.0, 1.0, 41)).residual)
    ok = worst <= 1e-11
    verdict(5, ok, f"max residual {worst:.1e}")
    assert ok


def test_criterion_06_telescope(verdict):
    fit = spectral_inequality_fit(Interior(G0), [(n * np.pi) ** 2 for n in range(2, 49, 2)])
    E_tel = [(0.2, 0.5), (0.7, 0.9)]
    probe = build_telescope(E_tel, 1.0, 2.0, 2.0, fit.c1)
    bound = ratio_bound(fit.c1, 2.0, probe.l1 - probe.density_point)
    satisfied = build_telescope(E_tel, 1.0, 2.0, 2.0 * bound, fit.c1)
    violated = build_telescope(E_tel, 1.0, 2.0, bound / 10.0, fit.c1)
    nonneg = satisfied.all_nonnegative and satisfied.measure_ok and satisfied.containment_ok
    sensitive = bool(np.any(violated.weight_signs < 0))
    ok = nonneg and sensitive
    verdict(6, ok, f"C1 = {fit.c1:.3f}, b/a = {2.0 * bound:.1f}: f_k >= 0 for k <= 20 is {nonneg} "
                   f"(f_1 sign {satisfied.weight_signs[0]:+d}; needs C1 < {satisfied.critical_c1:.4f}); "
                   f"10x violation gives a negative f_k: {sensitive}")
    assert sensitive
    assert nonneg


def test_criterion_07_fractional(verdict):
    rep = fractional_study(0.4, [8, 16, 24, 32], 1.0, G0)
    det = rep.deterministic_min_eig
    monotone = bool(np.all(np.diff(det) < 0))
    ok = monotone and rep.deterministic_drop >= 10.0 and rep.averaged_band <= 2.0
    verdict(7, ok, f"deterministic min eig {det[0]:.2e} -> {det[-1]:.2e} (drop {rep.deterministic_drop:.0f}x), "
                   f"averaged null constant band {rep.averaged_band:.2f}x")
    assert ok


def test_criterion_08_transport(verdict):
    hs = [1 / 64, 1 / 128, 1 / 256]
    norms = np.array([transport_average_demo(0.5, h).residual_norm for h in hs])
    orders = np.log2(norms[:-1] / norms[1:])
    ok = bool(np.all(orders >= 1.8))
    verdict(8, ok, f"residuals {', '.join(f'{v:.2e}' for v in norms)}, orders {', '.join(f'{o:.2f}' for o in orders)}")
    assert ok


def test_criterion_09_finite_dim(verdict):
    rep = finite_dim_averaged_demo((1.0, 0.0))
    avg = float(np.linalg.norm(rep.averaged_final))
    ok = avg < 1e-10 and rep.stacked_residual > 0.1
    verdict(9, ok, f"averaged final {avg:.1e}, stacked residual {rep.stacked_residual:.4f}")
    assert ok


def test_criterion_10_minimal_norm(verdict, null_run, exact_run):
    worst = np.inf
    for problem, g, sol in (null_run[:3], exact_run[:3]):
        rep = minimal_norm_check(sol, problem, 32, seed=10, gramian=g)
        worst = min(worst, rep.margins.min(), rep.scaled_margins.min())
    ok = worst >= -1e-10
    verdict(10, ok, f"smallest norm margin over 64 perturbations {worst:.3e}")
    assert ok
