"""Observability measurements at truncation.

Spectral-inequality constants of the interior overlap matrix, the telescoping
time-set construction used for measurable observation sets, averaged
observability constants from Gramian eigenvalues, the two-Schrodinger
factorisation identity behind the Uniform law, and the fractional and
boundary studies.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np
import scipy.linalg

from .control import ControlProblem, Null, assemble_gramian, solve_dual
from .errors import ConfigurationError, DomainError
from .geometry import GeometrySpec, normalize_intervals
from .kernels import (Cauchy, FractionalSchrodinger, Heat, MultiplierKernel, Normal, Schrodinger,
                      Uniform)
from .spectral import Boundary, Interior, SpectralState, eigenvalues, min_overlap_eigenvalue

# ---------------------------------------------------------------- spectral inequality


@dataclass(frozen=True)
class SpectralInequalityFit:
    """sigma(r) = sqrt(min eig) of the overlap matrix on modes lambda_j <= r.

    The recovery constant is 1/sigma(r); log(1/sigma) is fitted by
    c1 * sqrt(r) + offset.
    """

    thresholds: np.ndarray
    mode_counts: np.ndarray
    sigma: np.ndarray
    c1: float
    offset: float
    residual: float

    @property
    def constants(self) -> np.ndarray:
        return 1.0 / self.sigma


def spectral_inequality_fit(op: Interior, r_list, dps: int = 60) -> SpectralInequalityFit:
    if not isinstance(op, Interior):
        raise ConfigurationError("spectral inequality fit needs an interior observation region")
    r = np.sort(np.asarray(r_list, dtype=float))
    if r.size == 0:
        raise DomainError("no thresholds given")
    counts = np.floor(np.sqrt(r) / np.pi + 1e-12).astype(int)
    if np.any(counts < 1):
        raise DomainError("threshold below the first eigenvalue leaves no modes")
    cache = {}
    for n in np.unique(counts):
        cache[n] = min_overlap_eigenvalue(op, int(n), dps)
    sigma = np.sqrt(np.array([max(cache[n], 0.0) for n in counts]))
    y = -np.log(sigma)
    if np.unique(r).size >= 2:
        A = np.vstack([np.sqrt(r), np.ones_like(r)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = float(np.linalg.norm(A @ coef - y))
        c1, off = float(coef[0]), float(coef[1])
    else:
        c1 = off = resid = float("nan")
    return SpectralInequalityFit(r, counts, sigma, c1, off, resid)


# ---------------------------------------------------------------- telescope


def ratio_bound(c1: float, a: float, gap: float) -> float:
    """Lower bound on b/a: (C1 + 6 ln(12 C1 a)) / ((a - 1)(l1 - l))."""
    return (c1 + 6.0 * np.log(12.0 * c1 * a)) / ((a - 1.0) * gap)


def _measure_ok(E, hi: Fraction, lo: Fraction) -> bool:
    got = sum((max(Fraction(0), min(b, hi) - max(a, lo)) for a, b in E), Fraction(0))
    return got * 3 >= hi - lo


@dataclass(frozen=True)
class TelescopeSequence:
    density_point: float
    ratio: float
    b: float
    c1: float
    l1: float
    nodes: np.ndarray            # l_1, ..., l_{K+2}
    shifted_sets: tuple          # E_k as interval tuples, k = 1..K
    thresholds: np.ndarray       # r_k = b^{2k}
    weights: np.ndarray          # f_k in double precision (may underflow to 0)
    weight_signs: np.ndarray
    log_abs_weights: np.ndarray
    measure_ok: bool
    containment_ok: bool
    critical_c1: float           # f_1 >= 0 for large b only if C1 < this
    sharp_constant: float        # max_j exp(-lambda_j (T - l1)) (1 + lambda_j l1), j <= 64

    @property
    def all_nonnegative(self) -> bool:
        return bool(np.all(self.weight_signs >= 0))


def _choose_l1(E, T: Fraction, ell: Fraction, a: Fraction, K: int, scan: int):
    for m in range(1, scan + 1):
        l1 = ell + (T - ell) / 2**m
        nodes = [ell + (l1 - ell) / a**k for k in range(K + 2)]
        if all(_measure_ok(E, nodes[k], nodes[k + 1]) for k in range(K + 1)):
            return l1
    return None


def build_telescope(E, T: float, a: float, b_ratio: float, c1: float, K: int = 20,
                    scan: int = 60, dps: int = 50) -> TelescopeSequence:
    """Density point, node sequence, shifted sets and weights f_k for k <= K.

    The measure condition and the containment of the shifted sets are checked
    in exact rational arithmetic; the weights are evaluated with mpmath since
    their terms underflow double precision.
    """
    if a <= 1:
        raise DomainError("ratio a must exceed 1")
    if b_ratio <= 1:
        raise DomainError("b / a must exceed 1")
    if c1 <= 0:
        raise DomainError("C1 must be positive")
    ivs = normalize_intervals(E, T)
    Eq = [(Fraction(x), Fraction(y)) for x, y in ivs]
    big = max(ivs, key=lambda iv: iv[1] - iv[0])
    ell = (Fraction(big[0]) + Fraction(big[1])) / 2
    aq = Fraction(a)
    l1 = _choose_l1(Eq, Fraction(T), ell, aq, K, scan)
    if l1 is None:
        raise DomainError("no l1 satisfies the measure condition at this scan resolution")
    nodes = [ell + (l1 - ell) / aq**k for k in range(K + 2)]
    measure_ok = all(_measure_ok(Eq, nodes[k], nodes[k + 1]) for k in range(K + 1))

    shifted, contained = [], True
    for k in range(K):
        hi, lo = nodes[k], nodes[k + 1]
        d = hi - lo
        part = []
        for x, y in Eq:
            s, e = max(x, lo + d / 6), min(y, hi)
            if e > s:
                part.append((s - d / 6, e - d / 6))
        contained &= all(lo <= s and e <= lo + 5 * d / 6 for s, e in part)
        shifted.append(tuple((float(s), float(e)) for s, e in part))

    b = b_ratio * a
    signs, logs, vals = [], [], []
    with mpmath.workdps(dps):
        C = mpmath.mpf(c1)
        bm = mpmath.mpf(b)
        dd = [mpmath.mpf((nodes[k] - nodes[k + 1]).numerator) / (nodes[k] - nodes[k + 1]).denominator
              for k in range(K + 1)]
        for k in range(1, K + 1):
            sq_k, sq_next = bm**k, bm ** (k + 1)
            first = dd[k] / (6 * C * mpmath.exp(C * sq_next))
            growth = C * mpmath.exp(C * sq_k)
            second = (growth + 1) / growth * dd[k - 1] * mpmath.exp(-dd[k - 1] / 6 * bm ** (2 * k))
            f = first - second
            signs.append(int(mpmath.sign(f)))
            logs.append(float(mpmath.log(abs(f))) if f != 0 else -np.inf)
            vals.append(float(f))
    lam = eigenvalues(64)
    sharp = float(np.max(np.exp(-lam * (T - float(l1))) * (1.0 + lam * float(l1))))
    d1 = float(nodes[0] - nodes[1])
    return TelescopeSequence(
        float(ell), float(a), float(b), float(c1), float(l1),
        np.array([float(x) for x in nodes]), tuple(shifted),
        np.array([b ** (2 * k) for k in range(1, K + 1)], dtype=float),
        np.array(vals), np.array(signs), np.array(logs),
        measure_ok, contained, d1 / 6.0, sharp)


# ---------------------------------------------------------------- constants


@dataclass(frozen=True)
class ObservabilityConstant:
    value: float
    flavor: str
    singular: bool


def averaged_observability_constant(problem: ControlProblem, flavor: str = "null",
                                    gramian=None) -> ObservabilityConstant:
    """Exact: 1 / lambda_min(G_w).  Null: max_w |m(T) w|^2 / <G_w w, w>.

    In the weighted frame the V' norm of avg z(0) is the Euclidean norm of
    m(T) w, so the null constant is the top generalised eigenvalue of
    (diag |m_j(T)|^2, G_w).
    """
    if gramian is None:
        gramian = assemble_gramian(problem)
    G = gramian.matrix
    gnorm = max(gramian.norm, 1e-300)
    if flavor == "exact":
        lo = float(np.linalg.eigvalsh(G)[0])
        if lo <= 1e-15 * gnorm:
            return ObservabilityConstant(float("inf"), flavor, True)
        return ObservabilityConstant(1.0 / lo, flavor, False)
    if flavor != "null":
        raise ConfigurationError(f"unknown observability flavor {flavor!r}")
    lam = eigenvalues(problem.mode_count)
    D = np.diag(np.abs(problem.kernel(lam, problem.geometry.horizon)) ** 2)
    try:
        top = scipy.linalg.eigh(D, G, eigvals_only=True)[-1]
    except np.linalg.LinAlgError:
        return ObservabilityConstant(float("inf"), flavor, True)
    return ObservabilityConstant(float(top), flavor, False)


# ---------------------------------------------------------------- factorisation


@dataclass(frozen=True)
class FactorizationResult:
    trace_residual: float       # t * averaged trace vs (z_a - z_b) / (b - a)
    symbol_residual: float      # (i d_t + b Delta)(z_a - z_b) vs i (b - a) exp(-i a lambda t) z0
    equation_residual: float    # (i d_t + a Delta) of that solution

    @property
    def residual(self) -> float:
        return max(self.trace_residual, self.symbol_residual, self.equation_residual)


def factorization_identity_check(a: float, b: float, z0: SpectralState, grid) -> FactorizationResult:
    """Uniform-law trace as a difference of two Schrodinger flows.

    With z_a = z0 / (i lambda) exp(-i lambda a t), t times the averaged trace
    equals (z_a - z_b) / (b - a).  Applying i d_t + b Delta (exactly, mode by
    mode) to z_a - z_b kills z_b and leaves phi = i (b - a) z0 exp(-i lambda a t),
    which solves i phi_t + a Delta phi = 0.
    """
    if a == b:
        raise DomainError("the factorisation needs a != b")
    lo, hi = min(a, b), max(a, b)
    kernel = MultiplierKernel(Uniform(lo, hi), Schrodinger())
    t = np.asarray(grid.nodes if hasattr(grid, "nodes") else grid, dtype=float)[:, None]
    lam = eigenvalues(z0.mode_count)[None, :]
    z = z0.coeffs[None, :]
    za = z / (1j * lam) * np.exp(-1j * lam * a * t)
    zb = z / (1j * lam) * np.exp(-1j * lam * b * t)
    avg = kernel(lam, t) * z
    r1 = np.max(np.abs(t * avg - (za - zb) / (b - a)))
    # spectral symbols: d_t -> -i lambda c on exp(-i lambda c t), Delta -> -lambda
    applied = (lam * a - b * lam) * za + (lam * b - b * lam) * zb
    phi = 1j * (b - a) * z * np.exp(-1j * lam * a * t)
    r2 = np.max(np.abs(applied - phi))
    r3 = np.max(np.abs(lam * a * phi - a * lam * phi))
    return FactorizationResult(float(r1), float(r2), float(r3))


# ---------------------------------------------------------------- fractional


@dataclass(frozen=True)
class FractionalReport:
    gamma: float
    mode_counts: tuple
    deterministic_min_eig: np.ndarray
    averaged_null_constant: np.ndarray
    averaged_min_eig: np.ndarray
    gaps: np.ndarray

    @property
    def deterministic_drop(self) -> float:
        return float(self.deterministic_min_eig[0] / self.deterministic_min_eig[-1])

    @property
    def averaged_band(self) -> float:
        c = self.averaged_null_constant
        return float(c.max() / c.min())


def deterministic_fractional_gramian(gamma: float, n: int, T: float, op: Interior,
                                     time_set=None) -> np.ndarray:
    """Gramian of the alpha = 1 fractional Schrodinger flow, integrated in closed form."""
    mu = eigenvalues(n) ** gamma
    ivs = [(0.0, T)] if time_set is None else normalize_intervals(time_set, T)
    dmu = mu[:, None] - mu[None, :]
    total = np.zeros((n, n), dtype=complex)
    small = np.abs(dmu) < 1e-300
    safe = np.where(small, 1.0, dmu)
    for lo, hi in ivs:
        # int_lo^hi exp(-i dmu (T - t)) dt
        val = (np.exp(-1j * safe * (T - hi)) - np.exp(-1j * safe * (T - lo))) / (1j * safe)
        total += np.where(small, hi - lo, val)
    G = op.gram(n) * total
    return 0.5 * (G + G.conj().T)


def fractional_study(gamma: float, N_list, T: float, G0, time_set=None) -> FractionalReport:
    kernel = MultiplierKernel(Normal(), FractionalSchrodinger(gamma))
    op = Interior(G0)
    E = [(0.0, T)] if time_set is None else time_set
    det, avg, avg_min = [], [], []
    for n in N_list:
        det.append(float(np.linalg.eigvalsh(deterministic_fractional_gramian(gamma, n, T, op, E))[0]))
        geo = GeometrySpec(op, E, T)
        problem = ControlProblem(kernel, geo, n, SpectralState.zeros(n), Null())
        g = assemble_gramian(problem)
        avg.append(averaged_observability_constant(problem, "null", g).value)
        avg_min.append(float(np.linalg.eigvalsh(g.matrix)[0]))
    j = np.arange(1, max(N_list) + 1)
    gaps = ((j + 1) * np.pi) ** (2 * gamma) - (j * np.pi) ** (2 * gamma)
    return FractionalReport(float(gamma), tuple(int(n) for n in N_list), np.array(det), np.array(avg),
                            np.array(avg_min), gaps)


# ---------------------------------------------------------------- boundary


@dataclass(frozen=True)
class BoundaryReport:
    mode_counts: tuple
    null_constants: np.ndarray
    condition_numbers: np.ndarray
    min_eigenvalues: np.ndarray
    closed_loop_ratio: float
    control_norm: float
    converged: bool


def _boundary_admissible(kernel: MultiplierKernel) -> bool:
    if isinstance(kernel.kind, Heat):
        return True
    return isinstance(kernel.kind, Schrodinger) and isinstance(kernel.law, (Normal, Cauchy))


def boundary_observability_demo(kernel: MultiplierKernel, T: float, endpoint: int,
                                N_list=(4, 8, 12), y0: SpectralState | None = None,
                                time_set=None) -> BoundaryReport:
    """Boundary Gramians over N, then a boundary null control at the largest N."""
    if not _boundary_admissible(kernel):
        raise ConfigurationError("boundary study needs a heat kernel or Schrodinger with Normal/Cauchy")
    E = [(0.0, T)] if time_set is None else time_set
    geo = GeometrySpec(Boundary(endpoint), E, T)
    consts, conds, mins = [], [], []
    last = None
    for n in N_list:
        p = ControlProblem(kernel, geo, n, SpectralState.zeros(n), Null())
        g = assemble_gramian(p)
        ev = np.linalg.eigvalsh(g.matrix)
        consts.append(averaged_observability_constant(p, "null", g).value)
        conds.append(float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf"))
        mins.append(float(ev[0]))
        last = (n, g)
    n, g = last
    if y0 is None:
        y0 = SpectralState(1.0 / np.arange(1, n + 1))
    p = ControlProblem(kernel, geo, n, y0, Null())
    sol = solve_dual(p, g)
    ratio = float(np.linalg.norm(sol.final_state.coeffs) / y0.norm(0))
    return BoundaryReport(tuple(int(k) for k in N_list), np.array(consts), np.array(conds), np.array(mins),
                          ratio, sol.diagnostics.control_norm, sol.diagnostics.converged)


__all__ = [
    "SpectralInequalityFit", "spectral_inequality_fit", "ratio_bound", "TelescopeSequence",
    "build_telescope", "ObservabilityConstant", "averaged_observability_constant",
    "FactorizationResult", "factorization_identity_check", "FractionalReport", "fractional_study",
    "deterministic_fractional_gramian", "BoundaryReport", "boundary_observability_demo",
]
