"""Averaged free and controlled dynamics, the averaged adjoint trace, and the
Gaussian-averaged transport demo."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import GeometrySpec, Quadrature, TimeGrid, clip_intervals, time_quadrature
from .kernels import MultiplierKernel
from .spectral import SpectralState, eigenvalues


@dataclass(frozen=True)
class AveragedTrajectory:
    grid: TimeGrid
    coeffs: np.ndarray  # (nodes, modes)
    sobolev_index: float = 0.0

    @property
    def states(self) -> list[SpectralState]:
        return [SpectralState(c, self.sobolev_index) for c in self.coeffs]

    @property
    def final(self) -> SpectralState:
        return SpectralState(self.coeffs[-1], self.sobolev_index)

    def rows(self):
        """(t, j, re, im) rows in node-major order."""
        for t, c in zip(self.grid.nodes, self.coeffs):
            for j, v in enumerate(c, start=1):
                yield float(t), j, float(v.real), float(v.imag)


def propagate_free(y0: SpectralState, kernel: MultiplierKernel, grid: TimeGrid) -> AveragedTrajectory:
    """Coefficient-wise y_j(t) = m_j(t) y0_j at every grid node."""
    lam = eigenvalues(y0.mode_count)
    m = kernel(lam[None, :], grid.nodes[:, None])
    return AveragedTrajectory(grid, m * y0.coeffs[None, :], y0.sobolev_index)


# ---------------------------------------------------------------- controls


@dataclass(frozen=True)
class ControlField:
    """Control values at the quadrature nodes of the time set.

    values has shape (nodes, p) where p is the control dimension of the
    observation operator (N for interior control, 1 for boundary control).
    An optional evaluator gives the control at arbitrary times, which is needed
    for intermediate states of a trajectory.
    """

    quadrature: Quadrature
    values: np.ndarray
    evaluator: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.ndim != 2 or v.shape[0] != len(self.quadrature):
            raise DomainError("control values must have shape (quadrature nodes, control dim)")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, quadrature: Quadrature, dim: int) -> "ControlField":
        return cls(quadrature, np.zeros((len(quadrature), dim)), lambda s: np.zeros((np.size(s), dim)))

    def _combine(self, other: "ControlField", fn) -> "ControlField":
        if self.quadrature is not other.quadrature and not (
                np.array_equal(self.quadrature.nodes, other.quadrature.nodes)
                and np.array_equal(self.quadrature.weights, other.quadrature.weights)):
            raise DomainError("controls live on different quadratures")
        ev = None
        if self.evaluator is not None and other.evaluator is not None:
            e1, e2 = self.evaluator, other.evaluator
            ev = lambda s: fn(e1(s), e2(s))  # noqa: E731
        return ControlField(self.quadrature, fn(self.values, other.values), ev)

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, c):
        ev = None if self.evaluator is None else (lambda s, e=self.evaluator: c * e(s))
        return ControlField(self.quadrature, c * self.values, ev)

    __rmul__ = __mul__

    def norm_sq(self, norm_matrix: np.ndarray) -> float:
        """Squared L2(E; U) norm by the control's own quadrature."""
        v = self.values
        inner = np.einsum("qi,ij,qj->q", v.conj(), norm_matrix, v).real
        return float(np.dot(self.quadrature.weights, inner))

    def rows(self):
        """(t, j, re, im) rows; j indexes control components from 1."""
        for t, c in zip(self.quadrature.nodes, self.values):
            for j, v in enumerate(c, start=1):
                yield float(t), j, float(v.real), float(v.imag)


def duhamel(kernel: MultiplierKernel, lam: np.ndarray, t: float, nodes, weights, forcing):
    """sum_q w_q m(lam, t - s_q) * forcing_q, i.e. int m(t - s) (Bu)(s) ds."""
    if len(nodes) == 0:
        return np.zeros(lam.size, dtype=complex)
    m = kernel(lam[None, :], (t - nodes)[:, None])
    return np.sum(weights[:, None] * m * forcing, axis=0)


def _check_support(geometry: GeometrySpec, u: ControlField):
    if not np.all(geometry.contains(u.quadrature.nodes)):
        raise DomainError("control is supported outside the time set E")


def controlled_final_state(y0: SpectralState, kernel: MultiplierKernel, geometry: GeometrySpec,
                           u: ControlField, weights: np.ndarray | None = None) -> SpectralState:
    """Averaged state at T: m(T) y0 + int_E m(T - s) (B u(s)) ds."""
    _check_support(geometry, u)
    n = y0.mode_count
    lam = eigenvalues(n)
    T = geometry.horizon
    forcing = u.values @ geometry.observation.input_matrix(n).T
    y = kernel(lam, T) * y0.coeffs + duhamel(kernel, lam, T, u.quadrature.nodes, u.quadrature.weights, forcing)
    return SpectralState(y, y0.sobolev_index)


def propagate_controlled(y0: SpectralState, kernel: MultiplierKernel, geometry: GeometrySpec,
                         u: ControlField, grid: TimeGrid) -> AveragedTrajectory:
    """Averaged state with the control folded in by Duhamel's formula.

    The value at T reuses the control's own quadrature (so it is consistent
    with the Gramian it came from); intermediate nodes integrate the control's
    evaluator over E intersected with [0, t].
    """
    _check_support(geometry, u)
    T = geometry.horizon
    if not np.isclose(grid.horizon, T, rtol=0, atol=1e-14):
        raise DomainError("trajectory grid must end at the control horizon")
    n = y0.mode_count
    lam = eigenvalues(n)
    B = geometry.observation.input_matrix(n)
    out = np.empty((grid.nodes.size, n), dtype=complex)
    for i, t in enumerate(grid.nodes):
        if i == grid.nodes.size - 1:
            out[i] = controlled_final_state(y0, kernel, geometry, u).coeffs
            continue
        free = kernel(lam, t) * y0.coeffs
        part = clip_intervals(geometry.time_set, 0.0, t)
        if not part:
            out[i] = free
            continue
        if u.evaluator is None:
            raise ConfigurationError("nodal-only control: intermediate states need an evaluator")
        q = time_quadrature(part, t, kernel, n, grid.order)
        forcing = np.asarray(u.evaluator(q.nodes)) @ B.T
        out[i] = free + duhamel(kernel, lam, t, q.nodes, q.weights, forcing)
    return AveragedTrajectory(grid, out, y0.sobolev_index)


# ---------------------------------------------------------------- adjoint


@dataclass(frozen=True)
class ObservedTrace:
    times: np.ndarray
    values: np.ndarray  # (nodes, control dim), zero outside E
    in_time_set: np.ndarray


def averaged_adjoint(z0: SpectralState, kernel: MultiplierKernel, horizon: float, times) -> np.ndarray:
    """Coefficients of the averaged adjoint at each time: conj(m_j(T - t)) z0_j.

    The adjoint of a single realisation runs backwards from z(T) = z0 with the
    conjugate factor, so averaging gives the conjugate multiplier.
    """
    lam = eigenvalues(z0.mode_count)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return np.conj(kernel(lam[None, :], (horizon - times)[:, None])) * z0.coeffs[None, :]


def adjoint_average_trace(z0: SpectralState, kernel: MultiplierKernel, geometry: GeometrySpec,
                          grid: TimeGrid | np.ndarray) -> ObservedTrace:
    """chi_E(t) times the observed averaged adjoint at the grid nodes."""
    times = grid.nodes if isinstance(grid, TimeGrid) else np.atleast_1d(np.asarray(grid, dtype=float))
    if np.any(times < 0) or np.any(times > geometry.horizon):
        raise DomainError("trace times must lie in [0, T]")
    inside = geometry.contains(times)
    z = averaged_adjoint(z0, kernel, geometry.horizon, times)
    obs = z @ geometry.observation.output_matrix(z0.mode_count).T
    return ObservedTrace(times, np.where(inside[:, None], obs, 0.0), inside)


# ---------------------------------------------------------------- classification


class DynamicsClass(enum.Enum):
    PARABOLIC_LIKE = "ParabolicLike"
    CONSERVATIVE = "Conservative"
    INDETERMINATE = "Indeterminate"


EXP_SLOPE = 0.5
MIN_R2 = 0.9


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return coef[0], r2


@dataclass(frozen=True)
class Classification:
    label: DynamicsClass
    exp_slope: float
    exp_r2: float
    power_slope: float
    power_r2: float
    growth_exponent: float = np.nan
    growth_r2: float = np.nan


def classify_dynamics(kernel: MultiplierKernel, lambda_max: float, horizon: float) -> Classification:
    """Heat-like (at least exponential decay in sqrt(lambda) T) versus Schrodinger-like.

    Uses the upper envelope of log|m(lambda_j, T)| over the Dirichlet
    eigenvalues up to lambda_max, fitted against sqrt(lambda) T and against
    log lambda.  Super-exponential decay (Gaussian averages) fits a straight
    line in sqrt(lambda) T poorly, so the decision also uses the growth
    exponent p of -log|m| ~ c (sqrt(lambda) T)^p: p >= 1 is at least
    exponential, while polynomial decay gives a flat log-log profile.
    """
    jmax = int(np.floor(np.sqrt(lambda_max) / np.pi))
    if jmax < 3:
        return Classification(DynamicsClass.INDETERMINATE, np.nan, np.nan, np.nan, np.nan)
    lam = eigenvalues(jmax)
    logm = np.asarray(kernel.log_abs(lam, horizon), dtype=float)
    # running max from the top removes isolated zeros (Uniform law)
    env = np.maximum.accumulate(logm[::-1])[::-1]
    x = np.sqrt(lam) * horizon
    exp_slope, exp_r2 = _linfit(x, env)
    pow_slope, pow_r2 = _linfit(np.log(lam), env)
    decay = -env
    ok = decay > 0
    growth, growth_r2 = (_linfit(np.log(x[ok]), np.log(decay[ok])) if ok.sum() >= 3 else (np.nan, 0.0))
    heat_like = exp_slope < -EXP_SLOPE and (
        (exp_r2 >= MIN_R2 and exp_r2 >= pow_r2) or (growth >= 1.0 and growth_r2 >= max(MIN_R2, pow_r2)))
    if heat_like:
        label = DynamicsClass.PARABOLIC_LIKE
    elif pow_r2 >= MIN_R2:
        label = DynamicsClass.CONSERVATIVE
    else:
        label = DynamicsClass.INDETERMINATE
    return Classification(label, float(exp_slope), float(exp_r2), float(pow_slope), float(pow_r2),
                          float(growth), float(growth_r2))


# ---------------------------------------------------------------- transport demo


def default_profile(z):
    """(1 - z^2)^4 on [-1, 1], zero outside."""
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1.0, (1.0 - z**2) ** 4, 0.0)


def gaussian_average(y0: Callable, x, t: float, support=(-1.0, 1.0), nodes: int = 256, panels: int = 8):
    """Average of y0(x - alpha t) over a standard normal alpha.

    Equals the convolution of y0 with the N(0, t^2) density, integrated by
    composite Gauss-Legendre over the support of y0.
    """
    x = np.asarray(x, dtype=float)
    if t == 0:
        return np.asarray(y0(x), dtype=float)
    if t < 0:
        raise DomainError("time must be nonnegative")
    g, w = np.polynomial.legendre.leggauss(nodes // panels)
    edges = np.linspace(support[0], support[1], panels + 1)
    z = np.concatenate([0.5 * (a + b) + 0.5 * (b - a) * g for a, b in zip(edges[:-1], edges[1:])])
    wz = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
    vals = wz * y0(z)
    kern = np.exp(-((x[:, None] - z[None, :]) ** 2) / (2.0 * t * t)) / (np.sqrt(2.0 * np.pi) * t)
    return kern @ vals


@dataclass(frozen=True)
class TransportResult:
    x: np.ndarray
    averaged: np.ndarray
    residual: np.ndarray | None
    residual_norm: float | None
    h: float
    t: float


def transport_average_demo(t: float, h: float, y0: Callable = default_profile, support=(-1.0, 1.0),
                           time_step: float | None = None) -> TransportResult:
    """Averaged transport field at time t and its heat-equation residual.

    phi(x, s) = averaged(x, sqrt(2 s)) is evaluated at s = t^2 / 2 and s +- dt,
    and r = (phi(s+dt) - phi(s-dt)) / (2 dt) - D_h^2 phi(s) is returned along
    with its discrete L2 norm.  dt defaults to h / 4.
    """
    if h <= 0:
        raise DomainError("grid spacing must be positive")
    half = max(abs(support[0]), abs(support[1]))
    L = half + 6.0 * (half + t)
    n = int(np.ceil(L / h))
    x = h * np.arange(-n, n + 1)
    avg = gaussian_average(y0, x, t, support)
    if t == 0:
        return TransportResult(x, avg, None, None, h, t)
    s = 0.5 * t * t
    dt = h / 4.0 if time_step is None else time_step
    if dt >= s:
        raise DomainError("time step too large for the requested time")
    up = gaussian_average(y0, x, np.sqrt(2.0 * (s + dt)), support)
    dn = gaussian_average(y0, x, np.sqrt(2.0 * (s - dt)), support)
    lap = (avg[2:] - 2.0 * avg[1:-1] + avg[:-2]) / (h * h)
    r = (up[1:-1] - dn[1:-1]) / (2.0 * dt) - lap
    return TransportResult(x, avg, r, float(np.sqrt(h * np.sum(r**2))), h, t)
