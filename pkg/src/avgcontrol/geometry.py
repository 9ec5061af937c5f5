"""Control geometry (region and time set) and Gauss-Legendre time quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .kernels import MultiplierKernel
from .spectral import ObservationOperator

PARABOLIC_RESOLUTION = 4.0
CONSERVATIVE_RESOLUTION = 1.0
NEGLIGIBLE = 1e-18


def normalize_intervals(intervals: Sequence[Sequence[float]], horizon: float) -> tuple:
    ivs = tuple(sorted((float(a), float(b)) for a, b in intervals))
    for a, b in ivs:
        if not 0.0 <= a < b <= horizon:
            raise DomainError(f"time interval ({a}, {b}) not inside [0, {horizon}]")
    for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
        if a1 < b0:
            raise DomainError("time intervals overlap")
    return ivs


def measure(intervals) -> float:
    return float(sum(b - a for a, b in intervals))


def intersect_measure(intervals, lo: float, hi: float) -> float:
    """Lebesgue measure of (union of intervals) intersected with (lo, hi)."""
    return float(sum(max(0.0, min(b, hi) - max(a, lo)) for a, b in intervals))


def clip_intervals(intervals, lo: float, hi: float) -> tuple:
    out = []
    for a, b in intervals:
        a2, b2 = max(a, lo), min(b, hi)
        if b2 > a2:
            out.append((a2, b2))
    return tuple(out)


@dataclass(frozen=True)
class GeometrySpec:
    """Observation/control region, time set E within [0, T], and horizon T."""

    observation: ObservationOperator
    time_set: tuple
    horizon: float

    def __init__(self, observation: ObservationOperator, time_set, horizon: float):
        if horizon <= 0:
            raise DomainError("horizon must be positive")
        ivs = normalize_intervals(time_set, horizon)
        if measure(ivs) <= 0:
            raise DomainError("time set must have positive measure")
        object.__setattr__(self, "observation", observation)
        object.__setattr__(self, "time_set", ivs)
        object.__setattr__(self, "horizon", float(horizon))

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        inside = np.zeros(t.shape, dtype=bool)
        for a, b in self.time_set:
            inside |= (t >= a) & (t <= b)
        return inside

    def describe(self) -> dict:
        obs = self.observation
        if hasattr(obs, "intervals"):
            o = {"interior": [list(iv) for iv in obs.intervals]}
        else:
            o = {"boundary": obs.endpoint}
        return {"observation": o, "time_set": [list(iv) for iv in self.time_set], "T": self.horizon}


@dataclass(frozen=True)
class TimeGrid:
    """Monotone nodes 0 = t_0 < ... < t_n = T with a per-interval Gauss order."""

    nodes: np.ndarray
    order: int = 8

    def __post_init__(self):
        n = np.array(self.nodes, dtype=float).reshape(-1)
        if n.size < 1 or n[0] != 0.0:
            raise DomainError("time grid must start at 0")
        if np.any(np.diff(n) <= 0):
            raise DomainError("time grid must be strictly increasing")
        if self.order < 2:
            raise DomainError("quadrature order must be at least 2")
        n.flags.writeable = False
        object.__setattr__(self, "nodes", n)

    @classmethod
    def uniform(cls, horizon: float, count: int, order: int = 8) -> "TimeGrid":
        return cls(np.linspace(0.0, horizon, count), order)

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])


@dataclass(frozen=True)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray
    panels: tuple

    def __len__(self):
        return self.nodes.size


def gauss_panels(panels, order: int) -> Quadrature:
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in panels:
        h = 0.5 * (b - a)
        nodes.append(a + h * (x + 1.0))
        weights.append(h * w)
    if not panels:
        return Quadrature(np.zeros(0), np.zeros(0), ())
    return Quadrature(np.concatenate(nodes), np.concatenate(weights), tuple(panels))


def _needs_split(kernel: MultiplierKernel, nu: np.ndarray, lo: float, hi: float, horizon: float,
                 threshold: float) -> bool:
    width = hi - lo
    tau_near = max(horizon - hi, 0.0)
    if kernel.parabolic:
        # singularities of m sit about one unit of tau off the real axis, so
        # panels next to t = T are graded down to width ~ 1 / nu
        threshold = np.minimum(threshold, 1.0 + kernel.rate_scale * nu * tau_near)
    fast = kernel.rate_scale * nu * width > threshold
    if not np.any(fast):
        return False
    if not kernel.parabolic:
        return True
    # decaying kernels: modes that are already negligible on this panel need no resolution
    logm = kernel.log_abs_tau(nu[fast] * tau_near)
    return bool(np.any(logm > np.log(NEGLIGIBLE)))


def panels_for(intervals, horizon: float, kernel: MultiplierKernel, lam_max: float,
               lam: np.ndarray | None = None) -> list:
    """Subdivide each interval until every non-negligible mode is resolved.

    Resolution means rate * nu * width <= 4 for decaying kernels and <= 1 for
    oscillatory ones, with nu the mode frequency.  For decaying kernels panels
    touching t = T are graded further (width <= 1 + rate * nu * (T - t) in
    units of 1 / nu) and panels far from T are left coarse once the fast modes
    are below 1e-18 there.
    """
    if lam is None:
        lam = np.array([lam_max])
    nu = np.asarray(kernel.frequency(lam), dtype=float)
    threshold = PARABOLIC_RESOLUTION if kernel.parabolic else CONSERVATIVE_RESOLUTION
    panels = []
    for a, b in intervals:
        if not kernel.parabolic:
            count = max(1, int(np.ceil(kernel.rate_scale * nu.max() * (b - a) / threshold)))
            edges = np.linspace(a, b, count + 1)
            panels.extend(zip(edges[:-1], edges[1:]))
            continue
        stack = [(a, b)]
        done = []
        while stack:
            lo, hi = stack.pop()
            if _needs_split(kernel, nu, lo, hi, horizon, threshold):
                mid = 0.5 * (lo + hi)
                stack.append((mid, hi))
                stack.append((lo, mid))
            else:
                done.append((lo, hi))
        panels.extend(sorted(done))
    return [(float(lo), float(hi)) for lo, hi in panels]


def time_quadrature(intervals, horizon: float, kernel: MultiplierKernel, mode_count: int,
                    order: int = 8) -> Quadrature:
    """Composite Gauss-Legendre rule on the time set, resolved for modes 1..N."""
    from .spectral import eigenvalues

    lam = eigenvalues(mode_count)
    return gauss_panels(panels_for(intervals, horizon, kernel, lam[-1], lam), order)
