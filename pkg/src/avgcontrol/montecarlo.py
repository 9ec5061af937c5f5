"""Monte Carlo ground truth for the averaged multipliers and closed loops.

Samples are generated in fixed-size blocks; block i always draws from
Philox seeded by (base_seed, i), so the sample set does not depend on how
blocks are spread over workers.  Block statistics are merged in block order
(Chan et al. pairwise update), which makes every estimate bit-identical for
any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .control import ControlProblem
from .dynamics import ControlField
from .errors import ConfigurationError
from .kernels import (Cauchy, ChiSquared, Exponential, Laplace, MultiplierKernel, Normal,
                      ParameterLaw, Uniform)
from .spectral import SpectralState, eigenvalues

BLOCK = 8192
Z_GATE = 5.0


@dataclass(frozen=True)
class McConfig:
    sample_count: int = 10**6
    base_seed: int = 20240611
    worker_count: int = 1
    block_size: int = BLOCK

    def __post_init__(self):
        if self.sample_count < 1:
            raise ConfigurationError("sample count must be positive")
        if self.worker_count < 1:
            raise ConfigurationError("worker count must be positive")
        if self.block_size < 2:
            raise ConfigurationError("block size must be at least 2")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigurationError("base seed must be an unsigned 64-bit integer")

    def blocks(self) -> list[tuple[int, int]]:
        full, rest = divmod(self.sample_count, self.block_size)
        sizes = [self.block_size] * full + ([rest] if rest else [])
        return list(enumerate(sizes))


def block_stream(base_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([base_seed, index])))


# ---------------------------------------------------------------- samplers


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform on (0, 1): 53-bit grid shifted by half a step, endpoints excluded."""
    return rng.random(size) + 2.0**-54


def _normals(rng, size):
    n = int(np.prod(size))
    m = (n + 1) // 2
    u1, u2 = open_uniform(rng, m), open_uniform(rng, m)
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([rad * np.cos(2.0 * np.pi * u2), rad * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(size)


def sample(law: ParameterLaw, rng: np.random.Generator, size=1) -> np.ndarray:
    """Exact samplers built from open uniforms (and Box-Muller normals)."""
    if isinstance(law, Uniform):
        return law.a + (law.b - law.a) * open_uniform(rng, size)
    if isinstance(law, Exponential):
        return 1.0 - np.log(open_uniform(rng, size))
    if isinstance(law, Normal):
        return _normals(rng, size)
    if isinstance(law, Laplace):
        e = -np.log(open_uniform(rng, size))
        return np.where(open_uniform(rng, size) < 0.5, -e, e)
    if isinstance(law, ChiSquared):
        size = (size,) if np.isscalar(size) else tuple(size)
        z = _normals(rng, size + (law.k,))
        return np.sum(z * z, axis=-1)
    if isinstance(law, Cauchy):
        return np.tan(np.pi * (open_uniform(rng, size) - 0.5))
    raise ConfigurationError(f"no sampler for {law.describe()}")


# ---------------------------------------------------------------- reduction


@dataclass(frozen=True)
class Moments:
    count: int
    mean: np.ndarray
    m2: np.ndarray  # sum of |x - mean|^2

    @classmethod
    def of(cls, values: np.ndarray) -> "Moments":
        mean = values.mean(axis=0)
        return cls(values.shape[0], mean, np.sum(np.abs(values - mean) ** 2, axis=0))

    def merge(self, other: "Moments") -> "Moments":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + np.abs(delta) ** 2 * (self.count * other.count / n)
        return Moments(n, mean, m2)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.m2 / max(self.count - 1, 1))


def run_blocks(cfg: McConfig, law: ParameterLaw, statistic: Callable[[np.ndarray], np.ndarray]) -> Moments:
    """Apply statistic to the alpha samples of every block and merge in order.

    statistic maps an array of n samples to an (n, ...) array of values.
    """
    def one(block):
        idx, size = block
        return Moments.of(statistic(sample(law, block_stream(cfg.base_seed, idx), size)))

    blocks = cfg.blocks()
    if cfg.worker_count == 1:
        parts = [one(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
            parts = list(pool.map(one, blocks))
    total = parts[0]
    for p in parts[1:]:
        total = total.merge(p)
    return total


# ---------------------------------------------------------------- estimates


@dataclass(frozen=True)
class McEstimate:
    mean: complex
    sd: float
    count: int

    def z_score(self, reference: complex) -> float:
        err = abs(complex(reference) - self.mean)
        if self.sd == 0:
            return 0.0 if err <= 1e-15 else math.inf
        return err / (self.sd / math.sqrt(self.count))

    def report(self, reference: complex, gate: float = Z_GATE) -> dict:
        z = self.z_score(reference)
        ref = complex(reference)
        return {"closed_form": [ref.real, ref.imag], "mc_mean": [self.mean.real, self.mean.imag],
                "mc_sd": self.sd, "z_score": z, "pass": bool(z <= gate)}


def mc_multiplier_grid(kernel: MultiplierKernel, lams, ts, cfg: McConfig) -> list[McEstimate]:
    """One sample set, the factor evaluated at every (lambda, t) pair."""
    lams = np.asarray(lams, dtype=float).reshape(-1)
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if lams.shape != ts.shape:
        raise ConfigurationError("lambda and t lists must have equal length")
    mom = run_blocks(cfg, kernel.law,
                     lambda a: np.asarray(kernel.factor(a[:, None], lams[None, :], ts[None, :]), dtype=complex))
    return [McEstimate(complex(m), float(s), mom.count) for m, s in zip(mom.mean, mom.sd)]


def mc_multiplier(kernel: MultiplierKernel, lam: float, t: float, cfg: McConfig) -> McEstimate:
    """Sample mean and sd of exp(-alpha nu t) (heat) or exp(-i alpha nu t)."""
    return mc_multiplier_grid(kernel, [lam], [t], cfg)[0]


def mc_second_moment(kernel: MultiplierKernel, lam: float, t: float, cfg: McConfig) -> McEstimate:
    """Sample mean of the squared factor, the quantity behind random-data estimates."""
    kernel.second_moment(lam, t)  # admissibility
    mom = run_blocks(cfg, kernel.law, lambda a: np.asarray(kernel.factor(a, lam, t), dtype=complex)[:, None] ** 2)
    return McEstimate(complex(mom.mean[0]), float(mom.sd[0]), mom.count)


@dataclass(frozen=True)
class McStateEstimate:
    mean: SpectralState
    sd: np.ndarray
    count: int

    def z_scores(self, reference: SpectralState) -> np.ndarray:
        err = np.abs(reference.coeffs - self.mean.coeffs)
        se = self.sd / math.sqrt(self.count)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, err / np.where(se > 0, se, 1.0), np.where(err <= 1e-15, 0.0, np.inf))
        return z

    def within(self, reference: SpectralState, gate: float = Z_GATE) -> bool:
        return bool(np.all(self.z_scores(reference) <= gate))


def mc_controlled_average(problem: ControlProblem, control: ControlField, cfg: McConfig,
                          chunk: int = 256) -> McStateEstimate:
    """Average of per-realisation Duhamel solutions at T.

    Each realisation uses the control's own quadrature, so the estimator is
    unbiased for the same discrete formula as the averaged propagation.
    """
    n = problem.mode_count
    kernel = problem.kernel
    geo = problem.control_geometry
    T = geo.horizon
    lam = eigenvalues(n)
    q = control.quadrature
    forcing = q.weights[:, None] * (control.values @ geo.observation.input_matrix(n).T)  # (nq, N)
    y0 = problem.y0.coeffs
    tau = T - q.nodes

    def statistic(alpha):
        out = np.empty((alpha.size, n), dtype=complex)
        for s in range(0, alpha.size, chunk):
            a = alpha[s:s + chunk]
            for j in range(n):
                f = kernel.factor(a[:, None], lam[j], tau[None, :])
                out[s:s + chunk, j] = kernel.factor(a, lam[j], T) * y0[j] + f @ forcing[:, j]
        return out

    mom = run_blocks(cfg, kernel.law, statistic)
    return McStateEstimate(SpectralState(mom.mean, problem.y0.sobolev_index), mom.sd, mom.count)
