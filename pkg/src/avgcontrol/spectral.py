"""Dirichlet sine eigenbasis on (0, 1), spectral states and observation operators.

Everything downstream works in coefficients over e_j(x) = sqrt(2) sin(j pi x),
the L2-normalised eigenfunctions of -d^2/dx^2 with homogeneous Dirichlet
conditions, eigenvalue (j pi)^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np

from .errors import DomainError

SQRT2 = np.sqrt(2.0)


def eigenvalue(j):
    """(j pi)^2, vectorised over integer mode indices j >= 1."""
    j = np.asarray(j)
    if np.any(j < 1):
        raise DomainError(f"mode index must be >= 1, got {j}")
    return (j * np.pi) ** 2


def eigenvalues(n: int) -> np.ndarray:
    if n < 1:
        raise DomainError("mode count must be positive")
    return eigenvalue(np.arange(1, n + 1)).astype(float)


def eigenfunction(j: int) -> Callable[[np.ndarray], np.ndarray]:
    if j < 1:
        raise DomainError(f"mode index must be >= 1, got {j}")
    return lambda x: SQRT2 * np.sin(j * np.pi * np.asarray(x, dtype=float))


def eigen_pair(j: int) -> tuple[float, Callable[[np.ndarray], np.ndarray]]:
    """Return ((j pi)^2, x -> sqrt(2) sin(j pi x))."""
    return float(eigenvalue(j)), eigenfunction(j)


@dataclass(frozen=True)
class EigenBasis:
    mode_count: int

    def __post_init__(self):
        if self.mode_count < 1:
            raise DomainError("mode count must be positive")

    @property
    def eigenvalues(self) -> np.ndarray:
        return eigenvalues(self.mode_count)

    def evaluate(self, x) -> np.ndarray:
        """Matrix of e_j(x_i), shape (len(x), mode_count)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = np.arange(1, self.mode_count + 1)
        return SQRT2 * np.sin(np.pi * np.outer(x, j))


# ---------------------------------------------------------------- states


@dataclass(frozen=True)
class SpectralState:
    """Complex coefficients a_j over modes 1..N with a Sobolev index for norms."""

    coeffs: np.ndarray
    sobolev_index: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, n: int, sobolev_index: float = 0.0) -> "SpectralState":
        return cls(np.zeros(n, dtype=complex), sobolev_index)

    @classmethod
    def unit(cls, j: int, n: int, sobolev_index: float = 0.0) -> "SpectralState":
        if not 1 <= j <= n:
            raise DomainError(f"mode {j} outside 1..{n}")
        c = np.zeros(n, dtype=complex)
        c[j - 1] = 1.0
        return cls(c, sobolev_index)

    @property
    def mode_count(self) -> int:
        return self.coeffs.size

    def norm(self, s: float | None = None) -> float:
        return sobolev_norm(self, self.sobolev_index if s is None else s)

    def pairing(self, other: "SpectralState") -> complex:
        """Duality pairing sum_j a_j conj(b_j); independent of the Sobolev index."""
        return complex(np.vdot(other.coeffs, self.coeffs))

    def evaluate(self, x) -> np.ndarray:
        return EigenBasis(self.mode_count).evaluate(x) @ self.coeffs

    def __add__(self, other: "SpectralState") -> "SpectralState":
        return SpectralState(self.coeffs + other.coeffs, self.sobolev_index)

    def __sub__(self, other: "SpectralState") -> "SpectralState":
        return SpectralState(self.coeffs - other.coeffs, self.sobolev_index)

    def __mul__(self, scalar) -> "SpectralState":
        return SpectralState(self.coeffs * scalar, self.sobolev_index)

    __rmul__ = __mul__


def sobolev_norm(state: SpectralState, s: float) -> float:
    """(sum_j lambda_j^s |a_j|^2)^(1/2) on the spectral Sobolev scale."""
    lam = eigenvalues(state.mode_count)
    return float(np.sqrt(np.sum(lam**s * np.abs(state.coeffs) ** 2)))


# ---------------------------------------------------------------- observation


def _interior_antiderivative(j, k, x):
    """Antiderivative of 2 sin(j pi x) sin(k pi x), broadcasting over j, k."""
    j = np.asarray(j, dtype=float)
    k = np.asarray(k, dtype=float)
    same = j == k
    d = np.where(same, 1.0, j - k) * np.pi
    s = (j + k) * np.pi
    off = np.sin(d * x) / d - np.sin(s * x) / s
    diag = x - np.sin(2.0 * j * np.pi * x) / (2.0 * j * np.pi)
    return np.where(same, diag, off)


def boundary_trace(j, endpoint: int):
    """Outward normal derivative of e_j at x = endpoint.

    d e_j / d nu (0) = -e_j'(0) = -sqrt(2) j pi and
    d e_j / d nu (1) = e_j'(1) = sqrt(2) j pi (-1)^j.
    """
    j = np.asarray(j)
    if np.any(j < 1):
        raise DomainError("mode index must be >= 1")
    if endpoint == 0:
        return -SQRT2 * np.pi * j
    if endpoint == 1:
        return SQRT2 * np.pi * j * np.where(j % 2 == 0, 1.0, -1.0)
    raise DomainError(f"boundary endpoint must be 0 or 1, got {endpoint}")


class ObservationOperator:
    """Where the control acts and the adjoint is observed.

    In spectral coordinates a control is a vector c in C^p with input map B
    (N x p), the U inner product has Gram matrix `norm_matrix`, and the
    U-adjoint of B is `output_matrix` (p x N).  B @ output_matrix equals the
    observation Gram matrix, so the control Gramian integrand is
    m(T-t) * gram * conj(m(T-t)).
    """

    def gram(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def control_dim(self, n: int) -> int:
        raise NotImplementedError

    def input_matrix(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def output_matrix(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def norm_matrix(self, n: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Interior(ObservationOperator):
    """Restriction to a finite union of disjoint subintervals of (0, 1).

    The control is represented by coefficients of a function on (0, 1); only
    its restriction to the subintervals is felt, through the overlap matrix.
    """

    intervals: tuple[tuple[float, float], ...]

    def __init__(self, intervals: Sequence[Sequence[float]]):
        ivs = tuple(sorted((float(a), float(b)) for a, b in intervals))
        if not ivs:
            raise DomainError("interior observation needs at least one subinterval")
        for a, b in ivs:
            if not 0.0 <= a < b <= 1.0:
                raise DomainError(f"subinterval ({a}, {b}) not inside (0, 1)")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 < b0:
                raise DomainError("subintervals overlap")
        object.__setattr__(self, "intervals", ivs)

    @property
    def length(self) -> float:
        return sum(b - a for a, b in self.intervals)

    def overlap(self, j, k):
        total = 0.0
        for a, b in self.intervals:
            total = total + _interior_antiderivative(j, k, b) - _interior_antiderivative(j, k, a)
        return total

    def gram(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1)
        g = self.overlap(idx[:, None], idx[None, :])
        return 0.5 * (g + g.T)

    def control_dim(self, n: int) -> int:
        return n

    def input_matrix(self, n: int) -> np.ndarray:
        return self.gram(n)

    def output_matrix(self, n: int) -> np.ndarray:
        return np.eye(n)

    def norm_matrix(self, n: int) -> np.ndarray:
        return self.gram(n)

    def gram_mp(self, n: int, dps: int = 60) -> mpmath.matrix:
        """Overlap matrix in extended precision (for tiny eigenvalues)."""
        with mpmath.workdps(dps):
            pi = mpmath.pi
            ivs = [(mpmath.mpf(repr(a)), mpmath.mpf(repr(b))) for a, b in self.intervals]

            def prim(j, k, x):
                if j == k:
                    return x - mpmath.sin(2 * j * pi * x) / (2 * j * pi)
                return (mpmath.sin((j - k) * pi * x) / ((j - k) * pi)
                        - mpmath.sin((j + k) * pi * x) / ((j + k) * pi))

            m = mpmath.matrix(n, n)
            for j in range(1, n + 1):
                for k in range(j, n + 1):
                    v = sum(prim(j, k, b) - prim(j, k, a) for a, b in ivs)
                    m[j - 1, k - 1] = v
                    m[k - 1, j - 1] = v
            return m


@dataclass(frozen=True)
class Boundary(ObservationOperator):
    """Normal-derivative trace at one endpoint; scalar control."""

    endpoint: int

    def __post_init__(self):
        if self.endpoint not in (0, 1):
            raise DomainError(f"boundary endpoint must be 0 or 1, got {self.endpoint}")

    def traces(self, n: int) -> np.ndarray:
        return boundary_trace(np.arange(1, n + 1), self.endpoint).astype(float)

    def overlap(self, j, k):
        return boundary_trace(j, self.endpoint) * boundary_trace(k, self.endpoint)

    def gram(self, n: int) -> np.ndarray:
        t = self.traces(n)
        return np.outer(t, t)

    def control_dim(self, n: int) -> int:
        return 1

    def input_matrix(self, n: int) -> np.ndarray:
        return self.traces(n)[:, None]

    def output_matrix(self, n: int) -> np.ndarray:
        return self.traces(n)[None, :]

    def norm_matrix(self, n: int) -> np.ndarray:
        return np.ones((1, 1))


def overlap(j: int, k: int, op: ObservationOperator) -> float:
    """Closed-form (e_j, e_k) over the interior region, or trace_j * trace_k."""
    if j < 1 or k < 1:
        raise DomainError("mode indices must be >= 1")
    return float(op.overlap(j, k))


def min_overlap_eigenvalue(op: Interior, n: int, dps: int = 60) -> float:
    """Smallest eigenvalue of the n x n interior overlap matrix.

    Double precision cannot resolve it once it drops near 1e-13 (it decays
    like exp(-c n)); in that case the value is recomputed with mpmath.
    """
    lo = float(np.linalg.eigvalsh(op.gram(n))[0])
    if lo > 1e-11:
        return lo
    with mpmath.workdps(dps):
        ev = mpmath.eigsy(op.gram_mp(n, dps), eigvals_only=True)
        return float(min(ev))
