"""Parameter laws and the averaged per-mode multipliers they induce.

For a random coefficient alpha the solution of the heat equation
y_t - alpha y_xx = 0 carries the factor exp(-alpha lambda_j t) on mode j, and the
Schrodinger equation y_t - i alpha y_xx = 0 carries exp(-i alpha lambda_j t).
Averaging over alpha gives the multiplier m_j(t) = E[factor], i.e. the Laplace
transform (heat) or characteristic function (Schrodinger) of the law at
tau = nu_j t, where nu_j = lambda_j (or lambda_j^gamma for the fractional
Schrodinger operator).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

SMALL_TAU = 1e-4
SERIES_TERMS = 8


# ---------------------------------------------------------------- laws


class ParameterLaw:
    name = "law"

    def describe(self) -> str:
        return self.name


@dataclass(frozen=True)
class Uniform(ParameterLaw):
    a: float
    b: float
    name = "uniform"

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigurationError(f"uniform law needs a < b, got ({self.a}, {self.b})")

    def describe(self) -> str:
        return f"uniform({self.a!r},{self.b!r})"


@dataclass(frozen=True)
class Exponential(ParameterLaw):
    """Density exp(-(alpha - 1)) on [1, inf)."""

    name = "exponential"


@dataclass(frozen=True)
class Normal(ParameterLaw):
    name = "normal"


@dataclass(frozen=True)
class Laplace(ParameterLaw):
    """Density exp(-|alpha|) / 2."""

    name = "laplace"


@dataclass(frozen=True)
class ChiSquared(ParameterLaw):
    k: int
    name = "chi2"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError(f"chi-squared degrees of freedom must be a positive integer, got {self.k}")

    def describe(self) -> str:
        return f"chi2({self.k})"


@dataclass(frozen=True)
class Cauchy(ParameterLaw):
    name = "cauchy"


# ---------------------------------------------------------------- kinds


class EquationKind:
    name = "kind"

    def describe(self) -> str:
        return self.name


@dataclass(frozen=True)
class Heat(EquationKind):
    name = "heat"


@dataclass(frozen=True)
class Schrodinger(EquationKind):
    name = "schrodinger"


@dataclass(frozen=True)
class FractionalSchrodinger(EquationKind):
    gamma: float
    name = "fractional"

    def __post_init__(self):
        if not 0.25 < self.gamma < 0.5:
            raise ConfigurationError(f"fractional exponent must lie in (1/4, 1/2), got {self.gamma}")

    def describe(self) -> str:
        return f"fractional({self.gamma!r})"


_NUM = r"\s*([-+0-9.eE]+)\s*"


def parse_law(text: str) -> ParameterLaw:
    """Parse 'uniform(a,b)', 'exponential', 'normal', 'laplace', 'chi2(k)', 'cauchy'."""
    s = text.strip().lower()
    simple = {"exponential": Exponential, "normal": Normal, "laplace": Laplace, "cauchy": Cauchy}
    if s in simple:
        return simple[s]()
    m = re.fullmatch(r"uniform\(" + _NUM + "," + _NUM + r"\)", s)
    if m:
        return Uniform(float(m.group(1)), float(m.group(2)))
    m = re.fullmatch(r"chi2\(\s*(\d+)\s*\)", s)
    if m:
        return ChiSquared(int(m.group(1)))
    raise ConfigurationError(f"unknown law {text!r}")


def parse_kind(text: str) -> EquationKind:
    """Parse 'heat', 'schrodinger' or 'fractional(gamma)'."""
    s = text.strip().lower()
    if s == "heat":
        return Heat()
    if s in ("schrodinger", "schroedinger"):
        return Schrodinger()
    m = re.fullmatch(r"fractional\(" + _NUM + r"\)", s)
    if m:
        return FractionalSchrodinger(float(m.group(1)))
    raise ConfigurationError(f"unknown equation kind {text!r}")


# ---------------------------------------------------------------- kernels


def _uniform_series(a: float, b: float, z):
    """sum_m (-z)^m (b^{m+1} - a^{m+1}) / ((b - a) (m + 1)!), z = tau or i tau."""
    out = np.zeros_like(z, dtype=complex)
    for m in range(SERIES_TERMS - 1, -1, -1):
        # (b^{m+1} - a^{m+1}) / (b - a) without cancellation
        coef = sum(a**i * b ** (m - i) for i in range(m + 1)) / math.factorial(m + 1)
        out = out * (-z) + coef
    return out


def _is_admissible(law: ParameterLaw, kind: EquationKind) -> bool:
    if isinstance(kind, Heat):
        if isinstance(law, Uniform):
            return law.a > 0
        return isinstance(law, Exponential)
    if isinstance(kind, Schrodinger):
        return True
    if isinstance(kind, FractionalSchrodinger):
        return isinstance(law, Normal)
    return False


@dataclass(frozen=True)
class MultiplierKernel:
    law: ParameterLaw
    kind: EquationKind

    def __post_init__(self):
        if not _is_admissible(self.law, self.kind):
            raise ConfigurationError(
                f"law {self.law.describe()} is not admissible for {self.kind.describe()} dynamics")

    @classmethod
    def parse(cls, law: str, kind: str) -> "MultiplierKernel":
        return cls(parse_law(law), parse_kind(kind))

    def describe(self) -> dict:
        return {"law": self.law.describe(), "kind": self.kind.describe()}

    @property
    def imaginary(self) -> bool:
        return not isinstance(self.kind, Heat)

    @property
    def parabolic(self) -> bool:
        """|m| decays at least exponentially in the frequency (smoothing average)."""
        return not self.imaginary or isinstance(self.law, (Normal, Cauchy))

    @property
    def rate_scale(self) -> float:
        """How fast m varies per unit tau; sets time-quadrature resolution."""
        if isinstance(self.law, Uniform):
            return max(abs(self.law.a), abs(self.law.b))
        if isinstance(self.law, ChiSquared):
            return 1.0 + self.law.k
        return 1.0

    def frequency(self, lam):
        lam = np.asarray(lam, dtype=float)
        if isinstance(self.kind, FractionalSchrodinger):
            return lam ** self.kind.gamma
        return lam

    # -- per realisation

    def factor(self, alpha, lam, t):
        """Per-realisation propagation factor exp(-alpha nu t) or exp(-i alpha nu t)."""
        x = np.asarray(alpha) * self.frequency(lam) * np.asarray(t)
        return np.exp(-1j * x) if self.imaginary else np.exp(-x)

    # -- averaged

    def _check(self, lam, t):
        lam = np.asarray(lam, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("time must be nonnegative")
        if np.any(lam <= 0):
            raise DomainError("eigenvalue must be positive")
        return lam, t

    def _closed(self, tau):
        """Averaged factor as a function of tau = nu t >= 0, closed forms."""
        law = self.law
        if not self.imaginary:
            if isinstance(law, Uniform):
                with np.errstate(invalid="ignore", divide="ignore"):
                    w = (law.b - law.a) * tau
                    v = -np.exp(-law.a * tau) * np.expm1(-w) / w
                return v.astype(complex)
            return (np.exp(-tau) / (tau + 1.0)).astype(complex)
        if isinstance(law, Uniform):
            with np.errstate(invalid="ignore", divide="ignore"):
                w = 1j * (law.b - law.a) * tau
                return -np.exp(-1j * law.a * tau) * np.expm1(-w) / w
        if isinstance(law, Exponential):
            return np.exp(-1j * tau) / (1j * tau + 1.0)
        if isinstance(law, Normal):
            return np.exp(-0.5 * tau**2).astype(complex)
        if isinstance(law, Laplace):
            return (1.0 / (1.0 + tau**2)).astype(complex)
        if isinstance(law, ChiSquared):
            return np.exp(-0.5 * law.k * np.log(1.0 + 2j * tau))
        if isinstance(law, Cauchy):
            return np.exp(-tau).astype(complex)
        raise ConfigurationError(f"no multiplier for {law.describe()}")

    def _series(self, tau):
        law = self.law
        z = 1j * tau if self.imaginary else tau.astype(complex)
        return _uniform_series(law.a, law.b, z)

    def averaged(self, tau):
        """m as a function of tau = nu t, with the small-tau series for Uniform."""
        tau = np.asarray(tau, dtype=float)
        out = np.asarray(self._closed(tau), dtype=complex)
        if isinstance(self.law, Uniform):
            small = np.abs(tau) < SMALL_TAU
            if np.any(small):
                out = np.where(small, self._series(np.where(small, tau, 0.0)), out)
        return out

    def __call__(self, lam, t):
        lam, t = self._check(lam, t)
        return self.averaged(self.frequency(lam) * t)

    def log_abs(self, lam, t):
        """log |m|, evaluated without underflow for large arguments."""
        lam, t = self._check(lam, t)
        return self.log_abs_tau(self.frequency(lam) * t)

    def log_abs_tau(self, tau):
        tau = np.asarray(tau, dtype=float)
        law = self.law
        with np.errstate(divide="ignore"):
            if not self.imaginary:
                if isinstance(law, Uniform):
                    w = (law.b - law.a) * tau
                    safe = np.where(w > 0, w, 1.0)
                    body = -law.a * tau + np.log(-np.expm1(-safe)) - np.log(safe)
                    return np.where(w > 0, body, 0.0)
                return -tau - np.log1p(tau)
            if isinstance(law, Uniform):
                return np.log(np.abs(self.averaged(tau)))
            if isinstance(law, Exponential):
                return -0.5 * np.log1p(tau**2)
            if isinstance(law, Normal):
                return -0.5 * tau**2
            if isinstance(law, Laplace):
                return -np.log1p(tau**2)
            if isinstance(law, ChiSquared):
                return -0.25 * law.k * np.log1p(4.0 * tau**2)
            return -tau

    def second_moment(self, lam, t):
        """E[factor^2] over the law; the expectation entering random-data estimates.

        Only (Exponential|Uniform, heat) and (Normal|Cauchy, Schrodinger) are
        supported.  Squaring the factor doubles tau, so this is m(2 tau).
        """
        ok = (isinstance(self.kind, Heat) and isinstance(self.law, (Exponential, Uniform))) or (
            isinstance(self.kind, Schrodinger) and isinstance(self.law, (Normal, Cauchy)))
        if not ok:
            raise ConfigurationError(
                f"second moment not available for {self.law.describe()} / {self.kind.describe()}")
        lam, t = self._check(lam, t)
        return np.real(self.averaged(2.0 * self.frequency(lam) * t))


def multiplier(kernel: MultiplierKernel, lam, t):
    """Averaged multiplier m(lambda, t) = E[per-realisation factor]."""
    return kernel(lam, t)


def multiplier_small_t(kernel: MultiplierKernel, lam, t):
    """Truncated power series around t = 0 for Uniform laws; closed form otherwise."""
    lam, t = kernel._check(lam, t)
    if not isinstance(kernel.law, Uniform):
        return kernel(lam, t)
    return kernel._series(np.asarray(kernel.frequency(lam) * t, dtype=float))


def second_moment_multiplier(kernel: MultiplierKernel, lam, t):
    return kernel.second_moment(lam, t)


def admissible_kernels() -> list[MultiplierKernel]:
    """One representative kernel for every admissible (law, kind) pair."""
    laws = [Uniform(1.0, 2.0), Exponential(), Normal(), Laplace(), ChiSquared(3), Cauchy()]
    kinds = [Heat(), Schrodinger(), FractionalSchrodinger(0.4)]
    return [MultiplierKernel(law, kind) for kind in kinds for law in laws if _is_admissible(law, kind)]
