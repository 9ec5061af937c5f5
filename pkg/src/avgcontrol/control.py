"""Minimal-norm averaged controls by the dual (HUM) method.

The dual functional J(z) = 1/2 <G z, z> - <rhs, z> (plus an optional
epsilon-penalty) is minimised by preconditioned conjugate gradients in the
frame w = Lambda^{-s_V/2} z, where Euclidean norms of w are V' norms of z and
Euclidean norms of residuals are V norms of target errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .dynamics import ControlField, controlled_final_state
from .errors import ConfigurationError, DomainError
from .geometry import GeometrySpec, Quadrature, gauss_panels, time_quadrature
from .kernels import ChiSquared, Exponential, Laplace, MultiplierKernel, Schrodinger, Uniform
from .spectral import ObservationOperator, SpectralState, eigenvalues

CG_TOL = 1e-10
UNDERRESOLVED = 1e-8
INDEFINITE = 1e-10
IRLS_STEPS = 60


# ---------------------------------------------------------------- objectives


@dataclass(frozen=True)
class Exact:
    target: SpectralState


@dataclass(frozen=True)
class Null:
    pass


@dataclass(frozen=True)
class Approx:
    """Reach target within epsilon on modes > M and exactly on modes 1..M."""

    epsilon: float
    projection_dim: int = 0
    target: SpectralState | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("approximate objective needs epsilon > 0")
        if self.projection_dim < 0:
            raise ConfigurationError("projection dimension must be nonnegative")


Objective = Union[Exact, Null, Approx]


def default_space_index(kernel: MultiplierKernel) -> float:
    """Sobolev index of the target space V for exact control.

    |m_j(T)| decays like lambda_j^{-s/2} for Schrodinger with the Exponential
    (s = 2), Laplace (s = 4) and chi-squared(k) (s = k) laws; the target space
    is weighted to match.  Every other case uses s = 0.
    """
    if isinstance(kernel.kind, Schrodinger):
        law = kernel.law
        if isinstance(law, Exponential):
            return 2.0
        if isinstance(law, Laplace):
            return 4.0
        if isinstance(law, ChiSquared):
            return float(law.k)
    return 0.0


def default_control_index(kernel: MultiplierKernel) -> float:
    """Half the order of control-space weakening (1 means U = H^{-2}).

    The Uniform-law Schrodinger average loses one power of lambda, recovered by
    allowing controls in H^{-2} while keeping V = L2.
    """
    if isinstance(kernel.kind, Schrodinger) and isinstance(kernel.law, Uniform):
        return 1.0
    return 0.0


class WeightedObservation(ObservationOperator):
    """Observation operator composed with D = diag(lambda_j^r) on the state side."""

    def __init__(self, base: ObservationOperator, index: float):
        self.base = base
        self.index = float(index)

    def _d(self, n):
        return eigenvalues(n) ** self.index

    def gram(self, n):
        d = self._d(n)
        return d[:, None] * self.base.gram(n) * d[None, :]

    def control_dim(self, n):
        return self.base.control_dim(n)

    def input_matrix(self, n):
        return self._d(n)[:, None] * self.base.input_matrix(n)

    def output_matrix(self, n):
        return self.base.output_matrix(n) * self._d(n)[None, :]

    def norm_matrix(self, n):
        return self.base.norm_matrix(n)

    def __repr__(self):
        return f"WeightedObservation({self.base!r}, {self.index})"


@dataclass(frozen=True)
class ControlProblem:
    kernel: MultiplierKernel
    geometry: GeometrySpec
    mode_count: int
    y0: SpectralState
    objective: Objective
    space_index: float | None = None
    control_index: float | None = None

    def __post_init__(self):
        if self.mode_count < 1:
            raise ConfigurationError("mode count must be positive")
        if self.y0.mode_count != self.mode_count:
            raise ConfigurationError("initial state has the wrong number of modes")
        t = self.target
        if t.mode_count != self.mode_count:
            raise ConfigurationError("target has the wrong number of modes")
        if isinstance(self.objective, Approx) and self.objective.projection_dim > self.mode_count:
            raise ConfigurationError("projection dimension exceeds mode count")
        if self.space_index is None:
            object.__setattr__(self, "space_index", default_space_index(self.kernel))
        if self.control_index is None:
            object.__setattr__(self, "control_index", default_control_index(self.kernel))

    @property
    def target(self) -> SpectralState:
        obj = self.objective
        if isinstance(obj, Exact):
            return obj.target
        if isinstance(obj, Approx) and obj.target is not None:
            return obj.target
        return SpectralState.zeros(self.mode_count)

    @property
    def observation(self) -> ObservationOperator:
        base = self.geometry.observation
        return WeightedObservation(base, self.control_index) if self.control_index else base

    @property
    def control_geometry(self) -> GeometrySpec:
        return GeometrySpec(self.observation, self.geometry.time_set, self.geometry.horizon)

    @property
    def scale(self) -> np.ndarray:
        """Lambda^{s_V/2}: z = scale * w."""
        return eigenvalues(self.mode_count) ** (0.5 * self.space_index)

    def deviation(self) -> np.ndarray:
        """y1 - m(T) y0, the part of the target the control must supply."""
        lam = eigenvalues(self.mode_count)
        return self.target.coeffs - self.kernel(lam, self.geometry.horizon) * self.y0.coeffs

    def space_norm(self, coeffs) -> float:
        lam = eigenvalues(self.mode_count)
        return float(np.sqrt(np.sum(lam**self.space_index * np.abs(coeffs) ** 2)))


# ---------------------------------------------------------------- gramian


@dataclass(frozen=True)
class GramianSystem:
    """Weighted Hermitian system G_w w = r_w with z = scale * w."""

    matrix: np.ndarray
    rhs: np.ndarray
    scale: np.ndarray
    raw: np.ndarray
    quadrature: Quadrature
    geometry: GeometrySpec
    estimated_error: float
    warnings: tuple = ()

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def _multipliers(kernel, n, horizon, nodes):
    lam = eigenvalues(n)
    return kernel(lam[None, :], (horizon - nodes)[:, None])


def gramian_from_quadrature(kernel: MultiplierKernel, obs: ObservationOperator, n: int, horizon: float,
                            quad: Quadrature) -> np.ndarray:
    """sum_q w_q m(T - t_q) Gamma conj(m(T - t_q)), Gamma = B B* (Hermitian part)."""
    m = _multipliers(kernel, n, horizon, quad.nodes)
    g = obs.gram(n) * ((m * quad.weights[:, None]).T @ m.conj())
    return 0.5 * (g + g.conj().T)


def assemble_gramian(problem: ControlProblem, order: int = 8) -> GramianSystem:
    geo = problem.geometry
    n = problem.mode_count
    obs = problem.observation
    quad = time_quadrature(geo.time_set, geo.horizon, problem.kernel, n, order)
    G = gramian_from_quadrature(problem.kernel, obs, n, geo.horizon, quad)
    fine = gauss_panels(quad.panels, order + 4)
    err = float(np.linalg.norm(G - gramian_from_quadrature(problem.kernel, obs, n, geo.horizon, fine), 2))
    gnorm = float(np.linalg.norm(G, 2))
    warns = []
    if err > UNDERRESOLVED * gnorm:
        warns.append(f"time quadrature may be under-resolved: estimated error {err:.3e}")
    s = problem.scale
    Gw = s[:, None] * G * s[None, :]
    return GramianSystem(Gw, s * problem.deviation(), s, G, quad, geo, err, tuple(warns))


# ---------------------------------------------------------------- cg


@dataclass(frozen=True)
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg(A: np.ndarray, b: np.ndarray, tol: float = CG_TOL, maxit: int | None = None,
        x0: np.ndarray | None = None) -> CGResult:
    """Jacobi-preconditioned CG for Hermitian positive (semi)definite A.

    Stops at relative residual ||b - A x|| <= tol ||b||.  Returns the iterate
    with the smallest true residual seen if the budget runs out.
    """
    n = b.size
    maxit = 50 * n if maxit is None else maxit
    bnorm = np.linalg.norm(b)
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    if bnorm == 0:
        return CGResult(np.zeros(n, dtype=complex), 0, 0.0, True)
    d = np.real(np.diag(A)).copy()
    d[d <= 0] = 1.0
    r = b - A @ x
    best, best_res = x.copy(), np.linalg.norm(r) / bnorm
    if best_res <= tol:
        return CGResult(x, 0, float(best_res), True)
    z = r / d
    p = z.copy()
    rz = np.vdot(r, z).real
    it = 0
    for it in range(1, maxit + 1):
        Ap = A @ p
        pAp = np.vdot(p, Ap).real
        if pAp <= 0:
            break
        step = rz / pAp
        x = x + step * p
        r = r - step * Ap
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol:
            break
        z = r / d
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_res = np.linalg.norm(b - A @ best) / bnorm
    return CGResult(best, it, float(true_res), bool(true_res <= tol))


# ---------------------------------------------------------------- solve


@dataclass(frozen=True)
class Diagnostics:
    cg_iterations: int
    final_residual: float
    duality_gap: float
    control_norm: float
    achieved_error: float
    converged: bool
    warnings: tuple = ()

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ControlSolution:
    zhat0: SpectralState
    control: ControlField
    diagnostics: Diagnostics
    final_state: SpectralState = field(compare=False, default=None)


def reconstruct_control(problem: ControlProblem, zhat: np.ndarray, quad: Quadrature) -> ControlField:
    """u(t) = chi_E(t) B* (conj(m(T - t)) zhat) at the quadrature nodes, plus an evaluator."""
    n = problem.mode_count
    T = problem.geometry.horizon
    C = problem.observation.output_matrix(n)
    zhat = np.asarray(zhat, dtype=complex)

    def at(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        vals = (np.conj(_multipliers(problem.kernel, n, T, s)) * zhat[None, :]) @ C.T
        return np.where(problem.geometry.contains(s)[:, None], vals, 0.0)

    return ControlField(quad, at(quad.nodes), at)


def reach(problem: ControlProblem, u: ControlField) -> np.ndarray:
    """Averaged contribution of the control alone at T (the map L)."""
    z = SpectralState.zeros(problem.mode_count)
    return controlled_final_state(z, problem.kernel, problem.control_geometry, u).coeffs


def _approx_solve(G, r, m_dim, eps, tol, maxit):
    """Minimise 1/2 w*Gw - Re<r, w> + eps |P w| by reweighted CG (Huber smoothing)."""
    n = r.size
    tail = np.arange(n) >= m_dim
    cg = pcg(G, r, tol, maxit)
    w, its = cg.x, cg.iterations
    for _ in range(IRLS_STEPS):
        delta = 1e-8 * max(np.linalg.norm(w), 1e-300)
        rho = max(np.linalg.norm(w[tail]), delta)
        A = G + np.diag(np.where(tail, eps / rho, 0.0))
        cg = pcg(A, r, tol, maxit, x0=w)
        its += cg.iterations
        change = np.linalg.norm(cg.x - w)
        w = cg.x
        if change <= 1e-13 * max(np.linalg.norm(w), 1e-300):
            break
    return CGResult(w, its, cg.residual, cg.converged)


def solve_dual(problem: ControlProblem, gramian: GramianSystem | None = None, cg_tol: float = CG_TOL,
               cg_maxit: int | None = None) -> ControlSolution:
    if gramian is None:
        gramian = assemble_gramian(problem)
    n = problem.mode_count
    G = gramian.matrix
    # the rhs always comes from this problem, so one Gramian serves many data
    r = gramian.scale * problem.deviation()
    lo = np.linalg.eigvalsh(G)[0]
    if lo < -INDEFINITE * max(gramian.norm, 1e-300):
        raise DomainError(f"Gramian is numerically indefinite (min eigenvalue {lo:.3e})")
    maxit = 50 * n if cg_maxit is None else cg_maxit
    obj = problem.objective
    if isinstance(obj, Null) and not np.any(problem.y0.coeffs):
        res = CGResult(np.zeros(n, dtype=complex), 0, 0.0, True)
    elif isinstance(obj, Approx):
        res = _approx_solve(G, r, obj.projection_dim, obj.epsilon, cg_tol, maxit)
    else:
        res = pcg(G, r, cg_tol, maxit)
    zhat = gramian.scale * res.x
    u = reconstruct_control(problem, zhat, gramian.quadrature)
    final = controlled_final_state(problem.y0, problem.kernel, problem.control_geometry, u)
    err = problem.space_norm(final.coeffs - problem.target.coeffs)
    unorm2 = u.norm_sq(problem.observation.norm_matrix(n))
    gap = _gap(problem, zhat, unorm2)
    warns = gramian.warnings
    if not res.converged:
        warns = warns + (f"CG stopped at {res.iterations} iterations, residual {res.residual:.3e}",)
    diag = Diagnostics(res.iterations, res.residual, gap, float(np.sqrt(unorm2)), err, res.converged, warns)
    return ControlSolution(SpectralState(zhat, -problem.space_index), u, diag, final)


def _gap(problem, zhat, unorm2):
    zhat = SpectralState(zhat)
    lam = eigenvalues(problem.mode_count)
    z_at_0 = SpectralState(np.conj(problem.kernel(lam, problem.geometry.horizon)) * zhat.coeffs)
    pair = problem.target.pairing(zhat) - problem.y0.pairing(z_at_0)
    return float(abs(pair - unorm2))


def duality_gap(solution: ControlSolution, problem: ControlProblem) -> float:
    """|<y1, zhat> - <y0, avg z(0)> - ||u||^2|, zero at the exact minimiser."""
    unorm2 = solution.control.norm_sq(problem.observation.norm_matrix(problem.mode_count))
    return _gap(problem, solution.zhat0.coeffs, unorm2)


def target_tolerance(problem: ControlProblem) -> float:
    """Closed-loop acceptance level for the achieved error in the V norm."""
    obj = problem.objective
    size = problem.space_norm(problem.y0.coeffs) + problem.space_norm(problem.target.coeffs)
    if isinstance(obj, Approx):
        return obj.epsilon + 1e-6 * size
    return 1e-6 * size


# ---------------------------------------------------------------- minimal norm


@dataclass(frozen=True)
class MinimalNormReport:
    control_norm: float
    margins: np.ndarray
    scaled_margins: np.ndarray
    max_reach: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= -1e-10) and np.all(self.scaled_margins >= -1e-10))


def feasible_perturbation(problem: ControlProblem, gramian: GramianSystem, v: ControlField) -> ControlField:
    """v minus its component in the range of L*, so that L w = 0."""
    Lv = reach(problem, v)
    s = gramian.scale
    y = np.linalg.solve(gramian.matrix, s * Lv)
    back = reconstruct_control(problem, s * y, gramian.quadrature)
    return v - ControlField(v.quadrature, back.values)


def minimal_norm_check(solution: ControlSolution, problem: ControlProblem, perturbation_count: int = 32,
                       seed: int = 0, gramian: GramianSystem | None = None) -> MinimalNormReport:
    """Check ||u + w|| >= ||u|| for random controls w with zero averaged reach."""
    if gramian is None:
        gramian = assemble_gramian(problem)
    n = problem.mode_count
    M = problem.observation.norm_matrix(n)
    u = ControlField(solution.control.quadrature, solution.control.values)
    unorm = np.sqrt(u.norm_sq(M))
    rng = np.random.default_rng(seed)
    shape = u.values.shape
    margins, scaled, reaches = [], [], []
    for _ in range(perturbation_count):
        raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        w = feasible_perturbation(problem, gramian, ControlField(u.quadrature, raw))
        wn = np.sqrt(w.norm_sq(M))
        if wn > 0:
            # perturb on the scale of the control itself
            w = w * ((unorm if unorm > 0 else 1.0) / wn)
        reaches.append(np.linalg.norm(reach(problem, w)))
        margins.append(np.sqrt((u + w).norm_sq(M)) - unorm)
        scaled.append(np.sqrt((u + 10.0 * w).norm_sq(M)) - unorm)
    return MinimalNormReport(float(unorm), np.array(margins), np.array(scaled),
                             float(max(reaches, default=0.0)))
