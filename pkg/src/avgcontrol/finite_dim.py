"""Averaged control of y' = A y + B(omega) u with a two-point law on B.

A = [[0, 1], [0, 1]] and B(omega) is B or 2B with equal probability, so the
average only sees E[B] = 3/2 B.  A single control can null the average, but
nulling both realisations at once forces y0 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

A = np.array([[0.0, 1.0], [0.0, 1.0]])
B = np.array([0.0, 1.0])
REALISATIONS = (1.0, 2.0)


def _gauss(T, count):
    x, w = np.polynomial.legendre.leggauss(count)
    return 0.5 * T * (x + 1.0), 0.5 * T * w


def averaged_gramian(T: float, bbar: np.ndarray) -> np.ndarray:
    """int_0^T e^{A(T-s)} bbar bbar^T e^{A^T (T-s)} ds by Van Loan's block exponential."""
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = np.outer(bbar, bbar)
    M[n:, n:] = A.T
    E = scipy.linalg.expm(M * T)
    G = E[n:, n:].T @ E[:n, n:]
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class FiniteDimReport:
    gramian: np.ndarray
    control_coefficient: np.ndarray
    averaged_final: np.ndarray
    realisation_finals: tuple
    stacked_residual: float
    stacked_residual_discrete: float
    control_norm: float

    @property
    def averaged_ok(self) -> bool:
        return bool(np.linalg.norm(self.averaged_final) <= 1e-10)

    @property
    def simultaneous_infeasible(self) -> bool:
        return bool(self.stacked_residual > 0.1)


def finite_dim_averaged_demo(y0=(1.0, 0.0), T: float = 1.0, nodes: int = 64,
                             pieces: int = 200) -> FiniteDimReport:
    y0 = np.asarray(y0, dtype=float)
    bbar = np.mean(REALISATIONS) * B
    G = averaged_gramian(T, bbar)
    free = scipy.linalg.expm(A * T) @ y0
    # u(s) = bbar^T e^{A^T (T-s)} z with G z = -e^{AT} y0
    z = np.linalg.solve(G, -free) if np.any(y0) else np.zeros(2)

    s, w = _gauss(T, nodes)
    prop = np.array([scipy.linalg.expm(A * (T - si)) for si in s])  # (q, 2, 2)
    u = np.einsum("i,qji,j->q", bbar, prop, z)
    finals = tuple(free + np.einsum("q,qij,j,q->i", w, prop, c * B, u) for c in REALISATIONS)
    averaged = np.mean(finals, axis=0)
    unorm = float(np.sqrt(np.dot(w, u * u)))

    # simultaneous control: moments v = int e^{A(T-s)} B u ds span R^2, so the
    # stacked equations free + c v = 0 (c = 1, 2) reduce to least squares in v
    S = np.vstack([c * np.eye(2) for c in REALISATIONS])
    rhs = -np.concatenate([free, free])
    v, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    res = float(np.linalg.norm(S @ v - rhs))

    # the same with piecewise-constant controls
    edges = np.linspace(0.0, T, pieces + 1)
    cols = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        ss, ww = _gauss(hi - lo, 8)
        cols.append(sum(wk * scipy.linalg.expm(A * (T - lo - sk)) @ B for sk, wk in zip(ss, ww)))
    Phi = np.array(cols).T  # (2, pieces)
    Sd = np.vstack([c * Phi for c in REALISATIONS])
    ud, *_ = np.linalg.lstsq(Sd, rhs, rcond=None)
    res_d = float(np.linalg.norm(Sd @ ud - rhs))
    return FiniteDimReport(G, z, averaged, finals, res, res_d, unorm)
