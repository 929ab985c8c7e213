"""Matrix-analytic solution of the truncated availability-one process.

Levels count requests in system.  Phases describe the join queue of the
recovery group: ``(0,2), (0,1), (0,0), (1,0), (2,0)`` where ``(i,0)`` means
the first recovery server leads by ``i`` and ``(0,i)`` the second.  Level 0
has the single empty state; level 1 has phases ``(0,1), (0,0), (1,0)``, and
these four states make up the boundary block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, DivergenceError, NumericError, ParameterError

PHASES = ((0, 2), (0, 1), (0, 0), (1, 0), (2, 0))
BOUNDARY_STATES = ((0, (0, 0)), (1, (0, 1)), (1, (0, 0)), (1, (1, 0)))


@dataclass(frozen=True)
class QBDBlocks:
    gamma: float
    alpha: float
    beta: float
    lam: float
    F0: np.ndarray
    H0: np.ndarray
    L0: np.ndarray
    F: np.ndarray
    L: np.ndarray
    H: np.ndarray

    @property
    def delta(self) -> float:
        return self.alpha + self.beta + self.gamma + self.lam


@dataclass(frozen=True)
class QBDSolution:
    R: np.ndarray
    pi0: np.ndarray
    pi1: np.ndarray
    iterations: int
    residual: float


def build_blocks(gamma: float, alpha: float, beta: float, lam: float) -> QBDBlocks:
    if min(gamma, alpha, beta, lam) <= 0:
        raise ParameterError("all rates must be positive")
    g, a, b, l = float(gamma), float(alpha), float(beta), float(lam)
    d = a + b + g + l
    F0 = np.array([
        [-l, 0, l, 0],
        [a + g, b - d, 0, 0],
        [g, b, -d, a],
        [b + g, 0, 0, a - d],
    ])
    H0 = np.zeros((4, 5))
    H0[1, 1] = H0[2, 2] = H0[3, 3] = l
    L0 = np.array([
        [0, a + g, 0, 0],
        [0, 0, a + g, 0],
        [0, 0, g, 0],
        [0, 0, b + g, 0],
        [0, 0, 0, b + g],
    ])
    F = np.array([
        [b - d, 0, 0, 0, 0],
        [b, -d, 0, 0, 0],
        [0, b, -d, a, 0],
        [0, 0, 0, -d, a],
        [0, 0, 0, 0, a - d],
    ])
    L = np.array([
        [0, a + g, 0, 0, 0],
        [0, 0, a + g, 0, 0],
        [0, 0, g, 0, 0],
        [0, 0, b + g, 0, 0],
        [0, 0, 0, b + g, 0],
    ])
    H = l * np.eye(5)
    blocks = QBDBlocks(g, a, b, l, F0, H0, L0, F, L, H)
    _check_generator(blocks)
    return blocks


def _check_generator(q: QBDBlocks) -> None:
    scale = q.delta
    rows = [
        q.F0.sum(axis=1) + q.H0.sum(axis=1),   # boundary level
        q.L.sum(axis=1) + q.F.sum(axis=1) + q.H.sum(axis=1),
        q.L0.sum(axis=1) + q.F.sum(axis=1) + q.H.sum(axis=1),   # level 2 drops into boundary
    ]
    for r in rows:
        if np.max(np.abs(r)) > 1e-12 * scale:
            raise ConsistencyError(f"generator rows do not sum to zero: {r}")
    for m in (q.H0, q.L0, q.L, q.H):
        if (m < 0).any():
            raise ConsistencyError("negative rate in an off-diagonal block")
    for m in (q.F0, q.F):
        off = m - np.diag(np.diag(m))
        if (off < 0).any():
            raise ConsistencyError("negative off-diagonal rate in a diagonal block")


def residual(blocks: QBDBlocks, R: np.ndarray) -> float:
    return float(np.max(np.abs(blocks.H + R @ blocks.F + R @ R @ blocks.L)))


def drift(blocks: QBDBlocks) -> tuple[float, float]:
    """Mean up and down rates of the level process in the repeating part.

    The chain is positive recurrent iff ``up < down``.
    """
    A = blocks.L + blocks.F + blocks.H
    M = np.vstack([A.T, np.ones(5)])
    rhs = np.zeros(6)
    rhs[-1] = 1.0
    phase, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return float(phase @ blocks.H.sum(axis=1)), float(phase @ blocks.L.sum(axis=1))


def stability_limit(gamma: float, alpha: float, beta: float) -> float:
    """Largest arrival rate the truncated chain can carry."""
    # the phase process of L + F + H does not depend on lambda except via H,
    # whose row sums are lambda, so the limit is the down-rate itself
    return drift(build_blocks(gamma, alpha, beta, 1.0))[1]


def compute_R(blocks: QBDBlocks, eps: float = 1e-6, max_iter: int = 100_000) -> tuple[np.ndarray, int]:
    """Successive substitution ``R <- -(R^2 L + H) F^-1`` from ``R = 0``."""
    if eps <= 0:
        raise ParameterError("eps must be positive")
    up, down = drift(blocks)
    if up >= down:
        raise DivergenceError(f"truncated chain unstable: up-rate {up:.6g} >= down-rate {down:.6g}",
                              utilization=up / down, where="qbd")
    try:
        Finv = np.linalg.inv(blocks.F)
    except np.linalg.LinAlgError as exc:
        raise NumericError("F is singular") from exc
    R = np.zeros((5, 5))
    for it in range(1, max_iter + 1):
        nxt = -(R @ R @ blocks.L + blocks.H) @ Finv
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError("R iteration blew up", where="qbd")
        change = np.max(np.abs(nxt - R))
        R = nxt
        if change < eps:
            break
    else:
        raise DivergenceError(f"R iteration did not converge in {max_iter} steps", where="qbd")
    sr = float(np.max(np.abs(np.linalg.eigvals(R))))
    if sr >= 1.0:
        raise DivergenceError(f"spectral radius of R is {sr:.6g} >= 1", utilization=sr, where="qbd")
    return R, it


def solve_boundary(blocks: QBDBlocks, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    I = np.eye(5)
    phi = np.block([[blocks.F0, blocks.H0], [blocks.L0, R @ blocks.L + blocks.F]])
    psi = phi.copy()
    psi[:4, 0] = 1.0
    psi[4:, 0] = np.linalg.solve(I - R, np.ones(5))
    rhs = np.zeros(9)
    rhs[0] = 1.0
    try:
        x = np.linalg.solve(psi.T, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError("boundary system is singular") from exc
    if (x < -1e-10).any():
        raise ConsistencyError(f"negative boundary probability: {x.min():.3g}")
    x = np.maximum(x, 0.0)
    return x[:4], x[4:]


def solve(gamma: float, alpha: float, beta: float, lam: float,
          eps: float = 1e-6, max_iter: int = 100_000) -> QBDSolution:
    blocks = build_blocks(gamma, alpha, beta, lam)
    R, it = compute_R(blocks, eps, max_iter)
    pi0, pi1 = solve_boundary(blocks, R)
    return QBDSolution(R=R, pi0=pi0, pi1=pi1, iterations=it, residual=residual(blocks, R))


def normalization(sol: QBDSolution) -> float:
    inv = np.linalg.solve(np.eye(5) - sol.R, np.ones(5))
    return float(sol.pi0.sum() + sol.pi1 @ inv)


def mean_in_system(sol: QBDSolution) -> float:
    I = np.eye(5)
    one = np.ones(5)
    a = np.linalg.solve(I - sol.R, one)           # (I-R)^-1 1
    b = np.linalg.solve(I - sol.R, a)             # (I-R)^-2 1
    return float(sol.pi0.sum() - sol.pi0[0] + sol.pi1 @ (a + b))


def ma_sojourn_ub(gamma: float, alpha: float, beta: float, lam: float,
                  eps: float = 1e-6, max_iter: int = 100_000) -> float:
    """Mean download time of the five-column truncated chain (Little's law)."""
    sol = solve(gamma, alpha, beta, lam, eps, max_iter)
    return mean_in_system(sol) / lam
