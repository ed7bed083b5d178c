"""Linear complementarity solvers for  min(psi - W, r - A W) = 0.

``A`` is a sparse M-matrix (diagonally dominant, non-positive off-diagonal
entries).  Rows flagged ``forced`` are pinned to the obstacle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


class SolverError(RuntimeError):
    """Iteration did not converge; carries the residual history."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


@dataclass
class LcpResult:
    W: np.ndarray
    stop: np.ndarray
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


def lcp_residual(A, r, psi, W, scale=None) -> float:
    """max |min(psi - W, r - A W)|, optionally divided by a row scale."""
    res = np.minimum(psi - W, r - A @ W)
    if scale is not None:
        res = res / scale
    return float(np.max(np.abs(res))) if res.size else 0.0


def _solve_refined(M, rhs):
    """Sparse LU solve followed by one step of iterative refinement."""
    lu = splu(M.tocsc())
    x = lu.solve(rhs)
    return x + lu.solve(rhs - M @ x)


def policy_iteration(A: sps.csr_matrix, r, psi, forced=None, tol=1e-10,
                     max_iter=500, scale=None, init: str = "payoff",
                     stop0=None) -> LcpResult:
    """Howard's algorithm; finite termination for M-matrices.

    ``init="payoff"`` starts from stopping wherever continuing is not locally
    profitable; ``init="continue"`` starts from continuing everywhere.
    ``stop0`` overrides both with an explicit initial stop set.
    """
    n = A.shape[0]
    forced = np.zeros(n, bool) if forced is None else np.asarray(forced, bool)
    A = sps.csr_matrix(A)
    # start from the payoff: continue wherever it is locally profitable
    if stop0 is not None:
        stop = np.asarray(stop0, bool) | forced
    elif init == "continue":
        stop = forced.copy()
    else:
        stop = ~((A @ psi - r) > 0) | forced
    history = []
    W = psi.copy()
    for it in range(1, max_iter + 1):
        W = psi.copy()
        cont = np.flatnonzero(~stop)
        if cont.size:
            Acc = A[cont][:, cont]
            rhs = r[cont] - A[cont] @ np.where(stop, psi, 0.0)
            W[cont] = _solve_refined(Acc, rhs)
        AW_r = A @ W - r
        gap = W - psi
        # keep the current action on ties so the iteration terminates
        slack = 1e-13 * (1.0 + np.abs(psi))
        new_stop = np.where(stop, gap >= AW_r - slack, gap > AW_r + slack) | forced
        history.append(lcp_residual(A, r, psi, W, scale))
        if np.array_equal(new_stop, stop):
            return LcpResult(W, stop, it, history[-1], history)
        stop = new_stop
    raise SolverError(f"policy iteration: no convergence in {max_iter} steps", history)


if njit is not None:
    @njit(cache=True)
    def _psor_sweep(indptr, indices, data, r, psi, forced, order, W, omega):
        for p in range(order.size):
            i = order[p]
            if forced[i]:
                W[i] = psi[i]
                continue
            s = r[i]
            diag = 0.0
            for q in range(indptr[i], indptr[i + 1]):
                j = indices[q]
                if j == i:
                    diag += data[q]
                else:
                    s -= data[q] * W[j]
            w = W[i] + omega * (s / diag - W[i])
            W[i] = w if w < psi[i] else psi[i]
else:  # pragma: no cover
    def _psor_sweep(indptr, indices, data, r, psi, forced, order, W, omega):
        for i in order:
            if forced[i]:
                W[i] = psi[i]
                continue
            lo, hi = indptr[i], indptr[i + 1]
            cols, vals = indices[lo:hi], data[lo:hi]
            diag = vals[cols == i].sum()
            s = r[i] - vals[cols != i] @ W[cols[cols != i]]
            W[i] = min(psi[i], W[i] + omega * (s / diag - W[i]))


def psor(A: sps.csr_matrix, r, psi, forced=None, tol=1e-10, max_sweeps=200_000,
         omega=1.0, order=None, check_every=10, scale=None, callback=None) -> LcpResult:
    """Projected SOR from W = psi.

    Sweeps alternate between ``order`` and its reverse.  With omega = 1 the
    iterates decrease monotonically to the solution; ``callback(W)`` is
    invoked after every sweep when given.
    """
    n = A.shape[0]
    A = sps.csr_matrix(A)
    A.sum_duplicates()
    forced = np.zeros(n, bool) if forced is None else np.asarray(forced, bool)
    order = np.arange(n) if order is None else np.asarray(order, np.int64)
    reverse = order[::-1].copy()
    W = np.array(psi, dtype=float)
    history = []
    for sweep in range(1, max_sweeps + 1):
        _psor_sweep(A.indptr, A.indices, A.data, r, psi, forced,
                    order if sweep % 2 else reverse, W, omega)
        if callback is not None:
            callback(W)
        if sweep % check_every == 0:
            history.append(lcp_residual(A, r, psi, W, scale))
            if history[-1] < tol:
                stop = W >= psi - 1e-12 * (1.0 + np.abs(psi))
                return LcpResult(W, stop | forced, sweep, history[-1], history)
    raise SolverError(f"PSOR: no convergence in {max_sweeps} sweeps", history)
