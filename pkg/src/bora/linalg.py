"""Dense real matrix kernels: validation, product, norms, Jacobi SVD, rank.

Matrices are plain ``float64`` numpy arrays. The kernels here avoid BLAS so
their summation order is fixed and results are bit-stable on one platform.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import ConvergenceError, NumericError, ShapeError

__all__ = [
    "SvdResult",
    "check_matrix",
    "check_vector",
    "matmul",
    "frobenius_norm",
    "svd",
    "numerical_rank",
]

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


class SvdResult(NamedTuple):
    """Thin SVD ``M = U @ diag(s) @ V.T`` with ``k = min(rows, cols)`` triplets."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def check_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite, non-empty, C-ordered 2-D float64 array.

    Raises
    ------
    ShapeError
        If ``x`` is not two-dimensional or has an empty axis.
    NumericError
        If any entry is NaN or infinite.
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def check_vector(x, length: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ShapeError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def matmul(lhs, rhs) -> np.ndarray:
    """Matrix product with a fixed summation order.

    Entry ``(i, j)`` is accumulated as ``((l[i,0]*r[0,j] + l[i,1]*r[1,j]) + ...)``,
    the same order as a naive triple loop over ``k``.

    Raises
    ------
    ShapeError
        If ``lhs.cols != rhs.rows``.
    """
    lhs = check_matrix(lhs, "lhs")
    rhs = check_matrix(rhs, "rhs")
    if lhs.shape[1] != rhs.shape[0]:
        raise ShapeError(
            f"cannot multiply {lhs.shape[0]}x{lhs.shape[1]} by {rhs.shape[0]}x{rhs.shape[1]}"
        )
    out = lhs[:, 0:1] * rhs[0:1, :]
    for k in range(1, lhs.shape[1]):
        out += lhs[:, k : k + 1] * rhs[k : k + 1, :]
    return out


def frobenius_norm(x) -> float:
    x = check_matrix(x)
    return float(np.sqrt(np.sum(x * x)))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: ``n - 1`` rounds (n even) of disjoint column pairs."""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        if p:
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a: np.ndarray, tol: float, max_sweeps: int):
    """One-sided Jacobi on a matrix with ``rows >= cols``; returns (U, s, V)."""
    m, n = a.shape
    work = a.copy()
    v = np.eye(n)
    scale = float(np.sqrt(np.sum(a * a)))
    # columns at or below this norm are numerically null and never rotated
    null_sq = (np.finfo(float).eps * max(m, n) * scale) ** 2
    schedule = _round_robin(n)

    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        for p, q in schedule:
            ap, aq = work[:, p], work[:, q]
            alpha = np.sum(ap * ap, axis=0)
            beta = np.sum(aq * aq, axis=0)
            gamma = np.sum(ap * aq, axis=0)
            live = (alpha > null_sq) & (beta > null_sq)
            denom = np.sqrt(np.where(live, alpha * beta, 1.0))
            mag = np.where(live, np.abs(gamma) / denom, 0.0)
            if mag.size:
                off = max(off, float(mag.max()))
            rot = mag > tol
            if not np.any(rot):
                continue
            p, q = p[rot], q[rot]
            alpha, beta, gamma = alpha[rot], beta[rot], gamma[rot]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ap, aq = work[:, p], work[:, q]
            work[:, p] = c * ap - s * aq
            work[:, q] = s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if off <= tol:
            break
    else:
        raise ConvergenceError(
            f"Jacobi SVD did not converge in {max_sweeps} sweeps (residual {off:.3e})",
            residual=off,
        )

    sv = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-sv, kind="stable")
    sv, work, v = sv[order], work[:, order], v[:, order]
    u = np.zeros((m, n))
    live = sv * sv > null_sq
    u[:, live] = work[:, live] / sv[live]
    _complete_basis(u, live)
    return u, sv, v


def _complete_basis(u: np.ndarray, filled: np.ndarray) -> None:
    """Fill the columns of ``u`` not marked ``filled`` with an orthonormal complement."""
    m = u.shape[0]
    basis = [u[:, j] for j in np.flatnonzero(filled)]
    candidates = iter(range(m))
    for j in np.flatnonzero(~filled):
        while True:
            e = np.zeros(m)
            e[next(candidates)] = 1.0
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            norm = np.sqrt(e @ e)
            if norm > 1e-8:
                break
        u[:, j] = e / norm
        basis.append(u[:, j])


def svd(x, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> SvdResult:
    """Thin singular value decomposition by one-sided (Hestenes) Jacobi.

    Column pairs are swept in round-robin order until every pair's cosine
    ``|a_p . a_q| / (|a_p| |a_q|)`` is at most ``tol``.

    Parameters
    ----------
    x : array_like, shape (m, n)
    tol : float
        Convergence threshold on the off-diagonal rotation magnitude.
    max_sweeps : int
        Sweep budget before :class:`ConvergenceError` is raised.

    Returns
    -------
    SvdResult
        Singular values in descending order, ``U`` of shape ``(m, k)`` and
        ``V`` of shape ``(n, k)`` with orthonormal columns, ``k = min(m, n)``.
    """
    x = check_matrix(x, "input")
    m, n = x.shape
    if m >= n:
        u, s, v = _jacobi_tall(x, tol, max_sweeps)
        return SvdResult(s, u, v)
    u, s, v = _jacobi_tall(x.T.copy(), tol, max_sweeps)
    return SvdResult(s, v, u)


def numerical_rank(x, threshold: float) -> int:
    """Number of singular values strictly greater than ``threshold``."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return int(np.count_nonzero(svd(x).singular_values > threshold))
