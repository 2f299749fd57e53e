"""Dense matrix kernels: Hadamard matrices, Jacobi SVD and block tiling.

Matrices are plain 2-D ``numpy.ndarray`` values; all arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    InvalidBlockSize,
    InvalidInput,
    RankExceedsDimension,
    ShapeError,
    UnsupportedDimension,
)

__all__ = [
    "SvdFactors",
    "as_matrix",
    "is_power_of_two",
    "hadamard_matrix",
    "svd",
    "batched_svd",
    "batched_singular_values",
    "truncated_svd",
    "partition_blocks",
    "assemble_blocks",
]

_JACOBI_TOL = 1e-15
_MAX_SWEEPS = 80


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate ``m`` as a finite 2-D array and return it as float64."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SvdFactors:
    """Rank-r factorization ``left @ diag(singular_values) @ right``."""

    left: np.ndarray  # (rows, r), orthonormal columns
    singular_values: np.ndarray  # (r,), nonincreasing
    right: np.ndarray  # (r, cols), orthonormal rows

    @property
    def rank(self) -> int:
        return int(self.singular_values.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.left.shape[0], self.right.shape[1])

    def matrix(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right

    def truncate(self, r: int) -> "SvdFactors":
        return SvdFactors(self.left[:, :r].copy(), self.singular_values[:r].copy(), self.right[:r].copy())


@lru_cache(maxsize=None)
def _hadamard_cached(n: int) -> np.ndarray:
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    h = h / np.sqrt(n)
    h.setflags(write=False)
    return h


def hadamard_matrix(n: int) -> np.ndarray:
    """Normalized Sylvester Hadamard matrix of order ``n`` (``H @ H.T == I``)."""
    if not isinstance(n, (int, np.integer)) or not is_power_of_two(int(n)):
        raise UnsupportedDimension(f"Hadamard order must be a power of two, got {n}")
    return _hadamard_cached(int(n)).copy()


@lru_cache(maxsize=None)
def _round_robin(n: int) -> tuple[np.ndarray, ...]:
    # Tournament schedule for even n: n-1 rounds, each an ordering of the
    # column labels in which slots (2k, 2k+1) form the k-th disjoint pair.
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        order = np.empty(n, dtype=np.intp)
        order[0::2] = players[:half]
        order[1::2] = players[half:][::-1]
        rounds.append(order)
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_tall(a: np.ndarray, with_v: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """One-sided (Hestenes) Jacobi on a stack of tall matrices ``(..., m, n)``, m >= n.

    Returns ``(u_scaled, v)`` with ``a @ v = u_scaled`` and mutually orthogonal
    columns of ``u_scaled``. ``v`` is None when ``with_v`` is false.

    Columns are stored as rows and reordered once per round so that each
    round's pairs sit in adjacent slots; the final column order is arbitrary
    but consistent between ``u_scaled`` and ``v``.
    """
    *batch, m, n = a.shape
    n_even = n + (n % 2)
    ut = np.zeros((*batch, n_even, m))
    ut[..., :n, :] = np.swapaxes(a, -1, -2)
    vt = np.zeros((*batch, n_even, n_even)) if with_v else None
    if with_v:
        vt[..., np.arange(n_even), np.arange(n_even)] = 1.0
    labels = np.arange(n_even)
    if n_even >= 2:
        pos = np.empty(n_even, dtype=np.intp)
        for _ in range(_MAX_SWEEPS):
            rotated = False
            for order in _round_robin(n_even):
                pos[labels] = np.arange(n_even)
                perm = pos[order]
                ut = ut[..., perm, :]
                if with_v:
                    vt = vt[..., perm, :]
                labels = order
                x = ut[..., 0::2, :]
                y = ut[..., 1::2, :]
                alpha = np.einsum("...km,...km->...k", x, x)
                beta = np.einsum("...km,...km->...k", y, y)
                gamma = np.einsum("...km,...km->...k", x, y)
                active = np.abs(gamma) > _JACOBI_TOL * np.sqrt(alpha * beta)
                if not active.any():
                    continue
                rotated = True
                g = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
                c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)[..., None]
                s = np.where(active, c[..., 0] * t, 0.0)[..., None]
                x0 = x.copy()
                x *= c
                x -= s * y
                y *= c
                y += s * x0
                if with_v:
                    p = vt[..., 0::2, :]
                    q = vt[..., 1::2, :]
                    p0 = p.copy()
                    p *= c
                    p -= s * q
                    q *= c
                    q += s * p0
            if not rotated:
                break
    # Padding column (odd n) is the zero column; drop it by label.
    keep = np.flatnonzero(labels < n)
    u_scaled = np.swapaxes(ut[..., keep, :], -1, -2)
    if not with_v:
        return u_scaled, None
    v = np.swapaxes(vt[..., keep, :], -1, -2)[..., :n, :]
    return u_scaled, v


def _complete_orthonormal(q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``q`` not flagged in ``keep`` with an orthonormal completion."""
    q = q.copy()
    m = q.shape[0]
    basis = q[:, keep]
    for k in np.flatnonzero(~keep):
        # Project every coordinate axis off the basis and take the largest
        # remainder; some axis always keeps norm >= sqrt((m - rank) / m).
        rest = np.eye(m)
        for _ in range(2):
            rest -= basis @ (basis.T @ rest)
        norms = np.linalg.norm(rest, axis=0)
        j = int(np.argmax(norms))
        e = rest[:, j] / norms[j]
        q[:, k] = e
        basis = np.column_stack([basis, e])
    return q


def batched_svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD of a stack ``(..., m, n)``: returns ``(u, s, vt)`` with k = min(m, n).

    Singular values are sorted descending; columns of ``u`` and rows of ``vt``
    are orthonormal (null directions are completed deterministically).
    """
    a = np.asarray(a, dtype=np.float64)
    *batch, m, n = a.shape
    if m < n:
        u, s, vt = batched_svd(np.swapaxes(a, -1, -2))
        return np.swapaxes(vt, -1, -2), s, np.swapaxes(u, -1, -2)
    us, v = _jacobi_tall(a)
    s = np.sqrt(np.einsum("...mk,...mk->...k", us, us))
    order = np.argsort(-s, axis=-1, kind="stable")
    s = np.take_along_axis(s, order, axis=-1)
    us = np.take_along_axis(us, order[..., None, :], axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)

    smax = s[..., :1] if n else np.zeros((*batch, 1))
    keep = s > max(m, n) * np.finfo(float).eps * smax
    u = us / np.where(keep, s, 1.0)[..., None, :]
    flat_u = u.reshape(-1, m, n)
    flat_keep = keep.reshape(-1, n)
    for idx in np.flatnonzero(~flat_keep.all(axis=-1)):
        flat_u[idx] = _complete_orthonormal(flat_u[idx], flat_keep[idx])
    u = flat_u.reshape(*batch, m, n)
    return u, s, np.swapaxes(v, -1, -2)


def batched_singular_values(a: np.ndarray) -> np.ndarray:
    """Singular values of a stack ``(..., m, n)``, descending, without the vectors."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-2] < a.shape[-1]:
        a = np.swapaxes(a, -1, -2)
    us, _ = _jacobi_tall(a, with_v=False)
    s = np.sqrt(np.einsum("...mk,...mk->...k", us, us))
    return -np.sort(-s, axis=-1)


def svd(m) -> SvdFactors:
    """Thin SVD by one-sided Jacobi; rank of the result is ``min(rows, cols)``."""
    a = as_matrix(m)
    u, s, vt = batched_svd(a)
    return SvdFactors(u, s, vt)


def truncated_svd(m, r: int) -> SvdFactors:
    """Best rank-``r`` approximation factors (Eckart-Young). ``r = 0`` gives empty factors."""
    a = as_matrix(m)
    if r < 0 or r > min(a.shape):
        raise RankExceedsDimension(f"rank {r} outside [0, {min(a.shape)}] for shape {a.shape}")
    if r == 0:
        return SvdFactors(np.zeros((a.shape[0], 0)), np.zeros(0), np.zeros((0, a.shape[1])))
    return svd(a).truncate(r)


def partition_blocks(m, s_o: int, s_i: int) -> np.ndarray:
    """Tile ``m`` into non-overlapping ``s_o x s_i`` blocks.

    Returns an array of shape ``(rows // s_o, cols // s_i, s_o, s_i)``;
    ``blocks[p, q]`` is the block at block-row ``p``, block-column ``q``.
    """
    a = np.asarray(m)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    rows, cols = a.shape
    if s_o < 1 or s_i < 1 or rows % s_o or cols % s_i:
        raise InvalidBlockSize(f"block {s_o}x{s_i} does not tile a {rows}x{cols} matrix")
    return a.reshape(rows // s_o, s_o, cols // s_i, s_i).swapaxes(1, 2).copy()


def assemble_blocks(blocks: np.ndarray) -> np.ndarray:
    """Inverse of :func:`partition_blocks`."""
    p, q, s_o, s_i = blocks.shape
    return blocks.swapaxes(1, 2).reshape(p * s_o, q * s_i).copy()
