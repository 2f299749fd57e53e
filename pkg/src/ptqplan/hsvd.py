"""Hierarchical SVD weight decomposition.

A weight ``W`` (out x in) is rotated into the Hadamard domain, ``W_H = W H``.
A truncated SVD gives the global branch; the residual is tiled into
``s_o x s_i`` blocks, each approximated by its top singular triplet (the
local branch), and what is left is quantized per output channel::

    W_hat = (W_global + W_local + deq(Q(W_res - W_local))) H^T

The local tiling is chosen among all divisor pairs whose parameter count
``(out/s_o)(in/s_i)(s_o + s_i + 1)`` does not exceed the global budget
``r (out + in)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NoFeasibleConfig, RankExceedsDimension, ShapeError
from .linalg import (
    SvdFactors,
    as_matrix,
    assemble_blocks,
    batched_singular_values,
    batched_svd,
    hadamard_matrix,
    partition_blocks,
    truncated_svd,
)
from .quantizer import (
    DistortionTable,
    QuantizedTensor,
    dequantize,
    quantize_activations,
    quantize_weights_per_channel,
)

log = logging.getLogger(__name__)

# Relative Frobenius-error difference below which two tilings count as tied.
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class BlockConfig:
    s_o: int
    s_i: int
    budget: int


def divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def global_budget(out: int, inp: int, r: int) -> int:
    return r * (out + inp)


def local_budget(out: int, inp: int, s_o: int, s_i: int) -> int:
    if out % s_o or inp % s_i:
        raise InvalidInput(f"block {s_o}x{s_i} does not divide {out}x{inp}")
    return (out // s_o) * (inp // s_i) * (s_o + s_i + 1)


def feasible_blocks(out: int, inp: int, r: int) -> list[BlockConfig]:
    """All tilings within the rank-``r`` global budget, largest budget first.

    Raises :class:`NoFeasibleConfig` when no tiling fits.
    """
    if r < 1:
        raise InvalidInput(f"local budget rank must be >= 1, got {r}")
    cap = global_budget(out, inp, r)
    configs = [
        BlockConfig(s_o, s_i, local_budget(out, inp, s_o, s_i))
        for s_o in divisors(out)
        for s_i in divisors(inp)
    ]
    configs = [c for c in configs if c.budget <= cap]
    if not configs:
        raise NoFeasibleConfig(f"no block tiling of {out}x{inp} fits budget {cap} (r={r})")
    configs.sort(key=lambda c: (-c.budget, c.s_o, c.s_i))
    return configs


@dataclass(frozen=True)
class LocalBranch:
    config: BlockConfig
    u: np.ndarray  # (P, Q, s_o)
    v: np.ndarray  # (P, Q, s_i)
    sigma: np.ndarray  # (P, Q)

    def matrix(self) -> np.ndarray:
        blocks = self.sigma[..., None, None] * self.u[..., :, None] * self.v[..., None, :]
        return assemble_blocks(blocks)


def local_branch(w_res, cfg: BlockConfig) -> LocalBranch:
    """Best rank-1 approximation of every ``cfg`` block of ``w_res``.

    Each block keeps its top singular triplet, with the sign fixed so the
    first nonzero entry of ``u`` is positive.
    """
    w = np.asarray(w_res, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {w.shape}")
    if w.shape[0] % cfg.s_o or w.shape[1] % cfg.s_i:
        raise ShapeError(f"block {cfg.s_o}x{cfg.s_i} does not tile shape {w.shape}")
    blocks = partition_blocks(w, cfg.s_o, cfg.s_i)
    u, s, vt = batched_svd(blocks)
    u1 = u[..., :, 0]
    v1 = vt[..., 0, :]
    s1 = s[..., 0]
    nz = np.abs(u1) > 0
    first = np.take_along_axis(u1, np.argmax(nz, axis=-1)[..., None], axis=-1)[..., 0]
    sign = np.where(first < 0, -1.0, 1.0)
    return LocalBranch(cfg, u1 * sign[..., None], v1 * sign[..., None], s1)


def local_error(w_res, cfg: BlockConfig) -> float:
    """Frobenius error of the rank-1-per-block fit, from the discarded singular values."""
    w = np.asarray(w_res, dtype=np.float64)
    s = batched_singular_values(partition_blocks(w, cfg.s_o, cfg.s_i))
    return float(np.sqrt(np.sum(s[..., 1:] ** 2)))


def select_block_config(w_res, candidates: list[BlockConfig]) -> BlockConfig:
    """Candidate with the smallest local-branch Frobenius error.

    Errors within ``TIE_RTOL * ||w_res||`` tie; ties go to the squarest block,
    then the larger budget, then the smaller ``s_o``.
    """
    if not candidates:
        raise NoFeasibleConfig("no candidate block configurations")
    if len(candidates) == 1:
        return candidates[0]
    w = np.asarray(w_res, dtype=np.float64)
    errs = [local_error(w, c) for c in candidates]
    tol = TIE_RTOL * max(float(np.linalg.norm(w)), np.finfo(float).tiny)
    best = min(errs)
    tied = [c for c, e in zip(candidates, errs) if e <= best + tol]
    return min(tied, key=lambda c: (abs(c.s_o - c.s_i), -c.budget, c.s_o))


@dataclass(frozen=True)
class QuantizedWeight:
    """One layer after H-SVD: FP global and local branches plus a quantized residual."""

    out: int
    inp: int
    hadamard_size: int
    global_factors: SvdFactors
    local: LocalBranch | None
    residual: QuantizedTensor
    warning: str | None = None

    @property
    def weight_bits(self) -> int:
        return self.residual.bits

    @property
    def rank(self) -> int:
        return self.global_factors.rank

    def global_matrix(self) -> np.ndarray:
        return self.global_factors.matrix()

    def local_matrix(self) -> np.ndarray:
        if self.local is None:
            return np.zeros((self.out, self.inp))
        return self.local.matrix()

    def fp_matrix(self) -> np.ndarray:
        """Full-precision branches in the Hadamard domain."""
        return self.global_matrix() + self.local_matrix()

    def hadamard_reconstruction(self) -> np.ndarray:
        return self.fp_matrix() + dequantize(self.residual)

    def reconstruct(self) -> np.ndarray:
        return self.hadamard_reconstruction() @ hadamard_matrix(self.hadamard_size).T

    def fp_param_count(self) -> int:
        n = self.rank * (self.out + self.inp)
        if self.local is not None:
            n += self.local.config.budget
        return n


def hsvd_decompose(
    w,
    r: int,
    weight_bits: int,
    table: DistortionTable,
    local_rank: int | None = None,
    use_local: bool = True,
    factors: SvdFactors | None = None,
) -> QuantizedWeight:
    """Decompose and quantize one layer.

    ``r`` is the global SVD rank and ``local_rank`` the rank whose global
    budget caps the local branch (defaults to ``r``). With ``use_local=False``
    or no feasible tiling, the local branch is empty and the result is the
    plain low-rank-plus-quantized-residual backbone. ``factors`` may carry a
    precomputed full SVD of ``w @ H`` so several ranks can share one
    factorization.
    """
    w = as_matrix(w, "weight")
    out, inp = w.shape
    h = hadamard_matrix(inp)
    w_h = w @ h
    if factors is None:
        factors = truncated_svd(w_h, r)
    else:
        if factors.shape != w_h.shape:
            raise ShapeError(f"factors of shape {factors.shape} do not match weight {w_h.shape}")
        if r > factors.rank:
            raise RankExceedsDimension(f"rank {r} exceeds the {factors.rank} precomputed factors")
        factors = factors.truncate(r)
    w_res = w_h - factors.matrix()

    local = None
    warning = None
    lr = r if local_rank is None else local_rank
    if use_local and lr > 0:
        try:
            cfg = select_block_config(w_res, feasible_blocks(out, inp, lr))
            local = local_branch(w_res, cfg)
        except NoFeasibleConfig as exc:
            warning = str(exc)
            log.warning("local branch disabled: %s", exc)
    target = w_res if local is None else w_res - local.matrix()
    residual = quantize_weights_per_channel(target, weight_bits, table)
    return QuantizedWeight(out, inp, inp, factors, local, residual, warning)


def forward(qw: QuantizedWeight, x, act_bits: int | None, table: DistortionTable) -> np.ndarray:
    """Simulated quantized linear layer.

    ``x`` is a vector of length ``in`` or a ``(tokens, in)`` matrix. The
    quantized residual consumes the Gaussian-quantized Hadamard-domain
    activation; the FP branches see the unquantized ``H^T x``. Pass
    ``act_bits=None`` to leave activations unquantized.
    """
    xa = np.asarray(x, dtype=np.float64)
    vector = xa.ndim == 1
    xs = xa[None, :] if vector else xa
    if xs.ndim != 2 or xs.shape[1] != qw.inp:
        raise ShapeError(f"input shape {xa.shape} does not match layer input {qw.inp}")
    h = hadamard_matrix(qw.hadamard_size)
    z = xs @ h
    if act_bits is None:
        zq = z
    else:
        zq = dequantize(quantize_activations(xs, h, act_bits, table))
    y = zq @ dequantize(qw.residual).T + z @ qw.fp_matrix().T
    return y[0] if vector else y
