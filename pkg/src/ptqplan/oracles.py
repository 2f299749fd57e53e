"""Brute-force and Monte Carlo references for the planning algorithms.

These exist to check the main code paths in tests and via ``ptqplan oracle``.
None of them calls the routine it validates: the Monte Carlo MSE uses its own
nearest-level quantizer, the allocation and schedule searches enumerate
every candidate, and the block search re-derives the feasible set and
evaluates each tiling with a plain per-block SVD.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Literal, Sequence

import numpy as np

from .errors import InfeasibleBudget, InvalidInput, NoFeasibleConfig
from .linalg import batched_svd
from .quantizer import DistortionTable

Method = Literal["monte-carlo", "exhaustive", "numeric-integration"]

MIN_MC_SAMPLES = 1_000_000
_MC_CHUNK = 1_000_000
_MAX_ENUMERATION = 5_000_000


@dataclass(frozen=True)
class OracleResult:
    value: Any
    method: Method
    samples_or_states: int

    def to_dict(self) -> dict:
        value = self.value
        if hasattr(value, "to_dict"):
            value = value.to_dict()
        elif hasattr(value, "__dataclass_fields__"):
            value = {k: getattr(value, k) for k in value.__dataclass_fields__}
        return {"value": value, "method": self.method, "samples_or_states": self.samples_or_states}


def _nearest_level(x: np.ndarray, a: float, b: int) -> np.ndarray:
    # Explicit level list and nearest-neighbour search; exact ties have measure zero.
    k = 2 ** (b - 1) - 1
    levels = np.arange(-k, k + 1) * (2 * a / (2**b - 1))
    if levels.size == 1:
        return np.zeros_like(x)
    idx = np.clip(np.searchsorted(levels, x), 1, levels.size - 1)
    lo = levels[idx - 1]
    hi = levels[idx]
    return np.where(np.abs(x - lo) < np.abs(x - hi), lo, hi)


def mc_gaussian_mse(sigma: float, b: int, a: float, samples: int = 10_000_000, seed: int = 0) -> OracleResult:
    """Empirical MSE of the ``b``-bit quantizer with clip ``a`` on ``N(0, sigma^2)``."""
    if samples < MIN_MC_SAMPLES:
        raise InvalidInput(f"Monte Carlo needs >= {MIN_MC_SAMPLES} samples, got {samples}")
    rng = np.random.default_rng(seed)
    total = 0.0
    left = samples
    while left > 0:
        n = min(left, _MC_CHUNK)
        x = sigma * rng.standard_normal(n)
        e = x - _nearest_level(x, a, b)
        total += float(e @ e)
        left -= n
    return OracleResult(total / samples, "monte-carlo", samples)


# --- weight bit allocation -------------------------------------------------


def exhaustive_allocation(stats, b_target: float, b_min: int = 2, b_max: int = 8) -> OracleResult:
    """Minimum of ``sum N var 2^(-2b)`` over all in-bounds integer allocations
    with ``sum N b <= floor(B_target sum N)``.

    Objective ties (relative 1e-12) go to the allocation that is largest in
    layer order, mirroring the greedy's preference for earlier layers.
    """
    act = [s for s in stats if s.active]
    if not act:
        raise InvalidInput("no active layers")
    if len(act) > 8:
        raise InvalidInput("exhaustive allocation is limited to 8 layers")
    w = np.array([s.param_count for s in act])
    var = np.array([s.mean_var for s in act])
    cap = math.floor(b_target * w.sum())
    choices = np.arange(b_min, b_max + 1)
    grid = np.stack(np.meshgrid(*([choices] * len(act)), indexing="ij"), -1).reshape(-1, len(act))
    feasible = grid[grid @ w <= cap]
    if feasible.size == 0:
        raise InfeasibleBudget("no allocation within bounds meets the budget")
    obj = (w * var * 2.0 ** (-2.0 * feasible)).sum(axis=1)
    best = obj.min()
    tied = feasible[obj <= best + 1e-12 * abs(best)]
    pick = tied[np.lexsort(tied.T[::-1])[-1]]
    value = {s.layer_id: int(b) for s, b in zip(act, pick)}
    return OracleResult(value, "exhaustive", int(grid.shape[0]))


# --- activation schedules ---------------------------------------------------


def _enumerate_sequences(bits: Sequence[int], n: int) -> np.ndarray:
    count = len(bits) ** n
    if count > _MAX_ENUMERATION:
        raise InvalidInput(f"{count} sequences exceed the enumeration limit")
    idx = np.indices((len(bits),) * n).reshape(n, -1).T
    return np.asarray(bits)[idx]


def exhaustive_schedule(trace, b_target_avg: float, bit_set, table: DistortionTable, max_segments=8) -> OracleResult:
    """Best per-timestep bit sequence with at most ``max_segments`` runs.

    Ties: fewest segments, then lexicographically smallest sequence.
    """
    from .vatmp import TemporalSchedule

    n = len(trace)
    if n == 0 or n > 10:
        raise InvalidInput(f"exhaustive schedule needs 1 <= T <= 10, got {n}")
    bits = sorted({int(b) for b in bit_set})
    budget = math.floor(b_target_avg * n)
    if bits[0] * n > budget:
        raise InfeasibleBudget(f"{n} steps at {bits[0]} bits exceed budget {budget}")
    seqs = _enumerate_sequences(bits, n)
    kappa = np.array([table.kappa(b) for b in bits])
    kseq = kappa[np.searchsorted(bits, seqs)]
    v = np.asarray(trace.variances, dtype=np.float64)
    costs = kseq @ v
    nseg = 1 + (np.diff(seqs, axis=1) != 0).sum(axis=1)
    cap = n if max_segments is None else max_segments
    ok = (seqs.sum(axis=1) <= budget) & (nseg <= cap)
    seqs, costs, nseg = seqs[ok], costs[ok], nseg[ok]
    best = costs.min()
    tie = costs <= best + 1e-12 * abs(best)
    seqs, nseg = seqs[tie], nseg[tie]
    seqs = seqs[nseg == nseg.min()]
    pick = seqs[np.lexsort(seqs.T[::-1])[0]]
    sched = TemporalSchedule.from_bits(trace.layer_id, pick.tolist(), float(kappa[np.searchsorted(bits, pick)] @ v), budget)
    return OracleResult(sched, "exhaustive", int(ok.size))


def separable_schedule(trace, b_target_avg: float, bit_set, table: DistortionTable) -> OracleResult:
    """Optimum without the segment restriction, by greedy marginal allocation.

    Valid when ``kappa`` is convex over a contiguous bit set, so the
    per-timestep problem has decreasing marginal returns.
    """
    from .vatmp import TemporalSchedule

    bits = sorted({int(b) for b in bit_set})
    if bits != list(range(bits[0], bits[-1] + 1)):
        raise InvalidInput("separable schedule needs a contiguous bit set")
    n = len(trace)
    budget = math.floor(b_target_avg * n)
    if bits[0] * n > budget:
        raise InfeasibleBudget(f"{n} steps at {bits[0]} bits exceed budget {budget}")
    v = np.asarray(trace.variances, dtype=np.float64)
    cur = [bits[0]] * n
    spare = budget - bits[0] * n
    steps = 0
    while spare > 0:
        gains = [
            (table.kappa(b) - table.kappa(b + 1)) * v[t] if b < bits[-1] else -1.0
            for t, b in enumerate(cur)
        ]
        t = int(np.argmax(gains))
        if gains[t] <= 0:
            break
        cur[t] += 1
        spare -= 1
        steps += 1
    cost = float(sum(table.kappa(b) * x for b, x in zip(cur, v)))
    return OracleResult(TemporalSchedule.from_bits(trace.layer_id, cur, cost, budget), "exhaustive", steps)


# --- block configuration ----------------------------------------------------


def exhaustive_block_search(w_res, out: int, inp: int, r: int) -> OracleResult:
    """Evaluate every feasible tiling's rank-1-per-block error and return the best.

    The result value is ``(s_o, s_i, budget)``. Ties (relative 1e-9 of
    ``||w_res||``) go to the squarest block, then the larger budget, then
    the smaller ``s_o``.
    """
    w = np.asarray(w_res, dtype=np.float64)
    if max(out, inp) > 128:
        raise InvalidInput("exhaustive block search is limited to 128x128")
    cap = r * (out + inp)
    rows = []
    for s_o in range(1, out + 1):
        if out % s_o:
            continue
        for s_i in range(1, inp + 1):
            if inp % s_i:
                continue
            budget = (out // s_o) * (inp // s_i) * (s_o + s_i + 1)
            if budget > cap:
                continue
            blocks = w.reshape(out // s_o, s_o, inp // s_i, s_i).transpose(0, 2, 1, 3)
            _, s, _ = batched_svd(blocks)
            err = math.sqrt(max(float((s[..., 1:] ** 2).sum()), 0.0))
            rows.append((err, s_o, s_i, budget))
    if not rows:
        raise NoFeasibleConfig(f"no feasible tiling for {out}x{inp} at r={r}")
    best = min(e for e, *_ in rows)
    tol = 1e-9 * max(float(np.linalg.norm(w)), np.finfo(float).tiny)
    tied = [row for row in rows if row[0] <= best + tol]
    _, s_o, s_i, budget = min(tied, key=lambda t: (abs(t[1] - t[2]), -t[3], t[1]))
    return OracleResult((s_o, s_i, budget), "exhaustive", len(rows))

