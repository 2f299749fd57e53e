"""Variance-aware cross-layer weight bit allocation.

Layer distortion is modelled as ``N * var * 2**(-2b)``; minimizing its sum
under a parameter-weighted average-bit budget has the closed form

    b* = B_target + 0.5 * (log2 var - weighted mean of log2 var)

which is then discretized greedily: start from ``clip(floor(b*))``; if
clipping pushed that start over budget, take bits back one at a time from the
layer whose distortion grows least; then hand out the remaining budget one
bit at a time to the layer with the largest ``var * 4**(-b)``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyActiveSet, InvalidInput

log = logging.getLogger(__name__)

EPS = 1e-12
DEFAULT_BOUNDS = (2, 8)


@dataclass(frozen=True)
class LayerStats:
    layer_id: str
    mean_var: float
    param_count: int
    active: bool = True

    def __post_init__(self):
        if self.param_count < 1:
            raise InvalidInput(f"{self.layer_id}: param_count must be >= 1")
        if not math.isfinite(self.mean_var) or self.mean_var < 0:
            raise InvalidInput(f"{self.layer_id}: mean_var must be finite and >= 0")


def layer_stats(w_h, layer_id: str, active: bool = True) -> LayerStats:
    """Average output-channel (row) variance of a Hadamard-domain weight."""
    w = np.asarray(w_h, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise InvalidInput(f"{layer_id}: expected a non-empty 2-D weight")
    return LayerStats(layer_id, float(np.var(w, axis=1).mean()), int(w.size), active)


def _active(stats: Sequence[LayerStats]) -> list[LayerStats]:
    act = [s for s in stats if s.active]
    if not act:
        raise EmptyActiveSet("no active layers to allocate")
    return act


def continuous_bits(stats: Sequence[LayerStats], b_target: float, eps: float = EPS) -> dict[str, float]:
    if not b_target > 0:
        raise InvalidInput(f"b_target must be positive, got {b_target}")
    act = _active(stats)
    w = np.array([s.param_count for s in act], dtype=np.float64)
    logv = np.log2(np.maximum([s.mean_var for s in act], eps))
    mean = float(w @ logv / w.sum())
    return {s.layer_id: float(b_target + 0.5 * (lv - mean)) for s, lv in zip(act, logv)}


@dataclass
class GreedyResult:
    bits: dict[str, int]
    budget: int
    used: int

    @property
    def over_budget(self) -> bool:
        return self.used > self.budget


def _greedy(
    continuous: Mapping[str, float],
    stats: Sequence[LayerStats],
    b_target: float,
    b_min: int,
    b_max: int,
) -> GreedyResult:
    if b_min > b_max:
        raise InvalidInput(f"b_min {b_min} > b_max {b_max}")
    act = _active(stats)
    ids = [s.layer_id for s in act]
    w = [s.param_count for s in act]
    var = [s.mean_var for s in act]
    bits = [min(max(math.floor(continuous[i]), b_min), b_max) for i in ids]
    budget = math.floor(b_target * sum(w))
    used = sum(wi * bi for wi, bi in zip(w, bits))
    while used > budget:
        # Repair: cheapest single-bit removal (ties to the later layer).
        cands = [k for k in range(len(ids)) if bits[k] > b_min]
        if not cands:
            log.warning("minimum bits exceed budget: %d > %d parameter-bits", used, budget)
            return GreedyResult(dict(zip(ids, bits)), budget, used)
        k = min(reversed(cands), key=lambda j: var[j] * 4.0 ** (-(bits[j] - 1)))
        bits[k] -= 1
        used -= w[k]
    remaining = budget - used
    while True:
        best = None
        best_gain = -1.0
        for k in range(len(ids)):
            if bits[k] < b_max and w[k] <= remaining:
                gain = var[k] * 4.0 ** (-bits[k])
                if gain > best_gain:
                    best, best_gain = k, gain
        if best is None:
            break
        bits[best] += 1
        remaining -= w[best]
    return GreedyResult(dict(zip(ids, bits)), budget, budget - remaining)


def discretize_greedy(
    continuous: Mapping[str, float],
    stats: Sequence[LayerStats],
    b_target: float,
    b_min: int = DEFAULT_BOUNDS[0],
    b_max: int = DEFAULT_BOUNDS[1],
) -> dict[str, int]:
    """Integer bits per active layer. Over-budget floors are returned as-is (and logged)."""
    return _greedy(continuous, stats, b_target, b_min, b_max).bits


def allocation_distortion(bits: Mapping[str, float], stats: Sequence[LayerStats]) -> float:
    return float(
        sum(s.param_count * s.mean_var * 2.0 ** (-2 * bits[s.layer_id]) for s in stats if s.active)
    )


@dataclass
class BitAllocation:
    continuous: dict[str, float]
    discrete: dict[str, int]
    target_avg: float
    bounds: tuple[int, int]
    stats: list[LayerStats] = field(default_factory=list)
    budget: int = 0
    used: int = 0

    @property
    def over_budget(self) -> bool:
        return self.used > self.budget

    @property
    def realized_avg(self) -> float:
        act = [s for s in self.stats if s.active]
        total = sum(s.param_count for s in act)
        return sum(s.param_count * self.discrete[s.layer_id] for s in act) / total

    @property
    def objective(self) -> float:
        return allocation_distortion(self.discrete, self.stats)

    def to_dict(self) -> dict:
        layers = [
            {
                "layer": s.layer_id,
                "b_continuous": self.continuous[s.layer_id],
                "b_discrete": self.discrete[s.layer_id],
                "mean_var": s.mean_var,
                "params": s.param_count,
            }
            for s in self.stats
            if s.active
        ]
        return {
            "layers": layers,
            "summary": {
                "target": self.target_avg,
                "realized_avg": self.realized_avg,
                "objective": self.objective,
                "bounds": list(self.bounds),
                "budget": self.budget,
                "used": self.used,
                "over_budget": self.over_budget,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "BitAllocation":
        rows = d["layers"]
        summ = d["summary"]
        stats = [LayerStats(r["layer"], float(r["mean_var"]), int(r["params"])) for r in rows]
        return cls(
            continuous={r["layer"]: float(r["b_continuous"]) for r in rows},
            discrete={r["layer"]: int(r["b_discrete"]) for r in rows},
            target_avg=float(summ["target"]),
            bounds=(int(summ["bounds"][0]), int(summ["bounds"][1])),
            stats=stats,
            budget=int(summ["budget"]),
            used=int(summ["used"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "BitAllocation":
        return cls.from_dict(json.loads(text))


def allocate(
    stats: Sequence[LayerStats],
    b_target: float,
    b_min: int = DEFAULT_BOUNDS[0],
    b_max: int = DEFAULT_BOUNDS[1],
    eps: float = EPS,
) -> BitAllocation:
    """Closed-form relaxation followed by greedy discretization."""
    cont = continuous_bits(stats, b_target, eps)
    res = _greedy(cont, stats, b_target, b_min, b_max)
    return BitAllocation(cont, res.bits, float(b_target), (b_min, b_max), list(stats), res.budget, res.used)


def brute_force_allocation(stats, b_target, b_min=DEFAULT_BOUNDS[0], b_max=DEFAULT_BOUNDS[1]):
    """Exhaustive allocation; see :func:`ptqplan.oracles.exhaustive_allocation`."""
    from .oracles import exhaustive_allocation

    return exhaustive_allocation(stats, b_target, b_min, b_max).value
