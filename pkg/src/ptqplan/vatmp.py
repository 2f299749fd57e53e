"""Timestep-wise activation bit scheduling.

For one layer with timestep variances ``v_t``, choose bits ``b_t`` from a
bit set to minimize ``sum_t kappa(b_t) v_t`` subject to
``sum_t b_t <= floor(B_target * T)``, restricted to piecewise-constant
schedules with at most ``max_segments`` contiguous segments.

:func:`dp_schedule` solves this exactly with a backward DP over
``(timestep, previous bit, segments left, bits used)``. Among optimal
schedules it returns the one with the fewest segments, then the
lexicographically smallest per-timestep bit sequence.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyTrace, InfeasibleBudget, InvalidInput, ShapeError
from .linalg import as_matrix, hadamard_matrix
from .quantizer import DistortionTable

DEFAULT_MAX_SEGMENTS = 8
# Costs within this relative margin of the optimum count as ties.
COST_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class TemporalTrace:
    layer_id: str
    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeError(f"{self.layer_id}: variances must be 1-D")
        if v.size and (not np.all(np.isfinite(v)) or np.any(v < 0)):
            raise InvalidInput(f"{self.layer_id}: variances must be finite and >= 0")
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "_prefix", np.concatenate([[0.0], np.cumsum(v)]))

    def __len__(self) -> int:
        return int(self.variances.size)

    def range_sum(self, i: int, j: int) -> float:
        return float(self._prefix[j] - self._prefix[i])

    def to_dict(self) -> dict:
        return {"layer": self.layer_id, "variances": [float(x) for x in self.variances]}

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalTrace":
        return cls(d["layer"], np.asarray(d["variances"], dtype=np.float64))


def traces_to_json(traces: Iterable[TemporalTrace]) -> str:
    return json.dumps([t.to_dict() for t in traces], indent=2) + "\n"


def traces_from_json(text: str) -> list[TemporalTrace]:
    return [TemporalTrace.from_dict(d) for d in json.loads(text)]


@dataclass(frozen=True)
class TemporalSchedule:
    layer_id: str
    segments: tuple[tuple[int, int, int], ...]
    cost: float
    budget: int
    length: int = field(init=False)

    def __post_init__(self):
        segs = tuple((int(a), int(b), int(c)) for a, b, c in self.segments)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "length", segs[-1][1] if segs else 0)

    @property
    def total_bits(self) -> int:
        return sum(b * (j - i) for i, j, b in self.segments)

    def bits_per_timestep(self) -> list[int]:
        out: list[int] = []
        for i, j, b in self.segments:
            out.extend([b] * (j - i))
        return out

    @classmethod
    def from_bits(cls, layer_id: str, bits: Sequence[int], cost: float, budget: int) -> "TemporalSchedule":
        segs: list[list[int]] = []
        for t, b in enumerate(bits):
            if segs and segs[-1][2] == b:
                segs[-1][1] = t + 1
            else:
                segs.append([t, t + 1, int(b)])
        return cls(layer_id, tuple(tuple(s) for s in segs), float(cost), int(budget))

    def to_dict(self) -> dict:
        return {
            "layer": self.layer_id,
            "segments": [{"start": i, "end": j, "bits": b} for i, j, b in self.segments],
            "cost": self.cost,
            "budget": self.budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalSchedule":
        segs = tuple((s["start"], s["end"], s["bits"]) for s in d["segments"])
        return cls(d["layer"], segs, float(d["cost"]), int(d["budget"]))


def schedules_to_json(schedules: Iterable[TemporalSchedule]) -> str:
    return json.dumps([s.to_dict() for s in schedules], indent=2) + "\n"


def schedules_from_json(text: str) -> list[TemporalSchedule]:
    return [TemporalSchedule.from_dict(d) for d in json.loads(text)]


def heatmap_csv(schedules: Sequence[TemporalSchedule]) -> str:
    """Layer x timestep activation-bit grid as CSV (header ``layer,t0,t1,...``)."""
    width = max((s.length for s in schedules), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer"] + [f"t{t}" for t in range(width)])
    for s in schedules:
        writer.writerow([s.layer_id] + s.bits_per_timestep())
    return buf.getvalue()


def timestep_variance(activations, h=None) -> float:
    """Mean squared entry of ``X H`` over all tokens and channels."""
    x = as_matrix(activations, "activations")
    if h is None:
        h = hadamard_matrix(x.shape[1])
    z = x @ np.asarray(h, dtype=np.float64)
    return float(np.mean(z * z))


def segment_cost(trace: TemporalTrace, i: int, j: int, b: int, table: DistortionTable) -> float:
    if not 0 <= i < j <= len(trace):
        raise InvalidInput(f"segment [{i}, {j}) outside trace of length {len(trace)}")
    return table.kappa(b) * trace.range_sum(i, j)


def schedule_distortion(schedule: TemporalSchedule, trace: TemporalTrace, table: DistortionTable) -> float:
    if schedule.length != len(trace):
        raise ShapeError(f"schedule covers {schedule.length} steps, trace has {len(trace)}")
    return float(sum(segment_cost(trace, i, j, b, table) for i, j, b in schedule.segments))


def step_budget(b_target_avg: float, steps: int) -> int:
    return math.floor(b_target_avg * steps)


def flat_schedule(trace: TemporalTrace, bits: int, table: DistortionTable, budget: int | None = None):
    n = len(trace)
    if n == 0:
        raise EmptyTrace(f"{trace.layer_id}: empty trace")
    sched = TemporalSchedule(trace.layer_id, ((0, n, int(bits)),), 0.0, bits * n if budget is None else budget)
    return TemporalSchedule(trace.layer_id, sched.segments, schedule_distortion(sched, trace, table), sched.budget)


def _check(trace: TemporalTrace, b_target_avg: float, bit_set, max_segments):
    n = len(trace)
    if n == 0:
        raise EmptyTrace(f"{trace.layer_id}: empty trace")
    bits = sorted({int(b) for b in bit_set})
    if not bits:
        raise InvalidInput("bit_set is empty")
    budget = step_budget(b_target_avg, n)
    if bits[0] * n > budget:
        raise InfeasibleBudget(
            f"{trace.layer_id}: {n} steps at {bits[0]} bits exceed budget {budget}"
        )
    segs = n if max_segments is None else min(int(max_segments), n)
    if segs < 1:
        raise InvalidInput(f"max_segments must be >= 1, got {max_segments}")
    return n, bits, budget, segs


def dp_schedule(
    trace: TemporalTrace,
    b_target_avg: float,
    bit_set: Iterable[int],
    table: DistortionTable,
    max_segments: int | None = DEFAULT_MAX_SEGMENTS,
) -> TemporalSchedule:
    """Optimal piecewise-constant schedule; ``max_segments=None`` means unbounded."""
    n, bits, budget, segs = _check(trace, b_target_avg, bit_set, max_segments)
    nb = len(bits)
    kappa = np.array([table.kappa(b) for b in bits])
    v = trace.variances
    start = nb  # "previous bit" index before the first step

    # value[t][p, k, c]: min cost of steps t..n-1, given previous bit index p,
    # k segments still allowed and c bits already used.
    inf = np.inf
    value = np.empty((n + 1, nb + 1, segs + 1, budget + 1))
    value[n] = 0.0
    for t in range(n - 1, -1, -1):
        nxt = value[t + 1]
        best = np.full((nb + 1, segs + 1, budget + 1), inf)
        for j, b in enumerate(bits):
            shifted = np.full((segs + 1, budget + 1), inf)
            if b <= budget:
                shifted[:, : budget + 1 - b] = nxt[j, :, b:]
            shifted += kappa[j] * v[t]
            opened = np.full_like(shifted, inf)
            opened[1:] = shifted[:-1]
            for p in range(nb + 1):
                cand = shifted if p == j else opened
                np.minimum(best[p], cand, out=best[p])
        value[t] = best

    optimum = value[0, start, segs, 0]
    tol = COST_RTOL * abs(optimum)
    # Fewest segments reaching the optimum: k allowed at t=0 with k minimal.
    k0 = next(k for k in range(1, segs + 1) if value[0, start, k, 0] <= optimum + tol)

    chosen: list[int] = []
    p, k, c, spent = start, k0, 0, 0.0
    for t in range(n):
        for j, b in enumerate(bits):
            k_next = k if p == j else k - 1
            if k_next < 0 or c + b > budget:
                continue
            total = spent + kappa[j] * v[t] + value[t + 1, j, k_next, c + b]
            if total <= optimum + tol:
                chosen.append(b)
                spent += kappa[j] * v[t]
                p, k, c = j, k_next, c + b
                break
        else:  # pragma: no cover - value table guarantees a continuation
            raise RuntimeError("DP reconstruction failed")
    sched = TemporalSchedule.from_bits(trace.layer_id, chosen, 0.0, budget)
    return TemporalSchedule(trace.layer_id, sched.segments, schedule_distortion(sched, trace, table), budget)


def brute_force_schedule(trace, b_target_avg, bit_set, table, max_segments=DEFAULT_MAX_SEGMENTS):
    """Exhaustive schedule search; see :func:`ptqplan.oracles.exhaustive_schedule`."""
    from .oracles import exhaustive_schedule

    return exhaustive_schedule(trace, b_target_avg, bit_set, table, max_segments).value
