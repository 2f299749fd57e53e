"""End-to-end planning: statistics, bit allocation, decomposition, scheduling.

:func:`plan` turns a :class:`~ptqplan.model.ModelBundle` and a
:class:`PlanConfig` into a :class:`Plan`; :func:`save_plan` writes it as a
directory of JSON and tensor files. :func:`simulate` runs the quantized
layers on Gaussian inputs and pairs measured against modelled distortion,
and :func:`write_report` emits the heatmap CSV and summary JSON.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, RankExceedsDimension, ShapeError
from .hsvd import QuantizedWeight, forward, hsvd_decompose
from .io import load_quantized_weight, read_json, save_quantized_weight, write_json
from .linalg import hadamard_matrix
from .model import ModelBundle
from .quantizer import DistortionTable, build_distortion_table, dequantize, quantize_activations
from .synth import PROFILES, generate_synthetic_traces
from .vasmp import BitAllocation, LayerStats, allocate, layer_stats
from .vatmp import (
    TemporalSchedule,
    TemporalTrace,
    dp_schedule,
    flat_schedule,
    heatmap_csv,
    schedules_from_json,
    schedules_to_json,
    step_budget,
    traces_from_json,
    traces_to_json,
)

log = logging.getLogger(__name__)

PLAN_SCHEMA = 1
REPORT_SCHEMA = 1


@dataclass
class PlanConfig:
    weight_bits: float = 4.0
    act_bits: float = 6.0
    rank: int = 8
    local_rank: int | None = None
    bit_min: int = 2
    bit_max: int = 8
    bit_set: list[int] = field(default_factory=lambda: [2, 3, 4, 5, 6, 7, 8])
    max_segments: int | None = 8
    seed: int = 0
    hsvd: bool = True
    vasmp: bool = True
    vatmp: bool = True
    pinned_bits: int = 8
    timesteps: int = 20
    trace_profile: str = "bump"
    trace_scale: float = 1.0
    integration_points: int = 20000

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d: dict, base: "PlanConfig | None" = None) -> "PlanConfig":
        if not isinstance(d, dict):
            raise ConfigError("config", "expected a JSON object")
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"config.{key}", "unknown field")
        merged = asdict(base) if base is not None else {}
        merged.update(d)
        if "bit_set" in merged and isinstance(merged["bit_set"], (list, tuple)):
            merged["bit_set"] = list(merged["bit_set"])
        return cls(**merged)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        def number(name, lo, hi):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"config.{name}", f"expected a number, got {v!r}")
            if not lo < v <= hi:
                raise ConfigError(f"config.{name}", f"must lie in ({lo}, {hi}], got {v}")

        def integer(name, lo, hi=None, optional=False):
            v = getattr(self, name)
            if v is None and optional:
                return
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"config.{name}", f"expected an integer, got {v!r}")
            if v < lo or (hi is not None and v > hi):
                bound = f">= {lo}" if hi is None else f"in [{lo}, {hi}]"
                raise ConfigError(f"config.{name}", f"must be {bound}, got {v}")

        number("weight_bits", 0, 16)
        number("act_bits", 0, 16)
        number("trace_scale", 0, math.inf)
        integer("rank", 0)
        integer("local_rank", 1, optional=True)
        integer("bit_min", 1, 16)
        integer("bit_max", 1, 16)
        if self.bit_min > self.bit_max:
            raise ConfigError("config.bit_min", f"exceeds bit_max ({self.bit_min} > {self.bit_max})")
        if not isinstance(self.bit_set, (list, tuple)) or not self.bit_set:
            raise ConfigError("config.bit_set", "expected a non-empty list of integers")
        for i, b in enumerate(self.bit_set):
            if isinstance(b, bool) or not isinstance(b, int) or not 1 <= b <= 16:
                raise ConfigError(f"config.bit_set[{i}]", f"expected an integer in [1, 16], got {b!r}")
        integer("max_segments", 1, optional=True)
        integer("seed", 0)
        integer("pinned_bits", 1, 16)
        integer("timesteps", 1)
        integer("integration_points", 1024)
        for name in ("hsvd", "vasmp", "vatmp"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"config.{name}", "expected true or false")
        if self.trace_profile not in PROFILES:
            raise ConfigError("config.trace_profile", f"expected one of {list(PROFILES)}")

    @property
    def flat_weight_bits(self) -> int:
        return int(min(max(math.floor(self.weight_bits), self.bit_min), self.bit_max))

    @property
    def flat_act_bits(self) -> int:
        return int(max(math.floor(self.act_bits), 1))

    def table_bits(self) -> list[int]:
        bits = set(self.bit_set) | set(range(self.bit_min, self.bit_max + 1))
        bits |= {self.pinned_bits, self.flat_act_bits}
        return sorted(bits)


@dataclass
class LayerPlan:
    layer_id: str
    active: bool
    weight_bits: int
    weight: QuantizedWeight
    quantized_mean_var: float
    schedule: TemporalSchedule

    @property
    def params(self) -> int:
        return self.weight.out * self.weight.inp

    @property
    def model_distortion(self) -> float:
        """``N * var * 2^(-2b)`` evaluated on the residual that was quantized."""
        return self.params * self.quantized_mean_var * 2.0 ** (-2 * self.weight_bits)

    def summary(self) -> dict:
        local = self.weight.local
        return {
            "layer": self.layer_id,
            "active": self.active,
            "shape": [self.weight.out, self.weight.inp],
            "weight_bits": self.weight_bits,
            "rank": self.weight.rank,
            "block": None if local is None else [local.config.s_o, local.config.s_i],
            "fp_params": self.weight.fp_param_count(),
            "quantized_mean_var": self.quantized_mean_var,
            "model_distortion": self.model_distortion,
            "act_cost": self.schedule.cost,
            "act_bits_total": self.schedule.total_bits,
            "warning": self.weight.warning,
        }


@dataclass
class Plan:
    config: PlanConfig
    table: DistortionTable
    allocation: BitAllocation
    layers: list[LayerPlan]
    traces: list[TemporalTrace]

    @property
    def schedules(self) -> list[TemporalSchedule]:
        return [lp.schedule for lp in self.layers]

    def layer(self, layer_id: str) -> LayerPlan:
        for lp in self.layers:
            if lp.layer_id == layer_id:
                return lp
        raise KeyError(layer_id)

    def summary(self) -> dict:
        act = [lp for lp in self.layers if lp.active]
        params = sum(lp.params for lp in act)
        steps = sum(lp.schedule.length for lp in act)
        return {
            "active_layers": len(act),
            "weight_objective": self.allocation.objective,
            "weight_model_distortion": sum(lp.model_distortion for lp in act),
            "activation_objective": sum(lp.schedule.cost for lp in act),
            "realized_weight_bits": sum(lp.params * lp.weight_bits for lp in act) / params if params else 0.0,
            "realized_act_bits": sum(lp.schedule.total_bits for lp in act) / steps if steps else 0.0,
            "fp_params": sum(lp.weight.fp_param_count() for lp in self.layers),
            "over_budget": self.allocation.over_budget,
        }


def _flat_allocation(stats: list[LayerStats], config: PlanConfig) -> BitAllocation:
    act = [s for s in stats if s.active]
    b = config.flat_weight_bits
    total = sum(s.param_count for s in act)
    return BitAllocation(
        {s.layer_id: float(config.weight_bits) for s in act},
        {s.layer_id: b for s in act},
        float(config.weight_bits),
        (config.bit_min, config.bit_max),
        list(stats),
        math.floor(config.weight_bits * total),
        b * total,
    )


def plan(model: ModelBundle, config: PlanConfig | None = None, traces: list[TemporalTrace] | None = None) -> Plan:
    """Run statistics, weight allocation, H-SVD and activation scheduling for every layer."""
    config = config or PlanConfig()
    table = build_distortion_table(config.table_bits(), config.integration_points)

    w_h = {}
    stats = []
    for layer in model.layers:
        inp = layer.weight.shape[1]
        w_h[layer.layer_id] = layer.weight @ hadamard_matrix(inp)
        stats.append(layer_stats(w_h[layer.layer_id], layer.layer_id, layer.active))
        if config.rank > min(layer.weight.shape):
            raise ConfigError("config.rank", f"{config.rank} exceeds layer {layer.layer_id} shape {layer.weight.shape}")

    if config.vasmp:
        allocation = allocate(stats, config.weight_bits, config.bit_min, config.bit_max)
    else:
        allocation = _flat_allocation(stats, config)

    if traces is None:
        traces = generate_synthetic_traces(
            model.layer_ids, config.timesteps, config.trace_profile, config.trace_scale, config.seed
        )
    by_id = {t.layer_id: t for t in traces}
    missing = [lid for lid in model.layer_ids if lid not in by_id]
    if missing:
        raise ConfigError("traces", f"no trace for layers {missing}")

    layers = []
    for layer, st in zip(model.layers, stats):
        lid = layer.layer_id
        bits = allocation.discrete[lid] if layer.active else config.pinned_bits
        try:
            qw = hsvd_decompose(layer.weight, config.rank, bits, table, config.local_rank, config.hsvd)
        except RankExceedsDimension as exc:
            raise ConfigError("config.rank", str(exc)) from None
        res = w_h[lid] - qw.fp_matrix()
        trace = by_id[lid]
        if not layer.active:
            sched = flat_schedule(trace, config.pinned_bits, table)
        elif config.vatmp:
            sched = dp_schedule(trace, config.act_bits, config.bit_set, table, config.max_segments)
        else:
            sched = flat_schedule(trace, config.flat_act_bits, table, step_budget(config.act_bits, len(trace)))
        layers.append(LayerPlan(lid, layer.active, bits, qw, float(np.var(res, axis=1).mean()), sched))
    return Plan(config, table, allocation, layers, [by_id[lid] for lid in model.layer_ids])


# --- persistence ------------------------------------------------------------


def save_plan(p: Plan, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_json(
        {
            "schema": PLAN_SCHEMA,
            "config": p.config.to_dict(),
            "summary": p.summary(),
            "layers": [lp.summary() for lp in p.layers],
        },
        d / "plan.json",
    )
    (d / "allocation.json").write_text(p.allocation.to_json())
    (d / "schedules.json").write_text(schedules_to_json(p.schedules))
    (d / "traces.json").write_text(traces_to_json(p.traces))
    (d / "distortion_table.json").write_text(p.table.to_json())
    for lp in p.layers:
        save_quantized_weight(lp.weight, d / "weights" / lp.layer_id)


def load_plan(directory) -> Plan:
    d = Path(directory)
    meta = read_json(d / "plan.json")
    config = PlanConfig.from_dict(meta["config"])
    table = DistortionTable.from_json((d / "distortion_table.json").read_text())
    allocation = BitAllocation.from_json((d / "allocation.json").read_text())
    schedules = {s.layer_id: s for s in schedules_from_json((d / "schedules.json").read_text())}
    traces = traces_from_json((d / "traces.json").read_text())
    layers = [
        LayerPlan(
            row["layer"],
            bool(row["active"]),
            int(row["weight_bits"]),
            load_quantized_weight(d / "weights" / row["layer"]),
            float(row["quantized_mean_var"]),
            schedules[row["layer"]],
        )
        for row in meta["layers"]
    ]
    return Plan(config, table, allocation, layers, traces)


# --- ablation ladder --------------------------------------------------------

LADDER = (
    ("baseline", dict(hsvd=False, vasmp=False, vatmp=False)),
    ("+hsvd", dict(hsvd=True, vasmp=False, vatmp=False)),
    ("+vasmp", dict(hsvd=True, vasmp=True, vatmp=False)),
    ("+vatmp", dict(hsvd=True, vasmp=True, vatmp=True)),
)


def ablation_ladder(model: ModelBundle, config: PlanConfig, traces=None) -> list[dict]:
    """Modelled weight and activation distortion as each technique is switched on."""
    rows = []
    for name, flags in LADDER:
        s = plan(model, replace(config, **flags), traces).summary()
        rows.append(
            {
                "stage": name,
                "weight_distortion": s["weight_model_distortion"],
                "activation_distortion": s["activation_objective"],
                "realized_weight_bits": s["realized_weight_bits"],
                "realized_act_bits": s["realized_act_bits"],
            }
        )
    return rows


# --- simulation -------------------------------------------------------------


@dataclass
class PlanReport:
    layers: list[dict]
    totals: dict
    realized_weight_bits: float
    realized_act_bits: float
    schema: int = REPORT_SCHEMA

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "realized_weight_bits": self.realized_weight_bits,
            "realized_act_bits": self.realized_act_bits,
            "totals": self.totals,
            "layers": self.layers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def gaussian_inputs(p: Plan, tokens: int = 64, seed: int = 0) -> dict[str, list[np.ndarray]]:
    """Per layer, per timestep ``(tokens, in)`` inputs with entry variance ``v_t``."""
    rng = np.random.default_rng(seed)
    out = {}
    for lp, trace in zip(p.layers, p.traces):
        out[lp.layer_id] = [
            np.sqrt(v) * rng.standard_normal((tokens, lp.weight.inp)) for v in trace.variances
        ]
    return out


def _layer_report(model_w: np.ndarray, lp: LayerPlan, trace: TemporalTrace, xs, table: DistortionTable) -> dict:
    qw = lp.weight
    if len(xs) != lp.schedule.length:
        raise ShapeError(f"{lp.layer_id}: {len(xs)} input steps, schedule has {lp.schedule.length}")
    h = hadamard_matrix(qw.hadamard_size)
    dw = qw.reconstruct() - model_w
    kb = table.kappa(lp.weight_bits)
    scales = qw.residual.scales
    steps = []
    w_err = w_pow = 0.0
    for t, (x, b) in enumerate(zip(xs, lp.schedule.bits_per_timestep())):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != qw.inp:
            raise ShapeError(f"{lp.layer_id} step {t}: input shape {x.shape}, expected (*, {qw.inp})")
        z = x @ h
        zq = dequantize(quantize_activations(x, h, b, table))
        y_fp = x @ model_w.T
        y_q = forward(qw, x, b, table)
        e = x @ dw.T
        w_err += float(np.sum(e * e))
        w_pow += float(np.sum(x * x)) / qw.inp
        steps.append(
            {
                "t": t,
                "bits": b,
                "variance": float(trace.variances[t]),
                "predicted_act": float(trace.variances[t]) * table.kappa(b),
                "measured_act": float(np.mean((zq - z) ** 2)),
                "output_mse": float(np.mean((y_q - y_fp) ** 2)),
                "output_power": float(np.mean(y_fp * y_fp)),
            }
        )
    return {
        "layer": lp.layer_id,
        "active": lp.active,
        "weight_bits": lp.weight_bits,
        "predicted_weight": lp.model_distortion,
        "expected_weight": float(qw.inp * np.sum(scales * scales) * kb),
        "measured_weight": w_err / w_pow if w_pow > 0 else 0.0,
        "predicted_act": sum(s["predicted_act"] for s in steps),
        "measured_act": sum(s["measured_act"] for s in steps),
        "output_mse": sum(s["output_mse"] for s in steps) / len(steps),
        "relative_output_error": _relative(steps),
        "timesteps": steps,
    }


def _relative(steps: list[dict]) -> float:
    power = sum(s["output_power"] for s in steps)
    return math.sqrt(sum(s["output_mse"] for s in steps) / power) if power > 0 else 0.0


TOTAL_KEYS = ("predicted_weight", "expected_weight", "measured_weight", "predicted_act", "measured_act", "output_mse")


def simulate(model: ModelBundle, p: Plan, inputs: dict | None = None, tokens: int = 64, seed: int = 0) -> PlanReport:
    """Quantized-vs-FP forward of every layer at its scheduled activation bits.

    ``inputs`` maps layer id to a sequence of ``(tokens, in)`` arrays, one per
    timestep; by default they are Gaussian with the trace variances.
    """
    if inputs is None:
        inputs = gaussian_inputs(p, tokens, seed)
    rows = []
    for lp, trace in zip(p.layers, p.traces):
        rows.append(_layer_report(model[lp.layer_id].weight, lp, trace, inputs[lp.layer_id], p.table))
    totals = {k: float(sum(r[k] for r in rows)) for k in TOTAL_KEYS}
    s = p.summary()
    return PlanReport(rows, totals, s["realized_weight_bits"], s["realized_act_bits"])


# --- report -----------------------------------------------------------------

SUMMARY_KEYS = ("fp_params", "weight_storage_bits", "fp_storage_bits", "macs_per_token", "model_distortion", "act_cost")


def layer_costs(lp: LayerPlan) -> dict:
    """Storage and per-token multiply-accumulate counts for one planned layer."""
    qw = lp.weight
    local = qw.local
    blocks = 0 if local is None else local.sigma.size
    local_macs = 0 if local is None else blocks * (local.config.s_o + local.config.s_i)
    return {
        "layer": lp.layer_id,
        "active": lp.active,
        "weight_bits": lp.weight_bits,
        "mean_act_bits": lp.schedule.total_bits / lp.schedule.length,
        "fp_params": qw.fp_param_count(),
        "weight_storage_bits": qw.out * qw.inp * lp.weight_bits,
        "fp_storage_bits": 16 * (qw.fp_param_count() + qw.out),
        "macs_per_token": qw.out * qw.inp + qw.rank * (qw.out + qw.inp) + local_macs,
        "model_distortion": lp.model_distortion,
        "act_cost": lp.schedule.cost,
    }


def report_summary(p: Plan) -> dict:
    rows = [layer_costs(lp) for lp in p.layers]
    totals = {k: sum(r[k] for r in rows) for k in SUMMARY_KEYS}
    dense_bits = 32 * sum(lp.weight.out * lp.weight.inp for lp in p.layers)
    packed = totals["weight_storage_bits"] + totals["fp_storage_bits"]
    totals["size_mb"] = packed / 8 / 2**20
    totals["compression_vs_fp32"] = dense_bits / packed
    return {"schema": REPORT_SCHEMA, "totals": totals, "layers": rows}


def write_report(p: Plan, directory) -> list[Path]:
    """Write ``heatmap.csv`` and ``summary.json``; byte-identical on rerun."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    heat = d / "heatmap.csv"
    heat.write_text(heatmap_csv(p.schedules))
    summ = d / "summary.json"
    write_json(report_summary(p), summ)
    return [heat, summ]
