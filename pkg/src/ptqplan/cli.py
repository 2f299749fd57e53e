"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 infeasible budget, 3 I/O or
format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, FormatError, InfeasibleBudget, InvalidInput, ValidationError
from .hsvd import hsvd_decompose
from .io import read_json, read_tensor, save_quantized_weight
from .linalg import hadamard_matrix
from .model import ModelBundle
from .oracles import exhaustive_allocation, exhaustive_block_search, exhaustive_schedule, mc_gaussian_mse
from .pipeline import PlanConfig, ablation_ladder, load_plan, plan, save_plan, simulate, write_report
from .quantizer import DEFAULT_BITS, build_distortion_table
from .synth import PROFILES, SyntheticModelSpec, generate_synthetic_model, generate_synthetic_traces
from .vasmp import LayerStats, allocate, layer_stats
from .vatmp import dp_schedule, schedules_to_json, traces_from_json, traces_to_json

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # Usage errors are validation errors; exit 2 is reserved for infeasible budgets.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text: str) -> tuple[int, int] | None:
    if text.lower() == "none":
        return None
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AxB, got {text!r}") from None


def _segments(text: str) -> int | None:
    return None if text.lower() in ("none", "inf") else int(text)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# Flags that map one-to-one onto PlanConfig fields.
_CONFIG_FLAGS = {
    "weight_bits": "weight_bits",
    "act_bits": "act_bits",
    "rank": "rank",
    "local_rank": "local_rank",
    "bit_min": "bit_min",
    "bit_max": "bit_max",
    "bit_set": "bit_set",
    "max_segments": "max_segments",
    "seed": "seed",
    "timesteps": "timesteps",
    "profile": "trace_profile",
}


def _config(args) -> PlanConfig:
    base = {}
    if getattr(args, "config", None):
        base = read_json(args.config)
        if not isinstance(base, dict):
            raise ConfigError("config", "expected a JSON object")
    cfg = PlanConfig.from_dict(base)
    overrides = {}
    for flag, name in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "max_segments_unbounded", False):
        overrides["max_segments"] = None
    for flag in ("hsvd", "vasmp", "vatmp"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    return PlanConfig.from_dict(overrides, base=cfg)


def _add_plan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config; explicit flags override it")
    p.add_argument("--weight-bits", type=float)
    p.add_argument("--act-bits", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--local-rank", type=int)
    p.add_argument("--bit-min", type=int)
    p.add_argument("--bit-max", type=int)
    p.add_argument("--bit-set", type=_int_list)
    p.add_argument("--max-segments", type=int)
    p.add_argument("--unbounded-segments", dest="max_segments_unbounded", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--profile", choices=PROFILES)
    for flag in ("hsvd", "vasmp", "vatmp"):
        p.add_argument(f"--{flag}", dest=flag, action="store_true", default=None)
        p.add_argument(f"--no-{flag}", dest=flag, action="store_false")


# --- commands ---------------------------------------------------------------


def cmd_kappa_table(args) -> None:
    table = build_distortion_table(args.bit_set, args.integration_points)
    _emit(table.to_json(), args.out)


def _model_stats(model: ModelBundle) -> list[LayerStats]:
    return [
        layer_stats(layer.weight @ hadamard_matrix(layer.weight.shape[1]), layer.layer_id, layer.active)
        for layer in model.layers
    ]


def cmd_stats(args) -> None:
    rows = [
        {"layer": s.layer_id, "mean_var": s.mean_var, "params": s.param_count, "active": s.active}
        for s in _model_stats(ModelBundle.load(args.model))
    ]
    _emit(_dump(rows), args.out)


def cmd_plan_weights(args) -> None:
    cfg = _config(args)
    alloc = allocate(_model_stats(ModelBundle.load(args.model)), cfg.weight_bits, cfg.bit_min, cfg.bit_max)
    _emit(alloc.to_json(), args.out)


def cmd_decompose(args) -> None:
    cfg = _config(args)
    if args.weight:
        w = read_tensor(args.weight).astype(np.float64)
    else:
        if not (args.model and args.layer):
            raise InvalidInput("decompose needs --weight FILE or --model DIR --layer ID")
        try:
            w = ModelBundle.load(args.model)[args.layer].weight
        except KeyError:
            raise InvalidInput(f"no layer {args.layer!r} in {args.model}") from None
    bits = int(cfg.weight_bits)
    table = build_distortion_table(sorted({bits, *cfg.bit_set}))
    qw = hsvd_decompose(w, cfg.rank, bits, table, cfg.local_rank, cfg.hsvd)
    if not args.out:
        raise InvalidInput("decompose needs --out DIR")
    save_quantized_weight(qw, args.out)
    err = float(np.linalg.norm(qw.reconstruct() - w) / max(np.linalg.norm(w), 1e-300))
    sys.stdout.write(_dump({"relative_error": err, "fp_params": qw.fp_param_count(), "warning": qw.warning}))


def cmd_plan_activations(args) -> None:
    cfg = _config(args)
    traces = traces_from_json(Path(args.traces).read_text())
    table = build_distortion_table(cfg.bit_set, cfg.integration_points)
    scheds = [dp_schedule(t, cfg.act_bits, cfg.bit_set, table, cfg.max_segments) for t in traces]
    _emit(schedules_to_json(scheds), args.out)


def cmd_plan(args) -> None:
    cfg = _config(args)
    traces = traces_from_json(Path(args.traces).read_text()) if args.traces else None
    if not args.out:
        raise InvalidInput("plan needs --out DIR")
    p = plan(ModelBundle.load(args.model), cfg, traces)
    save_plan(p, args.out)
    sys.stdout.write(_dump(p.summary()))


def cmd_ladder(args) -> None:
    cfg = _config(args)
    traces = traces_from_json(Path(args.traces).read_text()) if args.traces else None
    _emit(_dump(ablation_ladder(ModelBundle.load(args.model), cfg, traces)), args.out)


def cmd_simulate(args) -> None:
    rep = simulate(ModelBundle.load(args.model), load_plan(args.plan), tokens=args.tokens, seed=args.seed)
    _emit(rep.to_json(), args.out)


def cmd_report(args) -> None:
    out = args.out or args.plan
    for path in write_report(load_plan(args.plan), out):
        sys.stdout.write(f"{path}\n")


def cmd_gen_model(args) -> None:
    spec = SyntheticModelSpec(
        n_layers=args.layers,
        dims=args.dims,
        spread=args.spread,
        block=args.block,
        planted_rank=args.planted_rank,
        inactive=tuple(args.inactive),
        seed=args.seed,
        name=args.name,
    )
    if not args.out:
        raise InvalidInput("gen-model needs --out DIR")
    generate_synthetic_model(spec).save(args.out)


def cmd_gen_traces(args) -> None:
    if args.model:
        ids = ModelBundle.load(args.model).layer_ids
    else:
        ids = [f"layer{i:02d}" for i in range(args.layers)]
    traces = generate_synthetic_traces(ids, args.steps, args.profile, args.scale, args.seed)
    _emit(traces_to_json(traces), args.out)


def cmd_oracle(args) -> None:
    kind = args.kind
    if kind == "mc":
        table = build_distortion_table([args.bits])
        clip = args.clip if args.clip is not None else args.sigma * table.a_star(args.bits)
        res = mc_gaussian_mse(args.sigma, args.bits, clip, args.samples, args.seed)
    elif kind == "allocation":
        if args.model:
            stats = _model_stats(ModelBundle.load(args.model))
        else:
            if not args.vars:
                raise InvalidInput("oracle allocation needs --model or --vars")
            params = args.params or [1] * len(args.vars)
            if len(params) != len(args.vars):
                raise InvalidInput("--params and --vars differ in length")
            stats = [LayerStats(f"layer{i:02d}", v, int(n)) for i, (v, n) in enumerate(zip(args.vars, params))]
        res = exhaustive_allocation(stats, args.weight_bits, args.bit_min, args.bit_max)
    elif kind == "schedule":
        traces = traces_from_json(Path(args.traces).read_text())
        table = build_distortion_table(args.bit_set)
        res = exhaustive_schedule(traces[args.index], args.act_bits, args.bit_set, table, args.max_segments)
    else:
        w = read_tensor(args.weight).astype(np.float64)
        res = exhaustive_block_search(w, w.shape[0], w.shape[1], args.rank)
    _emit(_dump(res.to_dict()), args.out)


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptqplan", description="Quantization planning for linear layers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("kappa-table", help="emit the distortion table as JSON")
    p.add_argument("--bit-set", type=_int_list, default=list(DEFAULT_BITS))
    p.add_argument("--integration-points", type=int, default=20000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kappa_table)

    p = sub.add_parser("stats", help="per-layer Hadamard-domain statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("plan-weights", help="cross-layer weight bit allocation")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_plan_weights)

    p = sub.add_parser("decompose", help="H-SVD decomposition of one weight")
    p.add_argument("--weight", help="weight tensor file")
    p.add_argument("--model")
    p.add_argument("--layer")
    p.add_argument("--out")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("plan-activations", help="per-layer activation bit schedules")
    p.add_argument("--traces", required=True)
    p.add_argument("--out")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_plan_activations)

    p = sub.add_parser("plan", help="full pipeline; writes a plan directory")
    p.add_argument("--model", required=True)
    p.add_argument("--traces")
    p.add_argument("--out")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("ladder", help="modelled distortion with each technique switched on in turn")
    p.add_argument("--model", required=True)
    p.add_argument("--traces")
    p.add_argument("--out")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_ladder)

    p = sub.add_parser("simulate", help="measured vs predicted distortion on Gaussian inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--tokens", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="heatmap CSV and summary JSON for a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", help="output directory (default: the plan directory)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-model", help="seeded synthetic model bundle")
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--dims", type=lambda s: [_pair(x) for x in s.split(",")], default=[(64, 64)])
    p.add_argument("--spread", type=float, default=100.0)
    p.add_argument("--block", type=_pair, default=(16, 16))
    p.add_argument("--planted-rank", type=int, default=8)
    p.add_argument("--inactive", type=_int_list, default=[])
    p.add_argument("--name", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-traces", help="seeded synthetic activation-variance traces")
    p.add_argument("--model", help="take layer ids from this bundle")
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--profile", choices=PROFILES, default="bump")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("oracle", help="brute-force / Monte Carlo references as JSON")
    p.add_argument("kind", choices=["mc", "allocation", "schedule", "block"])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--clip", type=float, help="default: sigma * A*(bits)")
    p.add_argument("--samples", type=int, default=10_000_000)
    p.add_argument("--model")
    p.add_argument("--vars", type=_float_list)
    p.add_argument("--params", type=_int_list)
    p.add_argument("--weight-bits", type=float, default=4.0)
    p.add_argument("--bit-min", type=int, default=2)
    p.add_argument("--bit-max", type=int, default=8)
    p.add_argument("--traces")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--act-bits", type=float, default=4.0)
    p.add_argument("--bit-set", type=_int_list, default=[2, 4, 6, 8])
    p.add_argument("--max-segments", type=_segments, default=8)
    p.add_argument("--weight")
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleBudget as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
