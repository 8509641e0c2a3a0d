"""Batch command-line front end.

Subcommands cover the whole workflow: generate layouts, evaluate the
analytics, simulate, optimize, sweep the trade-off curve, verify
gradients, and train/apply the learned scheduler.  Every primary output
is accompanied by a `<output>.manifest.json` recording the tool version,
resolved configuration, input hashes, seeds and wall-clock time; primary
outputs themselves are byte-stable under fixed seeds.

Exit codes: 0 success, 2 configuration/schema error, 3 numeric or
convergence error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, SchedulerError
from .layout import (ChannelConfig, derive_channel, generate_layout,
                     layout_to_dict, load_channel_config, load_layout,
                     save_layout)
from .meanfield import Policy, evaluate, state_to_report
from .neural import (GridConfig, NetParams, TrainConfig, infer,
                     load_checkpoint, sample_stream, save_checkpoint, train)
from .optimize import (METHODS, block_coordinate_min, lambda_grid_log5,
                       lambda_grid_uniform, optimal_aloha, pareto_sweep,
                       projected_gradient)
from .simulator import SimConfig, merge_stats, simulate
from .gradient import finite_difference_check

log = logging.getLogger("aoisched")


# ---------------------------------------------------------------------------
# small IO helpers


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _load_policy(path, n_links: int) -> Policy:
    obj = _read_json(path)
    if "p" not in obj:
        raise ConfigError(f"{path}: policy file missing field 'p'")
    p = np.asarray(obj["p"], dtype=float)
    if p.shape != (n_links,):
        raise ConfigError(f"{path}: field 'p' must list {n_links} probabilities")
    return Policy(p)


def _save_policy(path, policy: Policy) -> None:
    _write_json(path, {"schema_version": 1, "p": policy.p.tolist()})


def _channel_from_args(args) -> ChannelConfig:
    return load_channel_config(args.channel) if args.channel else ChannelConfig()


def _write_manifest(primary_out, args, inputs, seeds, t0, outputs) -> None:
    manifest = {
        "tool_version": __version__,
        "subcommand": args.command,
        "config": {k: v for k, v in sorted(vars(args).items())
                   if k not in ("func", "command") and not callable(v)},
        "input_hashes": {str(p): _sha256(p) for p in inputs},
        "seeds": seeds,
        "wall_clock_s": time.monotonic() - t0,
        "outputs": [str(p) for p in outputs],
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    _write_json(str(primary_out) + ".manifest.json", manifest)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    t0 = time.monotonic()
    layout = generate_layout(args.seed, args.n, args.region, args.dmin, args.dmax)
    save_layout(args.out, layout)
    _write_manifest(args.out, args, [], {"layout": args.seed}, t0, [args.out])
    log.info("wrote %s (%d links)", args.out, layout.n_links)
    return 0


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    layout = load_layout(args.layout)
    cfg = _channel_from_args(args)
    channel = derive_channel(layout, cfg)
    policy = _load_policy(args.policy, layout.n_links)
    state = evaluate(channel, policy, args.xi, args.lam)
    _write_json(args.out, state_to_report(state, policy, layout_ref=str(args.layout)))
    inputs = [args.layout, args.policy] + ([args.channel] if args.channel else [])
    _write_manifest(args.out, args, inputs, {}, t0, [args.out])
    log.info("delta_avg=%.6g thr_avg=%.6g objective=%.6g",
             state.delta_avg, state.thr_avg, state.objective)
    return 0


def cmd_simulate(args) -> int:
    t0 = time.monotonic()
    layout = load_layout(args.layout)
    cfg = _channel_from_args(args)
    channel = derive_channel(layout, cfg)
    policy = _load_policy(args.policy, layout.n_links)

    def one_rep(r: int):
        sim_cfg = SimConfig(horizon=args.slots, warmup=args.warmup,
                            seed=args.seed + r)
        return simulate(channel, policy, args.xi, sim_cfg)

    if args.reps == 1 or args.threads == 1:
        stats = [one_rep(r) for r in range(args.reps)]
    else:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            stats = list(pool.map(one_rep, range(args.reps)))
    summary = merge_stats(stats)
    _write_json(args.out, {"reps": [s.to_dict() for s in stats],
                           "summary": summary.to_dict()})
    inputs = [args.layout, args.policy] + ([args.channel] if args.channel else [])
    _write_manifest(args.out, args, inputs,
                    {"simulate": args.seed, "reps": args.reps}, t0, [args.out])
    log.info("delta_avg=%.6g (se %.3g) thr_avg=%.6g (se %.3g)",
             summary.delta_avg, summary.delta_avg_se,
             summary.thr_avg, summary.thr_avg_se)
    return 0


def cmd_optimize(args) -> int:
    t0 = time.monotonic()
    layout = load_layout(args.layout)
    cfg = _channel_from_args(args)
    channel = derive_channel(layout, cfg)
    if args.method == "itermin":
        res = block_coordinate_min(channel, args.lam, n_iters=args.iters, xi=args.xi)
    elif args.method == "pgd":
        res = projected_gradient(channel, args.lam, args.xi, steps=args.steps)
    else:
        res = optimal_aloha(channel, args.lam, args.xi)
    _write_json(args.out, res.to_dict())
    inputs = [args.layout] + ([args.channel] if args.channel else [])
    _write_manifest(args.out, args, inputs, {}, t0, [args.out])
    log.info("%s: objective=%.6g delta_avg=%.6g thr_avg=%.6g",
             args.method, res.objective, res.delta_avg, res.thr_avg)
    return 0


def cmd_sweep_pareto(args) -> int:
    t0 = time.monotonic()
    layout = load_layout(args.layout)
    cfg = _channel_from_args(args)
    channel = derive_channel(layout, cfg)
    grid = (lambda_grid_log5(args.grid_points) if args.lambda_grid == "log5"
            else lambda_grid_uniform(args.grid_points))
    points = pareto_sweep(channel, args.xi, grid, method=args.method,
                          warm_start=not args.cold_start)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "delta_avg", "thr_avg", "objective",
                         "method", "iterations"])
        for pt in points:
            writer.writerow([repr(pt.lam), repr(pt.delta_avg), repr(pt.thr_avg),
                             repr(pt.objective), pt.method, pt.iterations])
    policies_path = str(Path(args.out).with_suffix("")) + "_policies.json"
    _write_json(policies_path, [{"lambda": pt.lam, "p": pt.policy.p.tolist()}
                                for pt in points])
    inputs = [args.layout] + ([args.channel] if args.channel else [])
    _write_manifest(args.out, args, inputs, {}, t0, [args.out, policies_path])
    log.info("swept %d weights with %s", len(points), args.method)
    return 0


def cmd_grad_check(args) -> int:
    t0 = time.monotonic()
    layout = load_layout(args.layout)
    cfg = _channel_from_args(args)
    channel = derive_channel(layout, cfg)
    if args.policy:
        policy = _load_policy(args.policy, layout.n_links)
    else:
        policy = Policy.uniform(layout.n_links, 0.5)
    report = finite_difference_check(channel, policy, args.xi, args.lam,
                                     step=args.step)
    _write_json(args.out, report)
    inputs = [args.layout] + ([args.channel] if args.channel else []) \
        + ([args.policy] if args.policy else [])
    _write_manifest(args.out, args, inputs, {}, t0, [args.out])
    log.info("max_rel_err=%.3e at index %d", report["max_rel_err"],
             report["argmax_index"])
    return 0


_GRID_PRESETS = {"desk": GridConfig.desk, "full": GridConfig.full_scale}


def _grid_cfg_from_obj(obj) -> GridConfig:
    if isinstance(obj, str):
        if obj not in _GRID_PRESETS:
            raise ConfigError(f"unknown grid preset {obj!r}")
        return _GRID_PRESETS[obj]()
    return GridConfig.from_dict(obj)


def cmd_train_nn(args) -> int:
    t0 = time.monotonic()
    cfg_obj = _read_json(args.config)
    for fld in ("seed", "steps", "n_links"):
        if fld not in cfg_obj:
            raise ConfigError(f"train config missing field {fld!r}")
    grid_cfg = _grid_cfg_from_obj(cfg_obj.get("grid", "desk"))
    train_cfg = TrainConfig(
        steps=int(cfg_obj["steps"]),
        batch_size=int(cfg_obj.get("batch_size", 32)),
        learning_rate=float(cfg_obj.get("learning_rate", 3e-4)),
        seed=int(cfg_obj["seed"]),
        checkpoint_every=int(cfg_obj.get("checkpoint_every", 500)),
    )
    channel_cfg = (load_channel_config(cfg_obj["channel"])
                   if "channel" in cfg_obj else ChannelConfig())
    stream = sample_stream(train_cfg.seed,
                           n_links=int(cfg_obj["n_links"]),
                           region_size=float(cfg_obj.get("region_size_m", 500.0)),
                           d_min=float(cfg_obj.get("d_min_m", 2.0)),
                           d_max=float(cfg_obj.get("d_max_m", 65.0)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = NetParams.init(grid_cfg, seed=train_cfg.seed)
    result = train(stream, params, train_cfg, grid_cfg, channel_cfg,
                   checkpoint_dir=str(out_dir))
    final_path = out_dir / "final.json"
    save_checkpoint(final_path, result.params, grid_cfg, result.steps, train_cfg)
    trace_path = out_dir / "loss_trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, v in enumerate(result.loss_trace, start=1):
            writer.writerow([i, repr(float(v))])
    inputs = [args.config] + ([cfg_obj["channel"]] if "channel" in cfg_obj else [])
    _write_manifest(final_path, args, inputs, {"train": train_cfg.seed}, t0,
                    [final_path, trace_path])
    log.info("trained %d steps; final loss %.4f", result.steps,
             float(result.loss_trace[-1]))
    return 0


def cmd_infer_nn(args) -> int:
    t0 = time.monotonic()
    params, grid_cfg, _ = load_checkpoint(args.ckpt)
    layout = load_layout(args.layout)
    policy, change = infer(layout, args.xi, args.lam, params, grid_cfg)
    _save_policy(args.out, policy)
    _write_manifest(args.out, args, [args.ckpt, args.layout], {}, t0, [args.out])
    log.info("inferred policy for %d links (last-round change %.3g)",
             layout.n_links, change)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aoisched",
        description="Freshness/throughput-aware scheduling of interfering "
                    "device-to-device links")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for replications")
    parser.add_argument("--quiet", action="store_true", help="warnings only")
    parser.add_argument("--json-logs", action="store_true",
                        help="one JSON object per log line")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen", help="generate a random layout")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--region", type=float, default=500.0)
    sp.add_argument("--dmin", type=float, default=2.0)
    sp.add_argument("--dmax", type=float, default=65.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("eval", help="steady-state analytics for a policy")
    sp.add_argument("--layout", required=True)
    sp.add_argument("--channel", default=None)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--xi", type=float, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("simulate", help="slot-level Monte Carlo")
    sp.add_argument("--layout", required=True)
    sp.add_argument("--channel", default=None)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--xi", type=float, required=True)
    sp.add_argument("--slots", type=int, required=True)
    sp.add_argument("--warmup", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("optimize", help="produce a scheduling policy")
    sp.add_argument("--method", choices=METHODS, required=True)
    sp.add_argument("--layout", required=True)
    sp.add_argument("--channel", default=None)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--xi", type=float, default=1.0)
    sp.add_argument("--iters", type=int, default=20,
                    help="sweeps for the per-link method")
    sp.add_argument("--steps", type=int, default=500,
                    help="steps for projected gradient descent")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("sweep-pareto", help="trace the trade-off curve")
    sp.add_argument("--method", choices=METHODS, required=True)
    sp.add_argument("--layout", required=True)
    sp.add_argument("--channel", default=None)
    sp.add_argument("--xi", type=float, default=1.0)
    sp.add_argument("--lambda-grid", choices=("uniform", "log5"), default="log5")
    sp.add_argument("--grid-points", type=int, default=17)
    sp.add_argument("--cold-start", action="store_true",
                    help="do not warm-start successive weights")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep_pareto)

    sp = sub.add_parser("grad-check", help="finite-difference gradient audit")
    sp.add_argument("--layout", required=True)
    sp.add_argument("--channel", default=None)
    sp.add_argument("--policy", default=None,
                    help="policy JSON; defaults to all links at 0.5")
    sp.add_argument("--xi", type=float, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--step", type=float, default=1e-6)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("train-nn", help="train the learned scheduler")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.set_defaults(func=cmd_train_nn)

    sp = sub.add_parser("infer-nn", help="apply a trained scheduler")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--layout", required=True)
    sp.add_argument("--xi", type=float, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infer_nn)
    return parser


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname,
                           "name": record.name,
                           "message": record.getMessage()})


def _configure_logging(args) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if args.json_logs:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if args.quiet else logging.INFO)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except SchedulerError as exc:
        log.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
