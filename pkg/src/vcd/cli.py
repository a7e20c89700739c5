"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Log verbosity follows ``VCD_LOG_LEVEL`` (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .augment import check_block_structure
from .config import ConfigError, load_config, write_config
from .mmdp_env import MDPSpec
from .networks import NetworkStack
from .trainer import AXES, TrainConfig, ablation_suite, evaluate, parse_axis_value, plan_ablation, random_policy_returns, train

log = logging.getLogger("vcd")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("VCD_LOG_LEVEL", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise UsageError(f"VCD_LOG_LEVEL must be one of {', '.join(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config(path: str | None) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv_list(raw: str, what: str) -> list[str]:
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if not items:
        raise UsageError(f"{what} list is empty")
    return items


def _seeds(raw: str) -> list[int]:
    try:
        return [int(s) for s in _csv_list(raw, "seeds")]
    except ValueError:
        raise UsageError(f"seeds must be integers: {raw!r}") from None


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = _prepare_out(args.out, args.force)
    write_config(cfg, out / "config.yaml")
    res = train(cfg, out)
    print(f"seed={cfg.seed} updates={res.updates} final_score={res.final_score}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    stack = NetworkStack.load(ckpt)
    spec = _config(args.config).env
    if spec.obs_shape != stack.obs_shape:
        raise UsageError(f"checkpoint expects observations {stack.obs_shape}, config gives {spec.obs_shape}")
    score = evaluate(stack, spec, args.episodes, args.seed)
    result = {"checkpoint": str(ckpt), "episodes": args.episodes, "seed": args.seed, "mean_return": score}
    if args.report:
        Path(args.report).write_text(json.dumps(result, indent=2, sort_keys=True))
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _grid(args) -> list[tuple[str, list]]:
    axes, values = args.axis or [], args.values or []
    if not axes:
        raise UsageError("at least one --axis is required")
    if len(axes) != len(values):
        raise UsageError("each --axis needs exactly one --values")
    grid = []
    for axis, raw in zip(axes, values):
        if axis not in AXES:
            raise UsageError(f"unknown axis {axis!r}; expected one of {', '.join(AXES)}")
        try:
            grid.append((axis, [parse_axis_value(axis, v) for v in _csv_list(raw, f"--values for {axis}")]))
        except ValueError as exc:
            raise UsageError(f"bad value for axis {axis}: {exc}") from None
    return grid


def cmd_ablate(args) -> int:
    base = _config(args.config)
    grid = _grid(args)
    seeds = _seeds(args.seeds)
    try:
        plan_ablation(base, grid, seeds)
    except ValueError as exc:
        raise UsageError(f"illegal ablation: {exc}") from None
    out = Path(args.out)
    if args.force and out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(base, out / "base_config.yaml")
    matrix = ablation_suite(base, grid, seeds, run_root=out / "runs", jobs=args.jobs)
    matrix.to_csv(out / "scores.csv")
    print(f"wrote {out / 'scores.csv'} ({matrix.shape[1]} configurations x {matrix.shape[0]} seeds)")
    for j, label in enumerate(matrix.task_names):
        col = matrix.scores[:, j]
        print(f"  {label}: mean={metrics.mean(col):.4f} iqm={metrics.iqm(col):.4f} median={metrics.median(col):.4f}")
    return EXIT_OK


def _bounds(raw: str | None):
    if raw is None:
        return None
    try:
        lo, hi = (float(x) for x in raw.split(","))
    except ValueError:
        raise UsageError(f"--bounds must be LO,HI; got {raw!r}") from None
    if lo == hi:
        raise UsageError("--bounds needs LO != HI")
    return lo, hi


def cmd_metrics(args) -> int:
    path = Path(args.scores)
    if not path.is_file():
        raise UsageError(f"scores file not found: {path}")
    try:
        matrix = metrics.ScoreMatrix.from_csv(path)
    except metrics.ScoreFormatError as exc:
        raise UsageError(str(exc)) from None
    bounds = _bounds(args.bounds)
    if bounds:
        matrix = matrix.normalized(*bounds)
    if args.resamples < 100:
        raise UsageError("--resamples must be at least 100")
    report = metrics.full_report(matrix, resamples=args.resamples, alpha=args.alpha, seed=args.seed)
    report["normalization"] = {"low": bounds[0], "high": bounds[1]} if bounds else None
    metrics.write_report_json(args.report, report)
    if args.profile:
        metrics.write_profile_csv(args.profile, report)
    agg = report["aggregates"]
    for name in ("mean", "median", "iqm"):
        a = agg[name]
        print(f"{name}: {a['point']:.6g} [{a['ci_low']:.6g}, {a['ci_high']:.6g}]")
    return EXIT_OK


def cmd_check_blocks(args) -> int:
    spec = MDPSpec(grid_size=args.grid, frame_stack=args.frame_stack, margin=args.margin)
    report = check_block_structure(spec, pad=args.pad)
    print(json.dumps({"disjoint": report.disjoint, "decodable": report.decodable, "states": report.n_states,
                      "views": report.n_views, "collisions": len(report.collisions)}))
    return EXIT_OK if report.disjoint and report.decodable else EXIT_RUNTIME


def directional_summary(matrix: metrics.ScoreMatrix, random_returns: np.ndarray, resamples: int = 2000,
                        seed: int = 0, treatment: str = "mode=vcd", control: str = "mode=base") -> dict:
    """IQM comparison of two configurations against the random-policy baseline."""
    baseline = float(np.mean(random_returns))
    out = {"random_baseline": baseline, "configs": {}}
    for label in (treatment, control):
        col = matrix.column(label)
        point = metrics.iqm(col.scores)
        se = metrics.bootstrap_stderr(col, metrics.iqm, resamples, seed)
        out["configs"][label] = {"iqm": point, "bootstrap_se": se, "margin_in_se": (point - baseline) / se if se > 0 else
                                 (float("inf") if point > baseline else float("-inf"))}
    t, c = out["configs"][treatment], out["configs"][control]
    out["vcd_ge_base"] = t["iqm"] >= c["iqm"]
    out["both_beat_random_by_3se"] = t["margin_in_se"] >= 3 and c["margin_in_se"] >= 3
    out["pass"] = out["vcd_ge_base"] and out["both_beat_random_by_3se"]
    return out


def cmd_directional(args) -> int:
    base = _config(args.config)
    seeds = _seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(base, out / "base_config.yaml")
    grid = [("mode", ["vcd", "base"])]
    matrix = ablation_suite(base, grid, seeds, run_root=out / "runs", jobs=args.jobs)
    matrix.to_csv(out / "scores.csv")
    randoms = random_policy_returns(base.env, args.random_episodes, base.seed)
    summary = directional_summary(matrix, randoms, args.resamples, args.seed)
    summary["random_episodes"] = args.random_episodes
    (out / "directional.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vcd", description="View-consistent dynamics: training, ablations, metrics.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("--config", help="YAML config (defaults for every omitted field)")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="YAML config supplying the environment")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--report", help="optional JSON output path")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="cross product of ablation values and seeds")
    a.add_argument("--axis", action="append", help=f"one of {', '.join(AXES)}; repeat for a grid")
    a.add_argument("--values", action="append", help="comma-separated values for the matching --axis")
    a.add_argument("--seeds", required=True, help="comma-separated seeds")
    a.add_argument("--config", help="base YAML config")
    a.add_argument("--out", required=True, help="suite directory; completed runs inside it are reused")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--force", action="store_true", help="discard previous runs in --out")
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("metrics", help="aggregates, bootstrap CIs and performance profile of a score CSV")
    m.add_argument("--scores", required=True, help="CSV with config,seed,score or task,run,score")
    m.add_argument("--report", required=True, help="JSON report path")
    m.add_argument("--profile", help="profile CSV path (rho,fraction,ci_low,ci_high)")
    m.add_argument("--resamples", type=int, default=2000)
    m.add_argument("--alpha", type=float, default=0.05)
    m.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    m.add_argument("--bounds", help="LO,HI for per-task min-max normalisation (write --bounds=-10,10 when LO is negative)")
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("check-blocks", help="exhaustive view block-structure check")
    c.add_argument("--grid", type=int, default=8)
    c.add_argument("--frame-stack", type=int, default=2)
    c.add_argument("--margin", type=int, default=4)
    c.add_argument("--pad", type=int, default=4)
    c.set_defaults(func=cmd_check_blocks)

    d = sub.add_parser("directional", help="vcd vs base learning comparison against a random policy")
    d.add_argument("--config", help="base YAML config")
    d.add_argument("--seeds", default=",".join(str(i) for i in range(10)))
    d.add_argument("--out", required=True)
    d.add_argument("--jobs", type=int, default=1)
    d.add_argument("--resamples", type=int, default=2000)
    d.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    d.add_argument("--random-episodes", type=int, default=200)
    d.set_defaults(func=cmd_directional)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        _setup_logging()
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
