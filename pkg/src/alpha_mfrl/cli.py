"""Command line entry point: ``alpha-mfrl train|evaluate|analyze|report``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import CliConfig, ConfigError, load_config, serialize_config
from .nn import CheckpointError, atomic_write_bytes, checkpoint_load
from .orchestrator import AGENT_KINDS, EVAL_LEARNER, evaluate_policy, run_training, seed_designs
from .records import EVAL_COLUMNS, MORAN_COLUMNS, read_csv, write_csv

log = logging.getLogger("alpha_mfrl")


class CliError(Exception):
    pass


def _config(args, run_dir: Path | None = None) -> CliConfig:
    if args.config:
        cfg = load_config(args.config)
    elif run_dir is not None and (run_dir / "config.cfg").exists():
        cfg = load_config(run_dir / "config.cfg")
    else:
        cfg = CliConfig()
    if getattr(args, "agent", None):
        cfg = replace(cfg, agent=args.agent)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    run = run_training(cfg.run_config(out))
    atomic_write_bytes(out / "config.cfg", serialize_config(cfg).encode("utf-8"))
    log.info("trained %s: %d evaluations, %.4f s model time, artifacts in %s",
             cfg.agent, run.ledger.total_count, run.ledger.total_time, out)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    policy, _ = checkpoint_load(args.checkpoint)
    seeds = seed_designs(cfg.run_config())
    rows = evaluate_policy(policy, seeds, cfg.episode_length)
    write_csv(Path(args.out) / "eval.csv", EVAL_COLUMNS, rows)
    return 0


def _require(path: Path) -> Path:
    if not path.exists():
        raise CliError(f"missing {path}")
    return path


def _svg(kind: str, out: Path, **data) -> None:
    from . import plots

    getattr(plots, kind)(out, **data)


def cmd_analyze(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise CliError(f"run directory {run} does not exist")
    cfg = _config(args, run)
    if args.what == "usage":
        usage = read_csv(_require(run / "usage.csv"))
        rows = analysis.usage_over_time(usage, args.window or cfg.usage_window)
        write_csv(run / "usage_time.csv", list(rows[0]), rows)
        if args.plot:
            _svg("usage_curves", run / "usage_time.svg", rows=rows)
    elif args.what == "spatial":
        usage = read_csv(_require(run / "usage.csv"))
        grid = analysis.grid_usage_proportions(usage, cfg.grid_resolution)
        bw = analysis.bandwidth_from_cells(cfg.grid_resolution, cfg.bandwidth_cells)
        models = [args.model] if args.model else list(analysis.MODEL_NAMES)
        for m in models:
            if m not in analysis.MODEL_NAMES:
                raise CliError(f"unknown model {m!r}")
            centers = grid.centers()
            prop = grid.proportions(m)
            cells = [{"x1": float(centers[i, j, 0]), "x2": float(centers[i, j, 1]),
                      "visits": int(grid.visits[i, j]),
                      "proportion": None if np.isnan(prop[i, j]) else float(prop[i, j])}
                     for i in range(grid.resolution) for j in range(grid.resolution)]
            write_csv(run / f"grid_{m}.csv", ("x1", "x2", "visits", "proportion"), cells)
            res = analysis.spatial_moran(grid, m, bw, cfg.n_perm,
                                         np.random.default_rng(cfg.rng_seed))
            write_csv(run / f"moran_{m}.csv", MORAN_COLUMNS, [vars(res)])
            if args.plot:
                _svg("grid_heatmap", run / f"grid_{m}.svg", grid=grid, model=m)
    elif args.what == "field":
        ckpt = Path(args.checkpoint) if args.checkpoint else _latest_checkpoint(run, cfg.agent)
        rows = analysis.policy_field_from_checkpoint(ckpt, cfg.grid_resolution)
        name = f"field_{ckpt.stem}.csv"
        write_csv(run / name, ("x1", "x2", "mean1", "mean2"), rows)
        if args.plot:
            _svg("quiver", run / f"field_{ckpt.stem}.svg", rows=rows)
    return 0


def _latest_checkpoint(run: Path, agent: str) -> Path:
    learner = EVAL_LEARNER[agent]
    found = sorted((run / "checkpoints").glob(f"ep*_{learner}.alphann"),
                   key=lambda p: int(p.stem.split("_")[0][2:]))
    if not found:
        raise CliError(f"no {learner} checkpoints under {run / 'checkpoints'}")
    return found[-1]


def cmd_report(args) -> int:
    runs = [Path(r) for r in args.runs]
    missing = [str(r) for r in runs if not (r / "ledger.csv").exists() or not (r / "eval.csv").exists()]
    if missing:
        raise CliError(f"missing run data: {', '.join(missing)}")
    agents = {}
    for r in runs:
        cfg = _config(argparse.Namespace(config=None), r)
        name = cfg.agent if cfg.agent not in agents else f"{cfg.agent}:{r.name}"
        agents[name] = (read_csv(r / "ledger.csv"), read_csv(r / "eval.csv"))
    report = analysis.efficiency_report(agents)
    rows = [{"agent": a.agent, "total_time_s": a.total_time_s, "seed_q_median": a.seed_q_median,
             "q_median": a.q_median, "q_25": a.q_25, "q_75": a.q_75} for a in report]
    write_csv(Path(args.out), ("agent", "total_time_s", "seed_q_median", "q_median", "q_25", "q_75"),
              rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alpha-mfrl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent kind and write its run directory")
    t.add_argument("--agent", choices=AGENT_KINDS)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="roll out a checkpoint's mean policy from the run seeds")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("analyze", help="usage-over-time, spatial Moran's I, or policy field")
    a.add_argument("what", choices=("usage", "spatial", "field"))
    a.add_argument("--run", required=True)
    a.add_argument("--config")
    a.add_argument("--model")
    a.add_argument("--checkpoint")
    a.add_argument("--window", type=int)
    a.add_argument("--plot", action="store_true", help="also write an SVG (needs matplotlib)")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="quality/efficiency comparison across runs")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", default="report.csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, CheckpointError, analysis.AnalysisError, OSError, ValueError) as exc:
        print(f"alpha-mfrl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
