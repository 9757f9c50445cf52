"""Command-line entry point: ``ra2vipas train-pod | run-episode | run-mc``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bo, mc, pod
from .config import ConfigError, RunConfig, parse_config
from .world import spawn_world

log = logging.getLogger("ra2vipas")

OUT_ENV = "RA2VIPAS_OUT"


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration overrides")
    for f in fields(RunConfig):
        if f.name in ("seed", "out", "plots"):
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = {"float": float, "int": int, "str": str, "bool": None}[f.type]
        if kind is None:
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, dest=f.name, type=kind, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML file of flat key: value pairs")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", default=None, help=f"output directory (fallback: ${OUT_ENV}, then ./runs)")
    common.add_argument("--plots", action="store_true", default=None, help="also write SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    _add_override_flags(common)

    parser = argparse.ArgumentParser(prog="ra2vipas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-pod", parents=[common], help="learn the detection model and report its R^2")
    for name, text in (("run-episode", "run one discovery episode per variant"),
                       ("run-mc", "run the Monte Carlo experiment")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument(
            "--pod-dataset", type=Path, default=None,
            help="train the detection model from this dataset CSV instead of simulating one",
        )
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in (f.name for f in fields(RunConfig))}
    if overrides.get("out") is None and os.environ.get(OUT_ENV) and not _file_sets(args.config, "out"):
        overrides["out"] = os.environ[OUT_ENV]
    return parse_config(args.config, overrides)


def _file_sets(path, key) -> bool:
    if path is None:
        return False
    from .config import load_file

    return key in load_file(path)


def make_run_dir(cfg: RunConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S")
    base = Path(cfg.out) / f"{stamp}_seed{cfg.seed}_{command}"
    run_dir, i = base, 1
    while run_dir.exists():
        run_dir = base.with_name(f"{base.name}_{i}")
        i += 1
    run_dir.mkdir(parents=True)
    cfg.dump(run_dir / "config.yaml")
    return run_dir


def train_pod(cfg: RunConfig, run_dir: Path | None = None, dataset_path: Path | None = None):
    """Collect (or load) a POD dataset, train the model, and optionally write artifacts."""
    radio, det, motion = cfg.radio(), cfg.detection(), cfg.motion()
    if dataset_path is not None:
        samples = pod.read_dataset_csv(dataset_path)
    else:
        rng = np.random.default_rng(mc.pod_seed(cfg.seed))
        samples = pod.collect_training_dataset(radio, det, motion, cfg.timing(), rng)
    model = pod.train_pod_model(samples)
    grid = pod.training_grid(samples)
    r2 = pod.evaluate_pod_fit(model, det, radio, grid)
    if run_dir is not None:
        pod.write_dataset_csv(samples, run_dir / "pod_dataset.csv")
        pod.write_fit_csv(model, det, radio, grid, run_dir / "pod_fit.csv")
        if cfg.plots:
            pod.plot_fit(samples, model, det, radio, grid, run_dir / "pod_fit.svg")
    return model, r2


def _write_summary(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in rows:
            writer.writerow([key, repr(float(value))])


def cmd_train_pod(cfg: RunConfig, args) -> int:
    run_dir = make_run_dir(cfg, "train-pod")
    model, r2 = train_pod(cfg, run_dir)
    k = model.gp.kernel
    _write_summary(run_dir / "summary.csv", [
        ("pod_r2", r2), ("n_train", cfg.n_train),
        ("signal_var", k.signal_var), ("lengthscale", k.lengthscale),
    ])
    print(f"POD R^2 = {r2:.4f}  ->  {run_dir}")
    return 0


def cmd_run_episode(cfg: RunConfig, args) -> int:
    run_dir = make_run_dir(cfg, "run-episode")
    exp = cfg.experiment()
    needs_pod = any(v is not bo.Variant.RAPAS for v in exp.variants)
    model, r2 = train_pod(cfg, run_dir, args.pod_dataset) if needs_pod else (None, None)
    world = spawn_world(
        exp.n_targets, exp.d_range, exp.eps_gamma,
        np.random.default_rng(mc.test_seed(cfg.seed, 0, mc.WORLD_STREAM)),
    )
    rows = [] if r2 is None else [("pod_r2", r2)]
    for v in exp.variants:
        rng = np.random.default_rng(mc.test_seed(cfg.seed, 0, mc.variant_stream(v)))
        trace = bo.run_episode(
            world, exp.timing, exp.radio, exp.det,
            None if v is bo.Variant.RAPAS else model, exp.bo_for(v), rng, exp.fov_half_width,
        )
        trace.to_csv(run_dir / f"trace_{v.value}.csv")
        last = trace.rows[-1]
        rows += [(f"final_correct_{v.value}", last.correct), (f"final_gamma_hat_{v.value}", last.gamma_hat_rad)]
        print(f"{v.value:9s} tx={world.tx_index} estimate={last.tx_estimate} "
              f"gamma_hat={last.gamma_hat_rad:+.3f} true={world.bearings[world.tx_index]:+.3f}")
    _write_summary(run_dir / "summary.csv", rows)
    print(f"-> {run_dir}")
    return 0


def cmd_run_mc(cfg: RunConfig, args) -> int:
    run_dir = make_run_dir(cfg, "run-mc")
    exp = cfg.experiment()
    needs_pod = any(v is not bo.Variant.RAPAS for v in exp.variants)
    model, r2 = train_pod(cfg, run_dir, args.pod_dataset) if needs_pod else (None, None)
    report = mc.run_mc(exp, model, r2)
    mc.write_report(report, run_dir)
    if cfg.plots:
        mc.plot_dr(report, run_dir / "dr_series.svg")
    for v, dr in report.final_dr.items():
        print(f"final DR {v.value:9s} {dr:.3f}")
    if report.failures:
        print(f"{len(report.failures)} failed episodes (scored as incorrect)")
    print(f"-> {run_dir}")
    return 0


COMMANDS = {"train-pod": cmd_train_pod, "run-episode": cmd_run_episode, "run-mc": cmd_run_mc}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
