"""Monte Carlo evaluation of the three controller variants.

Every test spawns one random world and runs each requested variant on it.
Random streams are derived from ``(master_seed, test index, stream id)``
with ``numpy.random.SeedSequence``: stream 0 spawns the world, stream
``1 + variant position in VARIANTS`` drives that variant's episode, so all
variants see the same geometry and results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bo import VARIANTS, BoConfig, EpisodeTrace, Variant, run_episode
from .pod import PodModel
from .world import DetectionModel, RadioModel, TimingConfig, spawn_world

log = logging.getLogger(__name__)

WORLD_STREAM = 0
POD_STREAM = 0xB0D


def test_seed(master_seed: int, test_index: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, test_index, stream])


def variant_stream(variant: Variant) -> int:
    return 1 + VARIANTS.index(Variant(variant))


def pod_seed(master_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, POD_STREAM])


@dataclass(frozen=True)
class ExperimentConfig:
    n_tests: int = 50
    n_targets: int = 20
    timing: TimingConfig = field(default_factory=TimingConfig)
    radio: RadioModel = field(default_factory=RadioModel)
    det: DetectionModel = field(default_factory=DetectionModel)
    d_range: tuple[float, float] = (1.5, 5.5)
    eps_gamma: float = math.radians(2.0)
    fov_half_width: float = math.radians(15.0)
    bo: BoConfig = field(default_factory=BoConfig)
    variants: tuple[Variant, ...] = VARIANTS
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_tests < 1:
            raise ValueError(f"n_tests must be >= 1, got {self.n_tests}")
        variants = tuple(Variant(v) for v in self.variants)
        if not variants:
            raise ValueError("at least one variant is required")
        # canonical order keeps CSV columns stable
        object.__setattr__(self, "variants", tuple(v for v in VARIANTS if v in variants))

    def bo_for(self, variant: Variant) -> BoConfig:
        return replace(self.bo, variant=Variant(variant))


@dataclass(frozen=True)
class DrSeries:
    times: np.ndarray
    dr: dict[Variant, np.ndarray]


@dataclass
class McReport:
    dr_series: DrSeries
    final_dr: dict[Variant, float]
    traces: dict[tuple[int, Variant], EpisodeTrace]
    failures: list[tuple[int, Variant, str]]
    config: ExperimentConfig
    pod_r2: float | None = None


def discovery_rate(indicators) -> np.ndarray:
    """Per-step fraction of tests whose associated target is the transmitter."""
    rows = [np.asarray(r, dtype=bool) for r in indicators]
    if not rows:
        raise ValueError("indicator matrix is empty")
    if len({r.shape for r in rows}) != 1 or rows[0].ndim != 1 or rows[0].size == 0:
        raise ValueError("indicator matrix is ragged or has empty rows")
    return np.vstack(rows).mean(axis=0)


def _run_test(cfg: ExperimentConfig, pod_model: PodModel | None, j: int):
    out = {}
    try:
        world = spawn_world(
            cfg.n_targets, cfg.d_range, cfg.eps_gamma,
            np.random.default_rng(test_seed(cfg.master_seed, j, WORLD_STREAM)),
        )
    except Exception as exc:
        return {v: f"{type(exc).__name__}: {exc}" for v in cfg.variants}
    for v in cfg.variants:
        rng = np.random.default_rng(test_seed(cfg.master_seed, j, variant_stream(v)))
        try:
            out[v] = run_episode(
                world, cfg.timing, cfg.radio, cfg.det,
                None if v is Variant.RAPAS else pod_model,
                cfg.bo_for(v), rng, cfg.fov_half_width,
            )
        except Exception as exc:
            out[v] = f"{type(exc).__name__}: {exc}"
    return out


def run_mc(cfg: ExperimentConfig, pod_model: PodModel | None, pod_r2: float | None = None) -> McReport:
    """Run ``cfg.n_tests`` tests and aggregate the discovery rate per variant.

    A test whose episode raises is scored as never correct for that variant
    and listed in ``McReport.failures``; the experiment carries on.
    """
    if pod_model is None and any(v is not Variant.RAPAS for v in cfg.variants):
        raise ValueError("a trained POD model is required for the vision-based variants")
    jobs = range(cfg.n_tests)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_test, [cfg] * cfg.n_tests, [pod_model] * cfg.n_tests, jobs))
    else:
        results = [_run_test(cfg, pod_model, j) for j in jobs]

    n_steps = cfg.timing.n_test
    traces, failures = {}, []
    indicators = {v: [] for v in cfg.variants}
    for j, res in enumerate(results):
        for v in cfg.variants:
            item = res[v]
            if isinstance(item, EpisodeTrace):
                traces[(j, v)] = item
                indicators[v].append(item.indicators())
            else:
                log.warning("test %d, %s failed: %s", j, v.value, item)
                failures.append((j, v, item))
                indicators[v].append(np.zeros(n_steps, dtype=bool))

    dr = {v: discovery_rate(indicators[v]) for v in cfg.variants}
    series = DrSeries(cfg.timing.times(), dr)
    final = {v: float(dr[v][-1]) for v in cfg.variants}
    return McReport(series, final, traces, failures, cfg, pod_r2)


def time_to_fraction_of_final(times, dr, fraction: float = 0.5) -> float:
    """First time at which DR reaches ``fraction`` of its final value.

    NaN when the final DR is zero, since there is no convergence to time.
    """
    dr = np.asarray(dr, dtype=float)
    final = dr[-1]
    if final <= 0:
        return math.nan
    idx = int(np.argmax(dr >= fraction * final))
    return float(np.asarray(times)[idx])


def compare_variants(report: McReport) -> dict[str, float]:
    """Final-DR margins of the fused variant over each baseline, and time-to-half-final per variant."""
    out: dict[str, float] = {}
    final = report.final_dr
    ref = final.get(Variant.RA2VIPAS)
    for v in (Variant.RAPAS, Variant.RAVIPAS):
        if ref is not None and v in final:
            out[f"margin_over_{v.value}"] = ref - final[v]
    for v, dr in report.dr_series.dr.items():
        out[f"time_to_half_final_{v.value}"] = time_to_fraction_of_final(report.dr_series.times, dr)
    return out


def summary_rows(report: McReport) -> list[tuple[str, float]]:
    rows = [(f"final_dr_{v.value}", report.final_dr[v]) for v in report.config.variants]
    rows += sorted(compare_variants(report).items())
    rows.append(("n_failures", float(len(report.failures))))
    if report.pod_r2 is not None:
        rows.append(("pod_r2", report.pod_r2))
    return rows


def write_report(report: McReport, run_dir) -> list[Path]:
    """Write ``dr_series.csv``, ``summary.csv`` and one trace CSV per test and variant."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = run_dir / "dr_series.csv"
    variants = report.config.variants
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds"] + [f"dr_{v.value}" for v in variants])
        for i, t in enumerate(report.dr_series.times):
            writer.writerow([repr(float(t))] + [repr(float(report.dr_series.dr[v][i])) for v in variants])
    written.append(path)

    path = run_dir / "summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in summary_rows(report):
            writer.writerow([key, repr(float(value))])
    written.append(path)

    trace_dir = run_dir / "traces"
    trace_dir.mkdir(exist_ok=True)
    for (j, v), trace in sorted(report.traces.items(), key=lambda kv: (kv[0][0], VARIANTS.index(kv[0][1]))):
        path = trace_dir / f"test_{j:03d}_{v.value}.csv"
        trace.to_csv(path)
        written.append(path)
    return written


def plot_dr(report: McReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for v, dr in report.dr_series.dr.items():
        ax.plot(report.dr_series.times, dr, label=v.value)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("DR")
    ax.set_ylim(0, 1.02)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

