"""Self-supervised learning of the probability of detection (POD) versus RSSI.

While the platform tracks a single moving target, every RF tick yields one
omnidirectional RSSI sample and the fraction of the preceding ``nu`` camera
frames in which the target was detected. Those pairs train a heteroscedastic
GP whose per-point noise is the binomial variance of the empirical fraction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gp
from .world import (
    DetectionModel,
    PlatformState,
    RadioModel,
    Target,
    TargetMotionModel,
    TimingConfig,
    World,
    detect_frame,
    inverse_path_loss,
    path_loss,
    pod_true,
    sample_rssi_iso,
    step_target_motion,
)

DATASET_COLUMNS = ("rssi_dbm", "empirical_pod", "noise_var")
FIT_COLUMNS = ("rssi_dbm", "pod_true", "pod_pred_mean", "pod_pred_std")


def label_noise_var(p_tilde: float, nu: int) -> float:
    """Binomial variance of an ``nu``-frame detection fraction, floored at ``1/(4 nu^2)``."""
    return max(p_tilde * (1.0 - p_tilde) / nu, 1.0 / (4.0 * nu * nu))


@dataclass(frozen=True)
class PodTrainingSample:
    rssi_iso: float
    empirical_pod: float
    label_noise_var: float


@dataclass(frozen=True)
class PodModel:
    """GP over scalar RSSI; predictions are clamped to ``[0, 1]``."""

    gp: gp.GpModel

    def predict(self, rssi) -> np.ndarray:
        return np.clip(self.gp.predict(np.atleast_1d(rssi), full_cov=False).mean, 0.0, 1.0)

    def predict_one(self, rssi: float) -> float:
        return float(self.predict(rssi)[0])

    def predict_with_std(self, rssi) -> tuple[np.ndarray, np.ndarray]:
        pred = self.gp.predict(np.atleast_1d(rssi), full_cov=False)
        return np.clip(pred.mean, 0.0, 1.0), pred.std


def collect_training_dataset(
    radio: RadioModel,
    det: DetectionModel,
    motion: TargetMotionModel,
    timing: TimingConfig,
    rng: np.random.Generator,
    d0: float | None = None,
) -> list[PodTrainingSample]:
    """Simulate ``timing.n_train`` RF ticks of a tracked, randomly walking target.

    The camera points at the target throughout, so detection failures come only
    from distance. Each tick draws ``nu`` frames at the current distance, then
    the concurrent RSSI sample, then moves the target.
    """
    nu = timing.nu
    d = rng.uniform(motion.d_min, motion.d_max) if d0 is None else float(d0)
    samples = []
    for _ in range(timing.n_train):
        world = World((Target.from_polar(d, 0.0),), 0)
        platform = PlatformState(pan=0.0)
        hits = sum(bool(detect_frame(world, platform, det, rng)[0]) for _ in range(nu))
        p_tilde = hits / nu
        z = sample_rssi_iso(radio, d, rng)
        samples.append(PodTrainingSample(z, p_tilde, label_noise_var(p_tilde, nu)))
        d = step_target_motion(motion, d, rng)
    return samples


def samples_to_dataset(samples: list[PodTrainingSample]) -> gp.GpDataset:
    return gp.GpDataset(
        inputs=np.array([s.rssi_iso for s in samples]),
        labels=np.array([s.empirical_pod for s in samples]),
        noise=np.array([s.label_noise_var for s in samples]),
    )


def train_pod_model(
    samples: list[PodTrainingSample], spec: gp.KernelSpec | None = None
) -> PodModel:
    """Fit a zero-mean GP with the per-sample label variances on its diagonal."""
    if len(samples) < 2:
        raise ValueError(f"need at least 2 training samples, got {len(samples)}")
    spec = spec or gp.KernelSpec(gp.MATERN52)
    model = gp.fit_hyperparams(samples_to_dataset(samples), spec, mean_const=0.0, fit_noise=True)
    return PodModel(model)


def truth_on_grid(det: DetectionModel, radio: RadioModel, grid) -> np.ndarray:
    """True POD at each RSSI value, through the inverted noise-free path loss."""
    return pod_true(det, inverse_path_loss(radio, np.asarray(grid, dtype=float)))


def default_grid(radio: RadioModel, motion: TargetMotionModel, size: int = 200) -> np.ndarray:
    """RSSI grid covering the noise-free image of the training distance band."""
    lo = path_loss(radio, motion.d_max)
    hi = path_loss(radio, motion.d_min)
    return np.linspace(min(lo, hi), max(lo, hi), size)


def training_grid(samples: list[PodTrainingSample], size: int = 200) -> np.ndarray:
    """RSSI grid spanning the observed training inputs."""
    if not samples:
        raise ValueError("no training samples")
    z = np.array([s.rssi_iso for s in samples])
    return np.linspace(z.min(), z.max(), size)


def evaluate_pod_fit(model: PodModel, det: DetectionModel, radio: RadioModel, grid) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("evaluation grid is empty")
    truth = truth_on_grid(det, radio, grid)
    return gp.r2_score(truth, model.predict(grid))


def write_dataset_csv(samples: list[PodTrainingSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_COLUMNS)
        for s in samples:
            writer.writerow([repr(s.rssi_iso), repr(s.empirical_pod), repr(s.label_noise_var)])


def read_dataset_csv(path) -> list[PodTrainingSample]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DATASET_COLUMNS:
            raise ValueError(f"{path}: expected columns {DATASET_COLUMNS}, got {reader.fieldnames}")
        return [
            PodTrainingSample(float(row["rssi_dbm"]), float(row["empirical_pod"]), float(row["noise_var"]))
            for row in reader
        ]


def write_fit_csv(model: PodModel, det: DetectionModel, radio: RadioModel, grid, path) -> None:
    grid = np.asarray(grid, dtype=float)
    truth = truth_on_grid(det, radio, grid)
    mean, std = model.predict_with_std(grid)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIT_COLUMNS)
        for row in zip(grid, truth, mean, std):
            writer.writerow([repr(float(v)) for v in row])


def plot_fit(samples, model, det, radio, grid, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = np.asarray(grid, dtype=float)
    mean, std = model.predict_with_std(grid)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([s.rssi_iso for s in samples], [s.empirical_pod for s in samples],
            "k.", ms=2, alpha=0.4, label="training data")
    ax.plot(grid, truth_on_grid(det, radio, grid), "b-", label="true POD")
    ax.plot(grid, mean, "g-", label="GP mean")
    ax.fill_between(grid, mean - 2 * std, mean + 2 * std, color="g", alpha=0.2)
    ax.set_xlabel("RSSI [dBm]")
    ax.set_ylabel("POD")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
