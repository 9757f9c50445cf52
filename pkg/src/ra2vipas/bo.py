"""Bayesian-optimization controller over the pan angle.

Per RF tick the platform measures (omni RSSI, directional RSSI, empirical
detection fraction), turns them into a scalar reward, conditions a GP
surrogate of reward versus pan, estimates the transmitter bearing as the
surrogate's maximiser and chooses the next pan by UCB.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import gp
from .pod import PodModel
from .world import (
    DetectionModel,
    PlatformState,
    RadioModel,
    TimingConfig,
    World,
    detect_frame,
    sample_rssi_dir,
    sample_rssi_iso,
    step_platform,
    wrap_angle,
)


class Variant(str, enum.Enum):
    RA2VIPAS = "ra2vipas"
    RAPAS = "rapas"
    RAVIPAS = "ravipas"


VARIANTS = tuple(Variant)


@dataclass(frozen=True)
class BoConfig:
    """Controller settings.

    ``beta`` weights the posterior std in UCB as ``sqrt(beta)``; ``zeta``
    scales the directional RSSI magnitude; the first ``warmup_steps`` pans
    are random; hyperparameters are refitted every ``refit_every``
    observations and only re-conditioned in between.
    """

    beta: float = 4.0
    zeta: float = 50.0
    grid_size: int = 721
    warmup_steps: int = 5
    refit_every: int = 10
    variant: Variant = Variant.RA2VIPAS

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.zeta > 0:
            raise ValueError(f"zeta must be > 0, got {self.zeta}")
        if self.grid_size < 8:
            raise ValueError(f"grid_size must be >= 8, got {self.grid_size}")
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.refit_every < 1:
            raise ValueError(f"refit_every must be >= 1, got {self.refit_every}")

    def grid(self) -> np.ndarray:
        return pan_grid(self.grid_size)


def pan_grid(size: int) -> np.ndarray:
    return -math.pi + 2.0 * math.pi * np.arange(size) / size


@dataclass(frozen=True)
class BoObservation:
    pan: float
    y_d: float
    y_rf: float
    y: float
    z_iso: float = math.nan
    z_dir: float = math.nan
    p_tilde: float = math.nan


def fuse(y_d: float, y_rf: float, variant: Variant) -> float:
    variant = Variant(variant)
    if variant is Variant.RAPAS:
        return y_rf
    if variant is Variant.RAVIPAS:
        return y_d
    return y_d * y_rf


def build_observation(
    pan: float,
    z_iso: float,
    z_dir: float,
    p_tilde: float,
    pod_model: PodModel | None,
    cfg: BoConfig,
) -> BoObservation:
    """Turn one tick of raw measurements into a reward sample.

    ``y_d`` is minus the gap between the detection fraction predicted from
    the omni RSSI and the one observed; ``y_rf`` is the scaled magnitude of
    the directional RSSI.
    """
    if not 0.0 <= p_tilde <= 1.0:
        raise ValueError(f"p_tilde must lie in [0, 1], got {p_tilde}")
    if pod_model is None:
        if cfg.variant is not Variant.RAPAS:
            raise ValueError(f"variant {cfg.variant.value} needs a POD model")
        y_d = math.nan
    else:
        p_hat = pod_model.predict_one(z_iso) if isinstance(pod_model, PodModel) else float(pod_model(z_iso))
        y_d = -abs(min(max(p_hat, 0.0), 1.0) - p_tilde)
    y_rf = abs(z_dir) / cfg.zeta
    return BoObservation(pan, y_d, y_rf, fuse(y_d, y_rf, cfg.variant), z_iso, z_dir, p_tilde)


def measure_step(
    world: World,
    platform: PlatformState,
    radio: RadioModel,
    det: DetectionModel,
    timing: TimingConfig,
    pod_model: PodModel | None,
    cfg: BoConfig,
    rng: np.random.Generator,
) -> BoObservation:
    """One RF tick with the pan held still for ``nu`` camera frames.

    A frame counts as a success if any visible target is detected, since the
    camera cannot tell targets apart. The draw sequence is the same for
    every variant.
    """
    hits = sum(bool(np.any(detect_frame(world, platform, det, rng))) for _ in range(timing.nu))
    p_tilde = hits / timing.nu
    d_tx = world.distances[world.tx_index]
    gamma_tx = world.bearings[world.tx_index]
    z_iso = sample_rssi_iso(radio, d_tx, rng)
    z_dir = sample_rssi_dir(radio, d_tx, platform.pan, gamma_tx, rng)
    return build_observation(platform.pan, z_iso, z_dir, p_tilde, pod_model, cfg)


def pan_features(pan) -> np.ndarray:
    """Embed pan angles on the unit circle so the surrogate kernel is periodic."""
    pan = np.atleast_1d(np.asarray(pan, dtype=float))
    return np.column_stack([np.cos(pan), np.sin(pan)])


@dataclass
class BoState:
    """Mutable controller state for one episode."""

    observations: list[BoObservation] = field(default_factory=list)
    surrogate: gp.GpModel | None = None
    gamma_hat: float = math.nan
    tx_estimate: int = -1
    control: float = 0.0
    pan: float = 0.0
    hyper: tuple[float, float, float] | None = None

    def labels(self) -> np.ndarray:
        return np.array([o.y for o in self.observations])

    def pans(self) -> np.ndarray:
        return np.array([o.pan for o in self.observations])


DEFAULT_HYPER = (1.0, 1.0, 1e-2)


def update_surrogate(state: BoState, cfg: BoConfig) -> gp.GpModel:
    """Condition the surrogate on all observations so far.

    The constant prior mean is the label average. Kernel hyperparameters and
    a homoscedastic noise level are refitted when the observation count hits
    a multiple of ``refit_every`` (or on the first fittable step) and reused
    otherwise.
    """
    n = len(state.observations)
    labels = state.labels()
    mean = float(labels.mean()) if n else 0.0
    data = gp.GpDataset(pan_features(state.pans()), labels, 0.0)
    if n >= 2 and (state.hyper is None or n % cfg.refit_every == 0):
        fit = gp.fit_hyperparams_full(data, gp.KernelSpec(gp.MATERN52), mean, fit_noise=True)
        k = fit.model.kernel
        state.hyper = (k.signal_var, k.lengthscale, fit.noise)
        state.surrogate = fit.model
        return fit.model
    sv, ls, noise = state.hyper or DEFAULT_HYPER
    model = gp.GpModel(gp.KernelSpec(gp.MATERN52, sv, ls), data.with_noise(noise), mean)
    state.surrogate = model
    return model


def ucb_acquisition(surrogate: gp.GpModel, grid, beta: float) -> np.ndarray:
    pred = surrogate.predict(pan_features(grid), full_cov=False)
    return pred.mean + math.sqrt(beta) * pred.std


def select_control(
    state: BoState,
    cfg: BoConfig,
    step_index: int,
    rng: np.random.Generator,
    on_tick: bool = True,
) -> float:
    """Pan increment for the next tick.

    Zero between RF ticks. During warm-up the target pan is uniform on the
    circle, afterwards it is the UCB argmax on the grid (lowest index wins
    ties). The returned increment is wrapped into ``[-pi, pi)``.
    """
    if not on_tick:
        return 0.0
    if step_index < cfg.warmup_steps or state.surrogate is None:
        target = rng.uniform(-math.pi, math.pi)
    else:
        grid = cfg.grid()
        target = grid[int(np.argmax(ucb_acquisition(state.surrogate, grid, cfg.beta)))]
    return wrap_angle(target - state.pan)


def estimate_gamma(state: BoState, grid) -> float:
    if not state.observations or state.surrogate is None:
        raise ValueError("cannot estimate the bearing without observations")
    mean = state.surrogate.predict(pan_features(grid), full_cov=False).mean
    return float(grid[int(np.argmax(mean))])


def associate_tx(gamma_hat: float, world: World) -> int:
    """Index of the target whose bearing is closest to ``gamma_hat`` (lowest on ties)."""
    return int(np.argmin(np.abs(wrap_angle(world.bearings - gamma_hat))))


TRACE_COLUMNS = (
    "t_seconds", "pan_rad", "z_iso_dbm", "z_dir_dbm", "p_tilde",
    "y_d", "y_rf", "y", "gamma_hat_rad", "tx_estimate", "correct",
)


@dataclass(frozen=True)
class TraceRow:
    t_seconds: float
    pan_rad: float
    z_iso_dbm: float
    z_dir_dbm: float
    p_tilde: float
    y_d: float
    y_rf: float
    y: float
    gamma_hat_rad: float
    tx_estimate: int
    correct: bool


@dataclass
class EpisodeTrace:
    variant: Variant
    tx_index: int
    rows: list[TraceRow] = field(default_factory=list)

    def indicators(self) -> np.ndarray:
        return np.array([r.correct for r in self.rows], dtype=bool)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows:
                writer.writerow(_format_row(row))


def _format_row(row: TraceRow) -> list[str]:
    out = []
    for f in fields(row):
        v = getattr(row, f.name)
        if isinstance(v, bool):
            out.append(str(int(v)))
        elif isinstance(v, (int, np.integer)):
            out.append(str(int(v)))
        else:
            out.append(repr(float(v)))
    return out


def run_episode(
    world: World,
    timing: TimingConfig,
    radio: RadioModel,
    det: DetectionModel,
    pod_model: PodModel | None,
    cfg: BoConfig,
    rng: np.random.Generator,
    fov_half_width: float = math.radians(15.0),
) -> EpisodeTrace:
    """Run ``timing.n_test`` RF ticks of the discovery loop from a random pan."""
    platform = PlatformState(pan=rng.uniform(-math.pi, math.pi), fov_half_width=fov_half_width)
    state = BoState(pan=platform.pan)
    grid = cfg.grid()
    trace = EpisodeTrace(cfg.variant, world.tx_index)
    for k in range(1, timing.n_test + 1):
        obs = measure_step(world, platform, radio, det, timing, pod_model, cfg, rng)
        state.observations.append(obs)
        update_surrogate(state, cfg)
        state.gamma_hat = estimate_gamma(state, grid)
        state.tx_estimate = associate_tx(state.gamma_hat, world)
        trace.rows.append(TraceRow(
            k * timing.t_rf, obs.pan, obs.z_iso, obs.z_dir, obs.p_tilde,
            obs.y_d, obs.y_rf, obs.y, state.gamma_hat, state.tx_estimate,
            state.tx_estimate == world.tx_index,
        ))
        state.control = select_control(state, cfg, k, rng)
        platform = step_platform(platform, state.control)
        state.pan = platform.pan
    return trace
