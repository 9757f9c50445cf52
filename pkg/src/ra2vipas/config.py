"""Flat run configuration: defaults, YAML file loading, overrides and validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .bo import VARIANTS, BoConfig, Variant
from .mc import ExperimentConfig
from .world import DetectionModel, RadioModel, TargetMotionModel, TimingConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _angle(v):
    return 0 < v < 180


# key -> (check, description); keys absent here accept any value of the right type
_CHECKS = {
    "t_rf": (_positive, "must be > 0"),
    "nu": (_positive, "must be a positive integer"),
    "n_train": (lambda v: v >= 2, "must be >= 2"),
    "n_test": (_positive, "must be a positive integer"),
    "n_tests": (_positive, "must be a positive integer"),
    "n_targets": (_positive, "must be a positive integer"),
    "delta": (_positive, "must be > 0"),
    "n_exp": (_positive, "must be > 0"),
    "sigma_rf": (_non_negative, "must be >= 0"),
    "atten_coeff": (_non_negative, "must be >= 0"),
    "motion_var": (_non_negative, "must be >= 0"),
    "motion_d_min": (_positive, "must be > 0"),
    "spawn_d_min": (_positive, "must be > 0"),
    "eps_gamma_deg": (_positive, "must be > 0"),
    "fov_half_width_deg": (_angle, "must lie in (0, 180)"),
    "beta": (_non_negative, "must be >= 0"),
    "zeta": (_positive, "must be > 0"),
    "grid_size": (lambda v: v >= 8, "must be >= 8"),
    "warmup_steps": (_positive, "must be >= 1"),
    "refit_every": (_positive, "must be >= 1"),
    "workers": (_positive, "must be >= 1"),
    "seed": (_non_negative, "must be >= 0"),
}


@dataclass
class RunConfig:
    """Every tunable of the three workflows under one flat key space.

    Defaults reproduce the Monte Carlo setup table; the remaining values
    (field of view, spawn band, controller settings) are this package's
    choices.
    """

    # timing
    t_rf: float = 0.1
    nu: int = 10
    n_train: int = 900
    n_test: int = 120
    # experiment
    n_tests: int = 50
    n_targets: int = 20
    # radio
    kappa: float = -30.0
    n_exp: float = 2.0
    delta: float = 1.0
    sigma_rf: float = 3.0
    atten_coeff: float = 0.5
    # detection
    pod_slope_far: float = 4.0
    pod_center_far: float = 4.5
    pod_slope_near: float = 1.0
    pod_center_near: float = 2.5
    # POD-training target motion
    motion_var: float = 0.04
    motion_d_min: float = 1.0
    motion_d_max: float = 6.0
    # world spawning and camera
    spawn_d_min: float = 1.5
    spawn_d_max: float = 5.5
    eps_gamma_deg: float = 2.0
    fov_half_width_deg: float = 15.0
    # controller
    beta: float = 4.0
    zeta: float = 50.0
    grid_size: int = 721
    warmup_steps: int = 5
    refit_every: int = 10
    variants: str = "ra2vipas,rapas,ravipas"
    # run
    seed: int = 0
    workers: int = 1
    out: str = "runs"
    plots: bool = False

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            expected = _field_type(f)
            if expected is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f.name, f"expected true/false, got {value!r}")
            elif expected is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    if isinstance(value, float) and value.is_integer():
                        value = int(value)
                        setattr(self, f.name, value)
                    else:
                        raise ConfigError(f.name, f"expected an integer, got {value!r}")
            elif expected is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f.name, f"expected a number, got {value!r}")
                value = float(value)
                if not math.isfinite(value):
                    raise ConfigError(f.name, "must be finite")
                setattr(self, f.name, value)
            elif not isinstance(value, str):
                raise ConfigError(f.name, f"expected a string, got {value!r}")
            check = _CHECKS.get(f.name)
            if check and not check[0](value):
                raise ConfigError(f.name, f"{check[1]}, got {value!r}")
        if not self.motion_d_min < self.motion_d_max:
            raise ConfigError("motion_d_max", "must exceed motion_d_min")
        if not self.spawn_d_min <= self.spawn_d_max:
            raise ConfigError("spawn_d_max", "must be >= spawn_d_min")
        if self.n_targets * math.radians(self.eps_gamma_deg) >= 2 * math.pi:
            raise ConfigError("eps_gamma_deg", "too large for the number of targets")
        self.variant_list()

    def variant_list(self) -> tuple[Variant, ...]:
        names = [v.strip().lower() for v in self.variants.split(",") if v.strip()]
        if not names:
            raise ConfigError("variants", "at least one variant is required")
        try:
            chosen = {Variant(n) for n in names}
        except ValueError:
            raise ConfigError(
                "variants", f"unknown variant in {self.variants!r}; choose from {[v.value for v in VARIANTS]}"
            ) from None
        return tuple(v for v in VARIANTS if v in chosen)

    # builders -----------------------------------------------------------------

    def timing(self) -> TimingConfig:
        return TimingConfig(self.t_rf, self.nu, self.n_test, self.n_train)

    def radio(self) -> RadioModel:
        return RadioModel(self.kappa, self.n_exp, self.delta, self.sigma_rf, self.atten_coeff)

    def detection(self) -> DetectionModel:
        return DetectionModel(self.pod_slope_far, self.pod_center_far, self.pod_slope_near, self.pod_center_near)

    def motion(self) -> TargetMotionModel:
        return TargetMotionModel(self.motion_var, self.motion_d_min, self.motion_d_max)

    def bo(self) -> BoConfig:
        return BoConfig(self.beta, self.zeta, self.grid_size, self.warmup_steps, self.refit_every)

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            n_tests=self.n_tests,
            n_targets=self.n_targets,
            timing=self.timing(),
            radio=self.radio(),
            det=self.detection(),
            d_range=(self.spawn_d_min, self.spawn_d_max),
            eps_gamma=math.radians(self.eps_gamma_deg),
            fov_half_width=math.radians(self.fov_half_width_deg),
            bo=self.bo(),
            variants=self.variant_list(),
            master_seed=self.seed,
            workers=self.workers,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def _field_type(f):
    return {"float": float, "int": int, "bool": bool, "str": str}[f.type if isinstance(f.type, str) else f.type.__name__]


KEYS = tuple(f.name for f in fields(RunConfig))


def load_file(path) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"malformed config file: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "config file must be a flat key: value mapping")
    return data


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults < file values < explicit overrides into a validated config."""
    values: dict = {}
    if path is not None:
        values.update(load_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    return RunConfig(**values)
