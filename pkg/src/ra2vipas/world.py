"""Synthetic environment: targets, pan platform, radio channel and camera.

Every function takes explicit state plus a ``numpy.random.Generator`` and
returns new values; nothing here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap an angle (or array of angles) into ``[-pi, pi)``.

    Raises
    ------
    ValueError
        If any input is not finite.
    """
    arr = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"cannot wrap non-finite angle {theta!r}")
    out = np.mod(arr + math.pi, TWO_PI) - math.pi
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    out = np.where(out >= math.pi, out - TWO_PI, out)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TimingConfig:
    """RF sampling interval and camera/RF rate relation.

    The camera period is ``t_rf / nu`` and is never stored separately.
    """

    t_rf: float = 0.1
    nu: int = 10
    n_test: int = 120
    n_train: int = 900

    def __post_init__(self):
        if not self.t_rf > 0:
            raise ValueError(f"t_rf must be > 0, got {self.t_rf}")
        for name in ("nu", "n_test", "n_train"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")

    @property
    def camera_period(self) -> float:
        return self.t_rf / self.nu

    def times(self) -> np.ndarray:
        """Timestamps of the ``n_test`` RSSI samples of an episode."""
        return self.t_rf * np.arange(1, self.n_test + 1)


@dataclass(frozen=True)
class PlatformState:
    pan: float = 0.0
    fov_half_width: float = math.radians(15.0)

    def __post_init__(self):
        if not 0.0 < self.fov_half_width < math.pi:
            raise ValueError(
                f"fov_half_width must lie in (0, pi), got {self.fov_half_width}"
            )
        object.__setattr__(self, "pan", wrap_angle(self.pan))


@dataclass(frozen=True)
class Target:
    """A target on the ground plane, position in metres relative to the platform."""

    position: tuple[float, float]

    def __post_init__(self):
        x, y = (float(v) for v in self.position)
        if math.hypot(x, y) <= 0.0:
            raise ValueError("target cannot sit on the platform (distance 0)")
        object.__setattr__(self, "position", (x, y))

    @classmethod
    def from_polar(cls, distance: float, bearing: float) -> "Target":
        return cls((distance * math.cos(bearing), distance * math.sin(bearing)))

    @property
    def distance(self) -> float:
        return math.hypot(*self.position)

    @property
    def bearing(self) -> float:
        x, y = self.position
        return wrap_angle(math.atan2(y, x))


@dataclass(frozen=True)
class World:
    """Ground truth of one episode: the targets and which one transmits."""

    targets: tuple[Target, ...]
    tx_index: int
    min_separation: float = 0.0
    distances: np.ndarray = field(init=False, repr=False, compare=False)
    bearings: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        targets = tuple(self.targets)
        if not targets:
            raise ValueError("a world needs at least one target")
        if not 0 <= self.tx_index < len(targets):
            raise ValueError(f"tx_index {self.tx_index} out of range for {len(targets)} targets")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "distances", np.array([t.distance for t in targets]))
        object.__setattr__(self, "bearings", np.array([t.bearing for t in targets]))
        if len(targets) > 1 and min_pairwise_separation(self.bearings) < self.min_separation:
            raise ValueError("targets violate the minimum bearing separation")

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def tx(self) -> Target:
        return self.targets[self.tx_index]


@dataclass(frozen=True)
class RadioModel:
    """Log-distance path loss with a quadratic directional attenuation."""

    kappa: float = -30.0
    n_exp: float = 2.0
    delta: float = 1.0
    sigma_rf: float = 3.0
    atten_coeff: float = 0.5

    def __post_init__(self):
        if self.sigma_rf < 0:
            raise ValueError(f"sigma_rf must be >= 0, got {self.sigma_rf}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")


@dataclass(frozen=True)
class DetectionModel:
    """Double-sigmoid probability of detection versus distance.

    ``pod(d) = 1 / ((1 + exp(slope_far (d - center_far))) (1 + exp(-slope_near (d - center_near))))``
    """

    slope_far: float = 4.0
    center_far: float = 4.5
    slope_near: float = 1.0
    center_near: float = 2.5


@dataclass(frozen=True)
class TargetMotionModel:
    """Gaussian random walk on distance, reflected at ``[d_min, d_max]``."""

    noise_var: float = 0.04
    d_min: float = 1.0
    d_max: float = 6.0

    def __post_init__(self):
        if self.noise_var < 0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")


def min_pairwise_separation(bearings) -> float:
    b = np.sort(np.asarray(bearings, dtype=float))
    if b.size < 2:
        return math.inf
    gaps = np.diff(b)
    return float(min(gaps.min(), TWO_PI - (b[-1] - b[0])))


def step_platform(state: PlatformState, u: float) -> PlatformState:
    if not -math.pi <= u <= math.pi:
        raise ValueError(f"control input {u} outside [-pi, pi]")
    return replace(state, pan=wrap_angle(state.pan + u))


def angular_offset(state: PlatformState, bearing):
    return wrap_angle(np.asarray(bearing) - state.pan)


def in_fov(state: PlatformState, target: Target) -> bool:
    return abs(angular_offset(state, target.bearing)) <= state.fov_half_width


def in_fov_mask(state: PlatformState, world: World) -> np.ndarray:
    return np.abs(angular_offset(state, world.bearings)) <= state.fov_half_width


def _check_distance(d):
    arr = np.asarray(d, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"distance must be > 0, got {d!r}")
    return arr


def path_loss(radio: RadioModel, d):
    """Mean RSSI in dBm at distance ``d`` (scalar or array)."""
    arr = _check_distance(d)
    out = radio.kappa - 10.0 * radio.n_exp * np.log10(arr / radio.delta)
    return float(out) if out.ndim == 0 else out


def inverse_path_loss(radio: RadioModel, rssi):
    """Distance at which the noise-free path loss equals ``rssi``."""
    arr = np.asarray(rssi, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("RSSI values must be finite")
    if radio.n_exp <= 0:
        raise ValueError("path-loss exponent must be positive to invert the model")
    out = radio.delta * 10.0 ** ((radio.kappa - arr) / (10.0 * radio.n_exp))
    return float(out) if out.ndim == 0 else out


def radiation_attenuation(radio: RadioModel, s, gamma):
    """Directional gain in ``[0, 1]``; 1 only when the pan points at ``gamma``.

    The quadratic pattern goes negative past ``sqrt(1 / atten_coeff)`` rad of
    misalignment, so it is clamped at zero.
    """
    mis = wrap_angle(np.asarray(s, dtype=float) - gamma)
    out = np.clip(1.0 - radio.atten_coeff * np.square(mis), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def sample_rssi_iso(radio: RadioModel, d: float, rng: np.random.Generator) -> float:
    mean = path_loss(radio, d)
    return mean + radio.sigma_rf * rng.standard_normal()


def sample_rssi_dir(
    radio: RadioModel, d: float, s: float, gamma: float, rng: np.random.Generator
) -> float:
    mean = path_loss(radio, d) * radiation_attenuation(radio, s, gamma)
    return mean + radio.sigma_rf * rng.standard_normal()


def pod_true(det: DetectionModel, d):
    """Probability that an in-view target at distance ``d`` is detected."""
    arr = np.asarray(d, dtype=float)
    if np.any(arr < 0):
        raise ValueError(f"distance must be >= 0, got {d!r}")
    far = expit(-det.slope_far * (arr - det.center_far))
    near = expit(det.slope_near * (arr - det.center_near))
    out = far * near
    return float(out) if out.ndim == 0 else out


def detect_frame(
    world: World, state: PlatformState, det: DetectionModel, rng: np.random.Generator
) -> np.ndarray:
    """One camera frame: a boolean detection flag per target.

    Targets outside the field of view are never detected. One uniform draw is
    consumed per target regardless of visibility so the random stream does not
    depend on where the camera points.
    """
    u = rng.random(world.n_targets)
    p = np.where(in_fov_mask(state, world), pod_true(det, world.distances), 0.0)
    return u < p


def step_target_motion(
    motion: TargetMotionModel, d: float, rng: np.random.Generator
) -> float:
    d_new = d + math.sqrt(motion.noise_var) * rng.standard_normal()
    lo, hi = motion.d_min, motion.d_max
    # fold until inside; more than one fold only for steps wider than the band
    while not lo <= d_new <= hi:
        d_new = 2 * hi - d_new if d_new > hi else 2 * lo - d_new
    return d_new


def spawn_world(
    n_targets: int,
    d_range: tuple[float, float],
    eps_gamma: float,
    rng: np.random.Generator,
    max_restarts: int = 1000,
) -> World:
    """Random targets with pairwise bearing separation of at least ``eps_gamma``.

    Bearings are drawn by sequential rejection sampling; the whole draw
    restarts if one bearing cannot be placed after a bounded number of tries.
    """
    if n_targets < 1:
        raise ValueError(f"n_targets must be >= 1, got {n_targets}")
    if n_targets * eps_gamma >= TWO_PI:
        raise ValueError(
            f"{n_targets} targets cannot be separated by {eps_gamma} rad on a circle"
        )
    d_lo, d_hi = d_range
    if not 0 < d_lo <= d_hi:
        raise ValueError(f"invalid distance range {d_range}")

    for _ in range(max_restarts):
        bearings: list[float] = []
        for _ in range(n_targets):
            for _ in range(1000):
                b = rng.uniform(-math.pi, math.pi)
                if all(abs(wrap_angle(b - o)) >= eps_gamma for o in bearings):
                    bearings.append(wrap_angle(b))
                    break
            else:
                break
        if len(bearings) == n_targets:
            break
    else:
        raise RuntimeError("could not place targets with the requested separation")

    distances = rng.uniform(d_lo, d_hi, size=n_targets)
    targets = tuple(Target.from_polar(d, b) for d, b in zip(distances, bearings))
    tx_index = int(rng.integers(n_targets))
    # from_polar/atan2 round-trips can shave ulps off the separation
    return World(targets, tx_index, min_separation=eps_gamma * (1 - 1e-9))
