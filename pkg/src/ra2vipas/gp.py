"""Exact Gaussian-process regression.

Kernels, Cholesky-based posterior conditioning with per-point noise,
log marginal likelihood, multi-start hyperparameter search and the R^2 score.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack

from ._statespace import matern52_lml_1d

MATERN52 = "matern52"
SQEXP = "sqexp"
CONSTANT = "constant"
LINEAR = "linear"
FAMILIES = (MATERN52, SQEXP, CONSTANT, LINEAR)
STATIONARY = (MATERN52, SQEXP)

NOISE_FLOOR = 1e-6
MAX_JITTER = 1e-2

LOG_SIGNAL_VAR_BOUNDS = (-6.0, 4.0)
LOG_LENGTHSCALE_BOUNDS = (-4.0, 4.0)
LOG_NOISE_BOUNDS = (-10.0, 0.0)

# below this size the dense evidence is as fast as the Kalman recursion
STATESPACE_MIN_N = 200


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[:, None]
    return x


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] == 1:
        return np.abs(a - b.T)
    sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return np.sqrt(sq)


# exp(-x) for x past ~708 is subnormal and very slow to multiply; entries that
# small are zero at double precision anyway
_MAX_EXPONENT = 700.0


def _matern52(r, signal_var, lengthscale):
    s = np.minimum(math.sqrt(5.0) * r / lengthscale, _MAX_EXPONENT)
    return signal_var * (1.0 + s + s * s / 3.0) * np.exp(-s)


def _sqexp(r, signal_var, lengthscale):
    return signal_var * np.exp(-np.minimum(0.5 * (r / lengthscale) ** 2, _MAX_EXPONENT))


_PROFILES = {MATERN52: _matern52, SQEXP: _sqexp}


@dataclass(frozen=True)
class KernelSpec:
    """A covariance function.

    ``family`` is one of ``matern52``, ``sqexp``, ``constant`` or ``linear``.
    Kernels compose with ``+`` and ``*``.
    """

    family: str = MATERN52
    signal_var: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.signal_var > 0:
            raise ValueError(f"signal_var must be > 0, got {self.signal_var}")
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be > 0, got {self.lengthscale}")

    @property
    def stationary(self) -> bool:
        return self.family in STATIONARY

    def with_params(self, signal_var: float, lengthscale: float) -> "KernelSpec":
        return replace(self, signal_var=signal_var, lengthscale=lengthscale)

    def from_distances(self, r: np.ndarray) -> np.ndarray:
        return _PROFILES[self.family](r, self.signal_var, self.lengthscale)

    def gram(self, x1, x2) -> np.ndarray:
        a, b = _as_2d(x1), _as_2d(x2)
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"input dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
        if self.family == CONSTANT:
            return np.full((a.shape[0], b.shape[0]), self.signal_var)
        if self.family == LINEAR:
            return self.signal_var * (a @ b.T)
        return self.from_distances(pairwise_distances(a, b))

    def diag(self, x) -> np.ndarray:
        a = _as_2d(x)
        if self.family == LINEAR:
            return self.signal_var * np.sum(a * a, axis=1)
        return np.full(a.shape[0], self.signal_var)

    def __add__(self, other):
        return CompositeKernel("+", self, other)

    def __mul__(self, other):
        return CompositeKernel("*", self, other)


@dataclass(frozen=True)
class CompositeKernel:
    op: str
    left: object
    right: object

    stationary = False

    def gram(self, x1, x2):
        g1, g2 = self.left.gram(x1, x2), self.right.gram(x1, x2)
        return g1 + g2 if self.op == "+" else g1 * g2

    def diag(self, x):
        d1, d2 = self.left.diag(x), self.right.diag(x)
        return d1 + d2 if self.op == "+" else d1 * d2

    def __add__(self, other):
        return CompositeKernel("+", self, other)

    def __mul__(self, other):
        return CompositeKernel("*", self, other)


def kernel_eval(spec, x, x_prime) -> float:
    """Covariance between two single inputs."""
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"input dimension mismatch: {a.shape} vs {b.shape}")
    return float(spec.gram(a[None, :], b[None, :])[0, 0])


@dataclass(frozen=True)
class GpDataset:
    inputs: np.ndarray
    labels: np.ndarray
    noise: float | np.ndarray = 0.0

    def __post_init__(self):
        x = _as_2d(self.inputs) if np.size(self.inputs) else np.zeros((0, 1))
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        noise = np.asarray(self.noise, dtype=float)
        if noise.ndim == 1 and noise.shape[0] != y.shape[0]:
            raise ValueError("per-point noise must have one entry per label")
        if noise.ndim > 1:
            raise ValueError("noise must be a scalar or a vector")
        if np.any(noise < 0):
            raise ValueError("noise variances must be >= 0")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "noise", float(noise) if noise.ndim == 0 else noise)

    def __len__(self):
        return self.labels.shape[0]

    def noise_diag(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.noise, dtype=float), (len(self),)).copy()

    def with_noise(self, noise) -> "GpDataset":
        return GpDataset(self.inputs, self.labels, noise)


def jittered_cholesky(k: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``k + (NOISE_FLOOR + jitter) I``.

    Jitter starts at zero and escalates tenfold from ``NOISE_FLOOR`` up to
    ``MAX_JITTER``. Returns the factor and the jitter that was needed.
    """
    n = k.shape[0]
    eye = np.eye(n)
    jitter = 0.0
    while True:
        try:
            factor = linalg.cholesky(k + (NOISE_FLOOR + jitter) * eye, lower=True)
            return factor, jitter
        except linalg.LinAlgError:
            jitter = NOISE_FLOOR * 10 if jitter == 0.0 else jitter * 10
            if jitter > MAX_JITTER * (1 + 1e-12):
                raise linalg.LinAlgError(
                    "covariance not positive definite even with maximum jitter"
                ) from None


@dataclass(frozen=True)
class GpPrediction:
    mean: np.ndarray
    std: np.ndarray
    cov: np.ndarray | None = None

    @property
    def var(self) -> np.ndarray:
        return self.std**2


@dataclass(frozen=True)
class GpModel:
    """A GP conditioned on a dataset. Immutable; the factorization is cached."""

    kernel: object
    dataset: GpDataset
    mean_const: float = 0.0
    chol: np.ndarray | None = field(default=None, repr=False, compare=False)
    alpha: np.ndarray | None = field(default=None, repr=False, compare=False)
    jitter: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if len(self.dataset) == 0 or self.chol is not None:
            return
        x = self.dataset.inputs
        k = self.kernel.gram(x, x)
        k[np.diag_indices_from(k)] += self.dataset.noise_diag()
        chol, jitter = jittered_cholesky(k)
        resid = self.dataset.labels - self.mean_const
        alpha = linalg.cho_solve((chol, True), resid)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "jitter", jitter)

    @property
    def n(self) -> int:
        return len(self.dataset)

    def covariance_matrix(self) -> np.ndarray:
        """``K(X, X) + diag(noise)`` plus the floor and jitter actually used."""
        x = self.dataset.inputs
        k = self.kernel.gram(x, x)
        k[np.diag_indices_from(k)] += self.dataset.noise_diag() + NOISE_FLOOR + self.jitter
        return k

    def predict(self, test_inputs, full_cov: bool = True) -> GpPrediction:
        return posterior_predict(self, test_inputs, full_cov=full_cov)


def condition(kernel, dataset: GpDataset, mean_const: float = 0.0) -> GpModel:
    return GpModel(kernel=kernel, dataset=dataset, mean_const=mean_const)


def posterior_predict(model: GpModel, test_inputs, full_cov: bool = True) -> GpPrediction:
    """Posterior mean and covariance of the latent function at ``test_inputs``.

    With an empty dataset the prior is returned. With ``full_cov=False`` only
    the marginal variances are computed and ``cov`` is ``None``.
    """
    xs = _as_2d(test_inputs)
    if model.n == 0:
        mean = np.full(xs.shape[0], float(model.mean_const))
        if full_cov:
            cov = model.kernel.gram(xs, xs)
            var = np.diag(cov).copy()
        else:
            cov = None
            var = model.kernel.diag(xs)
        return GpPrediction(mean, np.sqrt(np.maximum(var, 0.0)), cov)

    k_star = model.kernel.gram(xs, model.dataset.inputs)
    mean = model.mean_const + k_star @ model.alpha
    v = linalg.solve_triangular(model.chol, k_star.T, lower=True)
    if full_cov:
        cov = model.kernel.gram(xs, xs) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        var = np.diag(cov).copy()
    else:
        cov = None
        var = model.kernel.diag(xs) - np.sum(v * v, axis=0)
    return GpPrediction(mean, np.sqrt(np.maximum(var, 0.0)), cov)


def log_marginal_likelihood(model: GpModel) -> float:
    if model.n < 1:
        raise ValueError("log marginal likelihood needs at least one observation")
    resid = model.dataset.labels - model.mean_const
    return float(
        -0.5 * resid @ model.alpha
        - np.sum(np.log(np.diag(model.chol)))
        - 0.5 * model.n * math.log(2 * math.pi)
    )


class _StationaryEvidence:
    """Log marginal likelihood of a stationary kernel with cached distances.

    Kernel matrices are built into preallocated buffers and factorized in
    place, which dominates the cost of hyperparameter search for large n.
    """

    def __init__(self, family, inputs, labels, mean_const):
        self.family = family
        self.r = pairwise_distances(inputs, inputs)
        if family == MATERN52:
            self.r = math.sqrt(5.0) * self.r
        else:
            self.r = 0.5 * self.r**2
        self.resid = labels - mean_const
        self.n = labels.shape[0]
        self._s = np.empty_like(self.r)
        self._k = np.empty_like(self.r)
        self._diag = np.diag_indices(self.n)

    def __call__(self, signal_var, lengthscale, noise_diag) -> float:
        s, k = self._s, self._k
        if self.family == MATERN52:
            np.multiply(self.r, 1.0 / lengthscale, out=s)
            np.minimum(s, _MAX_EXPONENT, out=s)
            np.exp(-s, out=k)
            # (1 + s + s^2/3) computed in s
            np.multiply(s, s * (1.0 / 3.0) + 1.0, out=s)
            s += 1.0
            np.multiply(k, s, out=k)
        else:
            np.multiply(self.r, -1.0 / lengthscale**2, out=s)
            np.maximum(s, -_MAX_EXPONENT, out=s)
            np.exp(s, out=k)
        k *= signal_var
        base = k[self._diag] + noise_diag
        jitter = 0.0
        while True:
            np.copyto(s, k)
            s[self._diag] = base + NOISE_FLOOR + jitter
            chol, info = lapack.dpotrf(s, lower=1, clean=0, overwrite_a=1)
            if info == 0:
                break
            jitter = NOISE_FLOOR * 10 if jitter == 0.0 else jitter * 10
            if jitter > MAX_JITTER * (1 + 1e-12):
                return -np.inf
        alpha, _ = lapack.dpotrs(chol, self.resid, lower=1)
        return float(
            -0.5 * self.resid @ alpha
            - np.sum(np.log(np.diag(chol)))
            - 0.5 * self.n * math.log(2 * math.pi)
        )


class _KalmanEvidence:
    """Same quantity as `_StationaryEvidence` for 1-D Matern-5/2, in O(n)."""

    def __init__(self, inputs, labels, mean_const):
        self.x = inputs[:, 0]
        self.resid = labels - mean_const

    def __call__(self, signal_var, lengthscale, noise_diag) -> float:
        noise = np.broadcast_to(noise_diag, self.x.shape) + NOISE_FLOOR
        return matern52_lml_1d(self.x, self.resid, noise, signal_var, lengthscale)


@dataclass(frozen=True)
class FitResult:
    model: GpModel
    lml: float
    grid_best_lml: float
    noise: float | None = None


def fit_hyperparams(dataset: GpDataset, spec: KernelSpec, mean_const: float = 0.0, **options) -> GpModel:
    """Maximise the log marginal likelihood over signal variance and lengthscale.

    The search runs in natural-log space inside ``LOG_SIGNAL_VAR_BOUNDS`` x
    ``LOG_LENGTHSCALE_BOUNDS``. A ``grid_size`` x ``grid_size`` grid is scored
    first and its ``n_starts`` best cells seed bounded Nelder-Mead runs; a
    start lying within one grid cell of an optimum already found is skipped
    because it would converge to the same point. The returned model is never
    worse than the best grid cell.

    With ``fit_noise=True`` an extra homoscedastic noise variance is fitted as
    a third coordinate inside ``LOG_NOISE_BOUNDS`` and added on top of the
    dataset's own noise (scalar or per-point); otherwise that noise is used
    as given.
    See `fit_hyperparams_full` for the remaining options.
    """
    return fit_hyperparams_full(dataset, spec, mean_const, **options).model


def fit_hyperparams_full(
    dataset: GpDataset,
    spec: KernelSpec,
    mean_const: float = 0.0,
    fit_noise: bool = False,
    grid_size: int = 8,
    n_starts: int = 8,
    noise_grid: int = 4,
    xatol: float = 2e-2,
    fatol: float = 1e-3,
    maxfev: int = 200,
    extra_starts=(),
) -> FitResult:
    if len(dataset) < 2:
        raise ValueError(f"need at least 2 observations to fit, got {len(dataset)}")
    if not isinstance(spec, KernelSpec) or not spec.stationary:
        raise TypeError("hyperparameter fitting supports the stationary kernel families only")

    if spec.family == MATERN52 and dataset.inputs.shape[1] == 1 and len(dataset) >= STATESPACE_MIN_N:
        evidence = _KalmanEvidence(dataset.inputs, dataset.labels, mean_const)
    else:
        evidence = _StationaryEvidence(spec.family, dataset.inputs, dataset.labels, mean_const)
    fixed_noise = dataset.noise_diag()

    bounds = [LOG_SIGNAL_VAR_BOUNDS, LOG_LENGTHSCALE_BOUNDS]
    axes = [np.linspace(lo, hi, grid_size) for lo, hi in bounds]
    if fit_noise:
        bounds.append(LOG_NOISE_BOUNDS)
        axes.append(np.linspace(*LOG_NOISE_BOUNDS, noise_grid))
    lo, hi = np.array(bounds).T
    cell = (hi - lo) / np.array([len(ax) - 1 for ax in axes])

    def objective(theta):
        theta = np.clip(theta, lo, hi)
        noise = fixed_noise + math.exp(theta[2]) if fit_noise else fixed_noise
        return -evidence(math.exp(theta[0]), math.exp(theta[1]), noise)

    grid = np.array(list(itertools.product(*axes)))
    grid_vals = np.array([objective(theta) for theta in grid])
    order = np.argsort(grid_vals, kind="stable")
    best_theta, best_val = grid[order[0]], grid_vals[order[0]]
    grid_best = best_val

    optima: list[np.ndarray] = []
    starts = [np.asarray(x, float) for x in extra_starts] + [grid[i] for i in order[:n_starts]]
    for x0 in starts:
        if any(np.all(np.abs(x0 - opt) <= cell) for opt in optima):
            continue
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead", bounds=bounds,
            options={"xatol": xatol, "fatol": fatol, "maxfev": maxfev},
        )
        theta = np.clip(res.x, lo, hi)
        optima.append(theta)
        if res.fun < best_val:
            best_theta, best_val = theta, res.fun

    kernel = spec.with_params(math.exp(best_theta[0]), math.exp(best_theta[1]))
    noise = math.exp(best_theta[2]) if fit_noise else None
    data = dataset.with_noise(dataset.noise + noise) if fit_noise else dataset
    model = GpModel(kernel=kernel, dataset=data, mean_const=mean_const)
    return FitResult(model, -float(best_val), -float(grid_best), noise)


def r2_score(truth, predictions) -> float:
    t = np.asarray(truth, dtype=float).reshape(-1)
    p = np.asarray(predictions, dtype=float).reshape(-1)
    if t.shape != p.shape:
        raise ValueError("truth and predictions must have equal length")
    if t.size < 2:
        raise ValueError("R^2 needs at least two points")
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 undefined for constant truth")
    return float(1.0 - np.sum((t - p) ** 2) / ss_tot)
