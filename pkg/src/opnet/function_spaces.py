"""Random input functions, sensor grids, and interpolation error statistics.

Two function spaces are provided: mean-zero Gaussian random fields with an
RBF covariance kernel, and random Chebyshev-series polynomials with uniform
coefficients. A sampled function is realized on a fine uniform grid (1001
points by default) and treated as piecewise linear between nodes; everything
downstream (solvers, sensor restriction) works off that representation.

Also here: the piecewise-linear reconstruction u_m from m+1 sensor readings
and an empirical estimator of its sup-norm error, which decays like
1/(m l)^2 for the random field with length scale l.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass

import numpy as np

FINE_GRID_POINTS = 1001

JITTER_START = 1e-12
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class SensorGrid:
    """Strictly increasing sensor locations inside a closed interval."""

    domain: tuple[float, float]
    points: np.ndarray

    def __post_init__(self):
        a, b = float(self.domain[0]), float(self.domain[1])
        if not a < b:
            raise ValueError(f"empty domain [{a}, {b}]")
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("need at least 2 sensor points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("sensor points must be strictly increasing")
        if pts[0] < a - 1e-12 or pts[-1] > b + 1e-12:
            raise ValueError(f"sensors [{pts[0]}, {pts[-1]}] outside domain [{a}, {b}]")
        object.__setattr__(self, "domain", (a, b))
        object.__setattr__(self, "points", pts)

    @staticmethod
    def uniform(a: float, b: float, count: int) -> "SensorGrid":
        """count equally spaced points including both endpoints."""
        if count < 2:
            raise ValueError("uniform grid needs at least 2 points")
        return SensorGrid((a, b), np.linspace(a, b, count))

    @property
    def count(self) -> int:
        return int(self.points.size)


@dataclass
class InputFunction:
    """One sampled input function, stored as values on a fine grid.

    Evaluation between nodes is linear interpolation (eval_at). space is a
    human-readable tag of the originating sampler; seed records the stream
    that produced the sample.
    """

    x: np.ndarray
    values: np.ndarray
    space: str = ""
    seed: object = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.x.ndim != 1 or self.x.size < 2 or self.values.shape != self.x.shape:
            raise ValueError("grid and values must be 1-d arrays of equal size >= 2")
        if not np.all(np.diff(self.x) > 0):
            raise ValueError("fine grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite function values")

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])


def rbf_kernel(x1, x2, l: float):
    """exp(-|x1 - x2|^2 / (2 l^2)); accepts scalars or arrays."""
    if l <= 0:
        raise ValueError(f"length scale must be positive, got {l}")
    d = np.subtract(x1, x2, dtype=np.float64)
    out = np.exp(-(d * d) / (2.0 * l * l))
    return float(out) if np.isscalar(x1) and np.isscalar(x2) else out


def rbf_gram(points: np.ndarray, l: float) -> np.ndarray:
    """Gram matrix K_ij = rbf_kernel(x_i, x_j, l), without jitter."""
    pts = np.asarray(points, dtype=np.float64)
    return rbf_kernel(pts[:, None], pts[None, :], l)


@functools.lru_cache(maxsize=8)
def _cholesky_cached(l: float, grid_bytes: bytes, n: int):
    points = np.frombuffer(grid_bytes, dtype=np.float64, count=n)
    gram = rbf_gram(points, l)
    jitter = JITTER_START
    eye = np.eye(n)
    while True:
        try:
            factor = np.linalg.cholesky(gram + jitter * eye)
            return factor, jitter
        except np.linalg.LinAlgError:
            if jitter >= JITTER_MAX:
                raise np.linalg.LinAlgError(
                    f"RBF Gram factorization failed for l={l}, {n} points even "
                    f"with diagonal jitter {jitter:g}"
                ) from None
            jitter *= 10.0


def grf_cholesky(l: float, fine_grid: SensorGrid) -> tuple[np.ndarray, float]:
    """Lower-triangular factor of the jittered Gram matrix on fine_grid.

    Jitter starts at 1e-12 and escalates tenfold on failure, capped at 1e-4.
    Returns (factor, jitter actually used). Cached per (l, grid).
    """
    if l <= 0:
        raise ValueError(f"length scale must be positive, got {l}")
    pts = fine_grid.points
    return _cholesky_cached(float(l), pts.tobytes(), pts.size)


def _stream(seed, *key) -> np.random.Generator:
    # child stream (seed, key...) so batched sampling is order-independent
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def grf_sample(l: float, fine_grid: SensorGrid, seed) -> InputFunction:
    """One mean-zero Gaussian random field path with RBF covariance.

    Realized as factor @ z with z standard normal; deterministic per seed.
    """
    factor, _ = grf_cholesky(l, fine_grid)
    z = _stream(seed).standard_normal(fine_grid.count)
    return InputFunction(fine_grid.points, factor @ z, space=f"grf(l={l:g})", seed=seed)


_BATCH_CHUNK = 128


def _grf_sample_matrix(l: float, fine_grid: SensorGrid, n_samples: int, seed) -> np.ndarray:
    """n_samples GRF paths as rows; row i depends only on (seed, i).

    The multiply runs in fixed-width chunks (last chunk zero-padded) so the
    BLAS kernel always sees the same shapes and sample i is bit-identical
    regardless of batch size.
    """
    factor, _ = grf_cholesky(l, fine_grid)
    n = fine_grid.count
    out = np.empty((n_samples, n))
    for start in range(0, n_samples, _BATCH_CHUNK):
        stop = min(start + _BATCH_CHUNK, n_samples)
        z = np.zeros((n, _BATCH_CHUNK))
        for i in range(start, stop):
            z[:, i - start] = _stream(seed, i).standard_normal(n)
        out[start:stop] = (factor @ z).T[: stop - start]
    return out


def grf_sample_many(l: float, fine_grid: SensorGrid, n_samples: int, seed) -> list[InputFunction]:
    """Batch of independent GRF paths; sample i uses child stream (seed, i)."""
    paths = _grf_sample_matrix(l, fine_grid, n_samples, seed)
    tag = f"grf(l={l:g})"
    return [
        InputFunction(fine_grid.points, paths[i], space=tag, seed=(seed, i))
        for i in range(n_samples)
    ]


def chebyshev_function(coeffs, domain: tuple[float, float] = (0.0, 1.0),
                       fine_n: int = FINE_GRID_POINTS) -> InputFunction:
    """Chebyshev series with given coefficients on an affinely mapped domain.

    u(x) = sum_i coeffs[i] T_i(x~) where x~ maps domain onto [-1, 1].
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.size < 1:
        raise ValueError("need a 1-d coefficient vector")
    a, b = domain
    x = np.linspace(a, b, fine_n)
    x_mapped = 2.0 * (x - a) / (b - a) - 1.0
    values = np.polynomial.chebyshev.chebval(x_mapped, coeffs)
    return InputFunction(x, values, space=f"chebyshev(N={coeffs.size})")


def chebyshev_sample(N: int, M: float, seed, domain: tuple[float, float] = (0.0, 1.0),
                     fine_n: int = FINE_GRID_POINTS) -> InputFunction:
    """Random polynomial sum_{i<N} a_i T_i(x~) with a_i ~ Uniform[-M, M]."""
    if N < 1:
        raise ValueError(f"need at least one Chebyshev term, got N={N}")
    if M <= 0:
        raise ValueError(f"coefficient bound must be positive, got M={M}")
    coeffs = _stream(seed).uniform(-M, M, size=N)
    u = chebyshev_function(coeffs, domain, fine_n)
    u.space = f"chebyshev(N={N},M={M:g})"
    u.seed = seed
    return u


def chebyshev_sample_many(N: int, M: float, n_samples: int, seed,
                          domain: tuple[float, float] = (0.0, 1.0),
                          fine_n: int = FINE_GRID_POINTS) -> list[InputFunction]:
    """Batch of random Chebyshev series; sample i uses child stream (seed, i)."""
    out = []
    for i in range(n_samples):
        coeffs = _stream(seed, i).uniform(-M, M, size=N)
        u = chebyshev_function(coeffs, domain, fine_n)
        u.space = f"chebyshev(N={N},M={M:g})"
        u.seed = (seed, i)
        out.append(u)
    return out


@dataclass(frozen=True)
class GrfSpace:
    """Mean-zero Gaussian random field with RBF covariance, length scale l."""

    l: float = 0.2

    def __post_init__(self):
        if self.l <= 0:
            raise ValueError(f"length scale must be positive, got {self.l}")

    @property
    def tag(self) -> str:
        return f"grf(l={self.l:g})"

    def sample_many(self, fine_grid: SensorGrid, n_samples: int, seed) -> list[InputFunction]:
        return grf_sample_many(self.l, fine_grid, n_samples, seed)

    def config(self) -> dict:
        return {"space": "grf", "l": self.l}


@dataclass(frozen=True)
class ChebyshevSpace:
    """Random polynomials sum a_i T_i with n_terms coefficients in [-bound, bound]."""

    n_terms: int
    bound: float = 1.0

    def __post_init__(self):
        if self.n_terms < 1 or self.bound <= 0:
            raise ValueError(f"bad Chebyshev space ({self.n_terms} terms, bound {self.bound})")

    @property
    def tag(self) -> str:
        return f"chebyshev(N={self.n_terms},M={self.bound:g})"

    def sample_many(self, fine_grid: SensorGrid, n_samples: int, seed) -> list[InputFunction]:
        a, b = fine_grid.domain
        return chebyshev_sample_many(
            self.n_terms, self.bound, n_samples, seed, domain=(a, b), fine_n=fine_grid.count
        )

    def config(self) -> dict:
        return {"space": "chebyshev", "n_terms": self.n_terms, "bound": self.bound}


def space_from_config(cfg: dict):
    """Rebuild a sampler space from its config() dict."""
    kind = cfg.get("space")
    if kind == "grf":
        return GrfSpace(cfg["l"])
    if kind == "chebyshev":
        return ChebyshevSpace(cfg["n_terms"], cfg["bound"])
    raise ValueError(f"unknown space config {cfg!r}")


def eval_at(u: InputFunction, x):
    """Linear interpolation of u on its fine grid; x scalar or array, in domain."""
    xs = np.asarray(x, dtype=np.float64)
    a, b = u.domain
    if np.any(xs < a - 1e-12) or np.any(xs > b + 1e-12):
        raise ValueError(f"query outside domain [{a}, {b}]")
    out = np.interp(np.clip(xs, a, b), u.x, u.values)
    return float(out) if xs.ndim == 0 else out


def restrict_to_sensors(u: InputFunction, sensors: SensorGrid) -> np.ndarray:
    """u evaluated at each sensor location, in grid order."""
    return eval_at(u, sensors.points)


def interpolate_lm(sensor_values, sensors: SensorGrid, x):
    """Piecewise-linear reconstruction through (sensor, value) pairs at x.

    x must lie within the sensor span; scalar or array.
    """
    vals = np.asarray(sensor_values, dtype=np.float64)
    if vals.shape != sensors.points.shape:
        raise ValueError(f"{vals.size} values for {sensors.count} sensors")
    xs = np.asarray(x, dtype=np.float64)
    lo, hi = sensors.points[0], sensors.points[-1]
    if np.any(xs < lo - 1e-12) or np.any(xs > hi + 1e-12):
        raise ValueError(f"query outside sensor span [{lo}, {hi}]")
    out = np.interp(np.clip(xs, lo, hi), sensors.points, vals)
    return float(out) if xs.ndim == 0 else out


@dataclass(frozen=True)
class KappaEstimate:
    """Sup-norm error of the m-sensor reconstruction over random field draws."""

    l: float
    m: int
    n_samples: int
    mean_sup_error: float
    max_sup_error: float


def estimate_kappa(l: float, m: int, n_samples: int, seed,
                   domain: tuple[float, float] = (0.0, 1.0)) -> KappaEstimate:
    """Monte-Carlo estimate of the reconstruction error kappa(m, space).

    Draws n_samples GRF paths on the fine grid, rebuilds each from its values
    at m+1 uniform sensors, and reports the mean and max over samples of
    max_x |u - u_m|. The mean statistic scales like 1/(m l)^2.
    """
    if m < 2:
        raise ValueError(f"need m >= 2 sensor intervals, got {m}")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    fine = SensorGrid.uniform(domain[0], domain[1], FINE_GRID_POINTS)
    sensors = SensorGrid.uniform(domain[0], domain[1], m + 1)
    paths = _grf_sample_matrix(l, fine, n_samples, seed)
    sup_errors = np.empty(n_samples)
    for i in range(n_samples):
        at_sensors = np.interp(sensors.points, fine.points, paths[i])
        rebuilt = np.interp(fine.points, sensors.points, at_sensors)
        sup_errors[i] = np.max(np.abs(paths[i] - rebuilt))
    return KappaEstimate(l, m, n_samples, float(sup_errors.mean()), float(sup_errors.max()))


def function_to_csv(u: InputFunction, path) -> None:
    """Write the fine-grid representation as CSV with columns x, u."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "u"])
        for xi, vi in zip(u.x, u.values):
            writer.writerow([repr(float(xi)), repr(float(vi))])
