"""Training loop, error metrics, and convergence-rate fitting.

train() runs full-batch Adam on the MSE over a triplet dataset, evaluating
the held-out set at a fixed cadence, and returns the trained model plus an
ExperimentReport holding the error history and provenance (a config hash
that reproduces the run). Distinct sensor vectors and query points are each
evaluated once per iteration, which is what makes the 100-inputs x 100-
queries datasets cheap to train on.

Rate fitting covers the two families the convergence studies use: power
laws (straight line in log-log) and exponentials (straight line in
semi-log), plus a prefix-window rule that picks the fitting range by
maximizing R-squared, so saturated tails do not need hand trimming.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import deeponet as dn
from . import nn
from .data import Dataset


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss or gradient.

    Carries the last model checkpoint that evaluated finite (`model`) and
    the partial report (`report`).
    """

    def __init__(self, message: str, model, report):
        super().__init__(message)
        self.model = model
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    lr: float = 1e-3
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    eval_cadence: int = 1000
    # stop at the first cadence point where test MSE reaches this; the
    # trajectory up to the stop matches the uncapped run exactly
    target_test_mse: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.eval_cadence < 1:
            raise ValueError("eval cadence must be positive")
        if self.target_test_mse is not None and self.target_test_mse <= 0:
            raise ValueError("target test MSE must be positive")

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "eval_cadence": self.eval_cadence,
            "target_test_mse": self.target_test_mse,
        }


@dataclass
class ExperimentReport:
    history_iterations: list[int]
    history_train_mse: list[float]
    history_test_mse: list[float]
    final_train_mse: float
    final_test_mse: float
    generalization_gap: float
    config: dict
    config_hash: str
    rates: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.history_iterations:
            raise ValueError("empty training history")
        cols = (self.history_train_mse, self.history_test_mse)
        if any(len(c) != len(self.history_iterations) for c in cols):
            raise ValueError("history columns have different lengths")
        if not all(math.isfinite(v) for c in cols for v in c):
            raise ValueError("non-finite history entry")

    def history_rows(self):
        return zip(self.history_iterations, self.history_train_mse, self.history_test_mse)


def config_hash(config: dict) -> str:
    """Stable short hash of a JSON-serializable config dict."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _model_config(model, arrays) -> dict:
    """Structure plus an initial-parameter fingerprint.

    The fingerprint ties the config hash to the exact starting point, so two
    runs share a hash only when they are the same run.
    """
    if isinstance(model, dn.DeepONetModel):
        desc = {
            "kind": "deeponet", "variant": model.variant, "m": model.m,
            "dim_y": model.dim_y, "p": model.p,
            "trunk": list(model.trunk.spec.layer_sizes),
            "trunk_activation": model.trunk.spec.activation,
            "branch": list(model.branches[0].spec.layer_sizes),
            "branch_activation": model.branches[0].spec.activation,
            "bias": model.branch_bias_enabled,
        }
    else:
        desc = {
            "kind": "fnn", "m": model.m, "dim_y": model.dim_y,
            "layers": list(model.net.spec.layer_sizes),
            "activation": model.net.spec.activation,
        }
    digest = hashlib.sha256()
    for a in arrays:
        digest.update(np.ascontiguousarray(a).tobytes())
    desc["init_fingerprint"] = digest.hexdigest()[:16]
    return desc


# ---------------------------------------------------------------------------
# Model adapters: one training loop for branch-trunk models and the baseline
# ---------------------------------------------------------------------------


@dataclass
class _Decomposed:
    """Dataset reshaped for shared-evaluation training."""

    u_unique: np.ndarray
    iu: np.ndarray
    y_unique: np.ndarray
    iy: np.ndarray
    targets: np.ndarray


def _decompose(ds: Dataset) -> _Decomposed:
    y_unique, iy = np.unique(ds.y, axis=0, return_inverse=True)
    if len(y_unique) == len(ds.y):
        # all queries distinct (sampled-query sets): keep original order so
        # the gradient path can take its direct route
        return _Decomposed(ds.u_values, ds.u_index, ds.y,
                           np.arange(len(ds.y)), ds.targets)
    return _Decomposed(ds.u_values, ds.u_index, y_unique, iy.ravel(), ds.targets)


class _DeepONetAdapter:
    def __init__(self, model: dn.DeepONetModel, ds: Dataset):
        if ds.m != model.m:
            raise ValueError(f"dataset has {ds.m} sensors, model expects {model.m}")
        if ds.dim_y != model.dim_y:
            raise ValueError(f"dataset queries are {ds.dim_y}-d, model expects {model.dim_y}-d")

    @staticmethod
    def arrays(model):
        return dn.model_arrays(model)

    @staticmethod
    def rebuild(model, arrays):
        return dn.apply_arrays(model, arrays)

    @staticmethod
    def loss_and_grads(model, dec: _Decomposed, rows):
        if rows is None:
            grads, loss, _ = dn.deeponet_gradients_indexed(
                model, dec.u_unique, dec.y_unique, dec.iu, dec.iy, dec.targets
            )
        else:
            grads, loss, _ = dn.deeponet_gradients_indexed(
                model, dec.u_unique, dec.y_unique,
                dec.iu[rows], dec.iy[rows], dec.targets[rows],
            )
        return dn.grad_arrays(model, grads), loss

    @staticmethod
    def predict(model, dec: _Decomposed) -> np.ndarray:
        b = dn.branch_outputs(model, dec.u_unique)
        t = dn.trunk_outputs(model, dec.y_unique)
        b0 = model.b0 if model.b0_enabled else 0.0
        return np.einsum("ij,ij->i", b[dec.iu], t[dec.iy]) + b0


class _FnnAdapter:
    def __init__(self, model: dn.FnnBaseline, ds: Dataset):
        if ds.m != model.m:
            raise ValueError(f"dataset has {ds.m} sensors, model expects {model.m}")
        if ds.dim_y != model.dim_y:
            raise ValueError(f"dataset queries are {ds.dim_y}-d, model expects {model.dim_y}-d")

    @staticmethod
    def arrays(model):
        return model.net.arrays()

    @staticmethod
    def rebuild(model, arrays):
        params = model.net.copy()
        it = iter(arrays)
        for i in range(len(params.weights)):
            params.weights[i] = next(it)
            if params.biases[i] is not None:
                params.biases[i] = next(it)
        return dn.FnnBaseline(model.m, model.dim_y, params)

    @staticmethod
    def loss_and_grads(model, dec: _Decomposed, rows):
        u = dec.u_unique[dec.iu if rows is None else dec.iu[rows]]
        y = dec.y_unique[dec.iy if rows is None else dec.iy[rows]]
        t = dec.targets if rows is None else dec.targets[rows]
        grads, loss, _ = dn.fnn_gradients(model, u, y, t)
        return grads.arrays(), loss

    @staticmethod
    def predict(model, dec: _Decomposed) -> np.ndarray:
        return dn.fnn_forward(model, dec.u_unique[dec.iu], dec.y_unique[dec.iy])


def _adapter_for(model, ds: Dataset):
    if isinstance(model, dn.DeepONetModel):
        return _DeepONetAdapter(model, ds)
    if isinstance(model, dn.FnnBaseline):
        return _FnnAdapter(model, ds)
    raise TypeError(f"cannot train a {type(model).__name__}")


def train(model, train_set: Dataset, test_set: Dataset, cfg: TrainConfig,
          extra_config: dict | None = None):
    """Adam on full-batch (or minibatch) MSE; returns (model, report).

    Deterministic for fixed (model, data, cfg). Non-finite losses or
    gradients raise TrainingDiverged carrying the last finite checkpoint.
    """
    adapter = _adapter_for(model, train_set)
    _adapter_for(model, test_set)
    dec_train = _decompose(train_set)
    dec_test = _decompose(test_set)
    model = model.copy()
    arrays = adapter.arrays(model)
    state = nn.adam_init(arrays, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(17,)))
    n = len(train_set)
    config = {
        "model": _model_config(model, arrays),
        "train": cfg.as_dict(),
        "data": {"train": train_set.config, "test": test_set.config},
        **(extra_config or {}),
    }
    chash = config_hash(config)
    iters_h, train_h, test_h = [], [], []
    last_good = model

    for it in range(1, cfg.iterations + 1):
        rows = None
        if cfg.batch_size is not None and cfg.batch_size < n:
            rows = rng.integers(0, n, size=cfg.batch_size)
        try:
            grads, loss = adapter.loss_and_grads(model, dec_train, rows)
            if not math.isfinite(loss):
                raise nn.NonFiniteGradientError(f"train loss became {loss}")
            state, arrays = nn.adam_step_arrays(state, arrays, grads)
            model = adapter.rebuild(model, arrays)
            if it % cfg.eval_cadence == 0 or it == cfg.iterations or it == 1:
                test_loss = nn.mse(adapter.predict(model, dec_test), dec_test.targets)
                if not math.isfinite(test_loss):
                    raise nn.NonFiniteGradientError(f"test loss became {test_loss}")
                iters_h.append(it)
                train_h.append(loss)
                test_h.append(test_loss)
                last_good = model
                if cfg.target_test_mse is not None and test_loss <= cfg.target_test_mse:
                    stopped_early = it
                    break
        except nn.NonFiniteGradientError as exc:
            report = _make_report(iters_h, train_h, test_h, config, chash)
            raise TrainingDiverged(
                f"aborted at iteration {it}: {exc}", last_good, report
            ) from exc
    else:
        stopped_early = None
    report = _make_report(iters_h, train_h, test_h, config, chash)
    if stopped_early is not None:
        report.notes["stopped_early"] = stopped_early
    report.validate()
    return model, report


def _make_report(iters_h, train_h, test_h, config, chash) -> ExperimentReport:
    final_train = train_h[-1] if train_h else math.nan
    final_test = test_h[-1] if test_h else math.nan
    return ExperimentReport(
        history_iterations=list(iters_h),
        history_train_mse=list(train_h),
        history_test_mse=list(test_h),
        final_train_mse=final_train,
        final_test_mse=final_test,
        generalization_gap=final_test - final_train,
        config=config,
        config_hash=chash,
    )


def predictions(model, ds: Dataset) -> np.ndarray:
    """Model outputs for every record, distinct inputs evaluated once."""
    adapter = _adapter_for(model, ds)
    return adapter.predict(model, _decompose(ds))


def evaluate(model, ds: Dataset) -> float:
    """Plain MSE of the model over a dataset."""
    return nn.mse(predictions(model, ds), ds.targets)


def trimmed_test_mse(model, ds: Dataset, trim_fraction: float = 0.001) -> float:
    """MSE after discarding the ceil(trim_fraction * n) largest squared errors.

    Guards error statistics of problems whose trajectories can blow up.
    """
    if not 0 <= trim_fraction < 1:
        raise ValueError(f"trim fraction must be in [0, 1), got {trim_fraction}")
    sq = (predictions(model, ds) - ds.targets) ** 2
    drop = math.ceil(trim_fraction * sq.size)
    if drop == 0:
        return float(sq.mean())
    if drop >= sq.size:
        raise ValueError("trimming would discard every record")
    keep = np.sort(sq)[: sq.size - drop]
    return float(keep.mean())


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(resid @ resid)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def fit_power_law(xs, errors) -> tuple[float, float, float]:
    """Fit errors ~ prefactor * xs^exponent; returns (exponent, prefactor, R2).

    Least squares on log(errors) vs log(xs).
    """
    x = np.asarray(xs, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if x.size < 3 or x.size != e.size:
        raise ValueError("need at least 3 (x, error) pairs")
    if np.any(x <= 0) or np.any(e <= 0):
        raise ValueError("power-law fit needs positive values")
    slope, intercept, r2 = _line_fit(np.log(x), np.log(e))
    return slope, float(np.exp(intercept)), r2


def fit_exponential(xs, errors) -> tuple[float, float, float]:
    """Fit errors ~ prefactor * exp(-decay * xs); returns (decay, prefactor, R2).

    Least squares on log(errors) vs xs. decay is per unit x, so a per-step
    shrink factor (base) is exp(decay).
    """
    x = np.asarray(xs, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if x.size < 3 or x.size != e.size:
        raise ValueError("need at least 3 (x, error) pairs")
    if np.any(e <= 0):
        raise ValueError("exponential fit needs positive errors")
    slope, intercept, r2 = _line_fit(x, np.log(e))
    return -slope, float(np.exp(intercept)), r2


def best_fit_window(xs, errors, kind: str = "exponential",
                    min_points: int = 4) -> tuple[tuple[float, float, float], int]:
    """Fit over the prefix of points that maximizes R-squared.

    Sweeps contiguous prefixes of at least min_points and returns
    (fit result, prefix length). Lets decay fits ignore a saturated tail
    without a hand-chosen cutoff.
    """
    fitter = {"power": fit_power_law, "exponential": fit_exponential}.get(kind)
    if fitter is None:
        raise ValueError(f"unknown fit kind {kind!r}")
    x = np.asarray(xs, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if x.size < min_points:
        raise ValueError(f"need at least {min_points} points, got {x.size}")
    fits = [(fitter(x[:n], e[:n]), n) for n in range(min_points, x.size + 1)]
    best_r2 = max(fit[2] for fit, _ in fits)
    # ties (within roundoff) go to the longest prefix
    return max((f for f in fits if f[0][2] >= best_r2 - 1e-9), key=lambda f: f[1])


@dataclass(frozen=True)
class GapSummary:
    gaps: tuple[float, ...]
    slope: float | None  # test-vs-train regression slope across runs
    intercept: float | None


def generalization_gap(reports) -> GapSummary:
    """Final (test - train) per run, plus the across-run regression of test
    MSE on train MSE when at least 3 runs are given."""
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    if not reports:
        raise ValueError("need at least one report")
    gaps = tuple(r.final_test_mse - r.final_train_mse for r in reports)
    slope = intercept = None
    if len(reports) >= 3:
        train = np.array([r.final_train_mse for r in reports])
        test = np.array([r.final_test_mse for r in reports])
        s, b = np.polyfit(train, test, 1)
        slope, intercept = float(s), float(b)
    return GapSummary(gaps, slope, intercept)
