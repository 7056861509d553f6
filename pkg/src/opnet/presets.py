"""Named experiment presets: data generation, training, sweeps, artifacts.

Each preset reproduces one study at full scale by default and at a
reduced desk scale with desk=True (substitutions are recorded in the result
notes, so a desk run is never mistaken for the full one). Overrides replace
individual knobs; values are coerced to the type of the default, so string
values from a config file or command line work unchanged.

run_preset returns a PresetResult and, when out_dir is given, writes
summary.csv, one history CSV per trained model, and a matplotlib script
that redraws the preset's figure from those files.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .data import (build_ode_dataset, build_pde_dataset, dataset_from_pool,
                   solve_ode_pool, split_by_u)
from .deeponet import build_deeponet, build_fnn
from .experiments import (ExperimentReport, TrainConfig, best_fit_window,
                          evaluate, fit_exponential, fit_power_law,
                          generalization_gap, train, trimmed_test_mse)
from .function_spaces import ChebyshevSpace, GrfSpace

PRESET_NAMES = (
    "linear_ode",
    "nonlinear_ode",
    "pendulum_sensors",
    "pendulum_horizon",
    "pendulum_width",
    "pendulum_datasize",
    "pendulum_inputspace",
    "fnn_gridsearch",
    "diffusion_reaction_P",
    "diffusion_reaction_nu",
)


@dataclass
class PresetResult:
    name: str
    params: dict
    reports: dict[str, ExperimentReport]
    summary: list[dict]
    rates: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    out_dir: str | None = None


def run_preset(name: str, seed: int = 0, desk: bool = False, runs: int = 1,
               out_dir: str | None = None, overrides: dict | None = None) -> PresetResult:
    """Run one named preset end to end.

    runs > 1 repeats every sweep point with shifted model seeds so the
    summary carries error bars. desk swaps in the reduced sizes listed by
    the preset; overrides win over both.
    """
    builder = _BUILDERS.get(name)
    if builder is None:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    if runs < 1:
        raise ValueError("runs must be positive")
    result = builder(seed=seed, desk=desk, runs=runs, overrides=overrides)
    result.notes.setdefault("desk", desk)
    result.notes.setdefault("runs", runs)
    if out_dir is not None:
        _write_artifacts(result, out_dir)
        result.out_dir = out_dir
    return result


# ---------------------------------------------------------------------------
# Parameter handling
# ---------------------------------------------------------------------------


def _coerce(value, default):
    if isinstance(value, str):
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            elem = default[0] if default else 1.0
            return tuple(type(elem)(v) for v in value.split(","))
        return value
    if isinstance(default, tuple):
        return tuple(value)
    return value


def _merge_params(full: dict, desk_values: dict, desk: bool,
                  overrides: dict | None) -> tuple[dict, dict]:
    """Apply desk substitutions then overrides; report what changed."""
    params = dict(full)
    substitutions = {}
    changes = dict(desk_values) if desk else {}
    for key, value in (overrides or {}).items():
        if key not in params:
            raise ValueError(f"unknown override {key!r}; knobs: {', '.join(sorted(params))}")
        changes[key] = value
    for key, value in changes.items():
        if key not in params:
            raise ValueError(f"unknown override {key!r}; knobs: {', '.join(sorted(params))}")
        value = _coerce(value, params[key])
        if value != params[key]:
            substitutions[key] = {"full_scale": params[key], "used": value}
        params[key] = value
    return params, substitutions


def _run_labels(label: str, runs: int):
    if runs == 1:
        return [(label, 0)]
    return [(f"{label}_run{r}", r) for r in range(runs)]


def _train_one(model, train_set, test_set, params, preset_name, run_seed,
               iterations=None, lr=None):
    cfg = TrainConfig(
        iterations=iterations if iterations is not None else params["iterations"],
        lr=lr if lr is not None else params["lr"],
        seed=run_seed,
    )
    extra = {"preset": {"name": preset_name, "params": _jsonable(params)}}
    return train(model, train_set, test_set, cfg, extra_config=extra)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return float(obj)
    return obj


def _try_fit(fit, *args, **kwargs):
    # sweeps shrunk by overrides may fall below a fit's minimum point count
    try:
        return fit(*args, **kwargs)
    except ValueError as exc:
        return {"skipped": str(exc)}


# ---------------------------------------------------------------------------
# ODE presets
# ---------------------------------------------------------------------------


def _linear_ode(seed, desk, runs, overrides):
    """Four branch-trunk variants plus a dense baseline on the antiderivative."""
    full = {
        "l": 0.2, "m": 100, "train_n_u": 100, "train_y_per_u": 100,
        "test_n_u": 1000, "test_y_per_u": 100, "iterations": 50000, "lr": 1e-3,
        "branch_hidden": (40,), "trunk_hidden": (40, 40, 40),
        "fnn_hidden": (2560,),
    }
    desk_values = {"test_n_u": 200, "test_y_per_u": 50, "iterations": 10000,
                   "fnn_hidden": (160,)}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    space = GrfSpace(l=params["l"])
    train_set = build_ode_dataset("antiderivative", space, params["m"],
                                  params["train_n_u"], params["train_y_per_u"], seed)
    test_set = build_ode_dataset("antiderivative", space, params["m"],
                                 params["test_n_u"], params["test_y_per_u"], seed + 1000)

    variants = [("stacked", True), ("stacked", False),
                ("unstacked", True), ("unstacked", False)]
    reports, summary = {}, []
    for variant, bias in variants:
        base = f"{variant}_{'bias' if bias else 'nobias'}"
        for label, r in _run_labels(base, runs):
            model = build_deeponet(variant, params["m"], 1, seed + 7 * r,
                                   branch_hidden=params["branch_hidden"],
                                   trunk_hidden=params["trunk_hidden"],
                                   use_bias=bias)
            trained, rep = train(model, train_set, test_set,
                                 TrainConfig(params["iterations"], params["lr"], seed=seed),
                                 extra_config={"preset": {"name": "linear_ode",
                                                          "variant": base}})
            reports[label] = rep
            summary.append({"model": base, "run": r,
                            "parameters": trained.parameter_count(),
                            "train_mse": rep.final_train_mse,
                            "test_mse": rep.final_test_mse,
                            "gap": rep.generalization_gap})
    for label, r in _run_labels("fnn", runs):
        fnn = build_fnn(params["m"], 1, params["fnn_hidden"], seed + 7 * r)
        trained, rep = train(fnn, train_set, test_set,
                             TrainConfig(params["iterations"], params["lr"], seed=seed),
                             extra_config={"preset": {"name": "linear_ode",
                                                      "variant": "fnn"}})
        reports[label] = rep
        summary.append({"model": "fnn", "run": r,
                        "parameters": trained.parameter_count(),
                        "train_mse": rep.final_train_mse,
                        "test_mse": rep.final_test_mse,
                        "gap": rep.generalization_gap})
    notes = {"desk_substitutions": subs,
             "problem": "antiderivative, inputs from a squared-exponential GRF"}
    return PresetResult("linear_ode", _jsonable(params), reports, summary, {}, notes)


def _nonlinear_ode(seed, desk, runs, overrides):
    """Stacked vs unstacked on s' = u - s^2, trimmed test error."""
    full = {
        "l": 0.2, "m": 100, "train_n_u": 100, "train_y_per_u": 100,
        "test_n_u": 1000, "test_y_per_u": 100, "iterations": 100000, "lr": 1e-3,
        "branch_hidden": (40,), "trunk_hidden": (40, 40, 40),
        "trim_fraction": 0.001,
    }
    desk_values = {"test_n_u": 200, "test_y_per_u": 50, "iterations": 20000}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    space = GrfSpace(l=params["l"])
    train_set = build_ode_dataset("riccati", space, params["m"],
                                  params["train_n_u"], params["train_y_per_u"], seed)
    test_set = build_ode_dataset("riccati", space, params["m"],
                                 params["test_n_u"], params["test_y_per_u"], seed + 1000)
    reports, rows, by_variant = {}, [], {}
    for variant in ("stacked", "unstacked"):
        variant_reports = []
        for label, r in _run_labels(variant, runs):
            model = build_deeponet(variant, params["m"], 1, seed + 7 * r,
                                   branch_hidden=params["branch_hidden"],
                                   trunk_hidden=params["trunk_hidden"])
            trained, rep = _train_one(model, train_set, test_set, params,
                                      "nonlinear_ode", seed)
            reports[label] = rep
            variant_reports.append(rep)
            rows.append({"model": variant, "run": r,
                         "train_mse": rep.final_train_mse,
                         "test_mse": rep.final_test_mse,
                         "trimmed_test_mse": trimmed_test_mse(
                             trained, test_set, params["trim_fraction"]),
                         "gap": rep.generalization_gap})
        by_variant[variant] = variant_reports
    rates = {}
    for variant, reps in by_variant.items():
        gap = generalization_gap(reps)
        rates[f"{variant}_gap"] = {"gaps": list(gap.gaps), "slope": gap.slope}
    notes = {"desk_substitutions": subs,
             "problem": "s' = u - s^2 with divergent inputs dropped upstream"}
    return PresetResult("nonlinear_ode", _jsonable(params), reports, rows, rates, notes)


def _pendulum_sensors(seed, desk, runs, overrides):
    """Error vs sensor count at fixed horizon; decay rate from the best prefix."""
    full = {
        "l": 0.2, "k": 1.0, "horizon": 1.0, "m_values": (2, 3, 4, 5, 6, 7, 8, 9, 10),
        "train_n_u": 1000, "train_y_per_u": 10, "test_n_u": 100, "test_y_per_u": 100,
        "iterations": 100000, "lr": 1e-3,
        "branch_hidden": (40,), "trunk_hidden": (40, 40, 40),
    }
    desk_values = {"train_n_u": 500, "iterations": 20000}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    space = GrfSpace(l=params["l"])
    domain = (0.0, params["horizon"])
    train_pool = solve_ode_pool("pendulum", space, params["train_n_u"], seed,
                                domain=domain, k=params["k"])
    test_pool = solve_ode_pool("pendulum", space, params["test_n_u"], seed + 1000,
                               domain=domain, k=params["k"])
    reports, rows = {}, []
    means = []
    for m in params["m_values"]:
        train_set = dataset_from_pool(train_pool, m, params["train_y_per_u"])
        test_set = dataset_from_pool(test_pool, m, params["test_y_per_u"])
        finals = []
        for label, r in _run_labels(f"m{m}", runs):
            model = build_deeponet("unstacked", m, 1, seed + 7 * r,
                                   branch_hidden=params["branch_hidden"],
                                   trunk_hidden=params["trunk_hidden"])
            _, rep = _train_one(model, train_set, test_set, params,
                                "pendulum_sensors", seed)
            reports[label] = rep
            finals.append(rep.final_test_mse)
            rows.append({"m": m, "run": r,
                         "train_mse": rep.final_train_mse,
                         "test_mse": rep.final_test_mse})
        means.append(float(np.mean(finals)))
    fit = _try_fit(best_fit_window, params["m_values"], means, "exponential")
    if isinstance(fit, dict):
        rates = {"sensor_decay": fit}
    else:
        (decay, prefactor, r2), n_points = fit
        rates = {"sensor_decay": {"decay": decay, "base": math.exp(decay),
                                  "prefactor": prefactor, "r2": r2,
                                  "window_points": n_points}}
    notes = {"desk_substitutions": subs,
             "problem": "gravity pendulum, error vs number of input sensors"}
    return PresetResult("pendulum_sensors", _jsonable(params), reports, rows, rates, notes)


def _pendulum_horizon(seed, desk, runs, overrides):
    """Error growth with prediction horizon T."""
    full = {
        "l": 0.2, "k": 1.0, "horizons": (1.0, 2.0, 3.0, 4.0, 5.0), "m": 100,
        "train_n_u": 1000, "train_y_per_u": 10, "test_n_u": 100, "test_y_per_u": 100,
        "iterations": 100000, "lr": 1e-3,
        "branch_hidden": (40,), "trunk_hidden": (40, 40, 40),
    }
    desk_values = {"train_n_u": 500, "iterations": 20000}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    space = GrfSpace(l=params["l"])
    reports, rows, means = {}, [], []
    for horizon in params["horizons"]:
        domain = (0.0, horizon)
        train_set = build_ode_dataset("pendulum", space, params["m"],
                                      params["train_n_u"], params["train_y_per_u"],
                                      seed, domain=domain, k=params["k"])
        test_set = build_ode_dataset("pendulum", space, params["m"],
                                     params["test_n_u"], params["test_y_per_u"],
                                     seed + 1000, domain=domain, k=params["k"])
        finals = []
        for label, r in _run_labels(f"T{horizon:g}", runs):
            model = build_deeponet("unstacked", params["m"], 1, seed + 7 * r,
                                   branch_hidden=params["branch_hidden"],
                                   trunk_hidden=params["trunk_hidden"])
            _, rep = _train_one(model, train_set, test_set, params,
                                "pendulum_horizon", seed)
            reports[label] = rep
            finals.append(rep.final_test_mse)
            rows.append({"horizon": horizon, "run": r,
                         "train_mse": rep.final_train_mse,
                         "test_mse": rep.final_test_mse})
        means.append(float(np.mean(finals)))
    fit = _try_fit(fit_exponential, params["horizons"], means)
    if isinstance(fit, dict):
        rates = {"horizon_growth": fit}
    else:
        decay, prefactor, r2 = fit
        rates = {"horizon_growth": {"growth_per_unit_T": math.exp(-decay),
                                    "prefactor": prefactor, "r2": r2}}
    notes = {"desk_substitutions": subs,
             "problem": "gravity pendulum, error vs prediction horizon"}
    return PresetResult("pendulum_horizon", _jsonable(params), reports, rows, rates, notes)


def _pendulum_width(seed, desk, runs, overrides):
    """Error vs network width at a fixed longer horizon."""
    full = {
        "l": 0.2, "k": 1.0, "horizon": 3.0, "m": 100,
        "widths": (5, 10, 20, 50, 100, 200),
        "train_n_u": 1000, "train_y_per_u": 10, "test_n_u": 100, "test_y_per_u": 100,
        "iterations": 100000, "lr": 1e-3,
    }
    desk_values = {"widths": (5, 20, 100), "train_n_u": 500, "iterations": 20000}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    space = GrfSpace(l=params["l"])
    domain = (0.0, params["horizon"])
    train_set = build_ode_dataset("pendulum", space, params["m"],
                                  params["train_n_u"], params["train_y_per_u"],
                                  seed, domain=domain, k=params["k"])
    test_set = build_ode_dataset("pendulum", space, params["m"],
                                 params["test_n_u"], params["test_y_per_u"],
                                 seed + 1000, domain=domain, k=params["k"])
    reports, rows = {}, []
    for width in params["widths"]:
        for label, r in _run_labels(f"w{width}", runs):
            model = build_deeponet("unstacked", params["m"], 1, seed + 7 * r,
                                   branch_hidden=(width,),
                                   trunk_hidden=(width, width, width))
            trained, rep = _train_one(model, train_set, test_set, params,
                                      "pendulum_width", seed)
            reports[label] = rep
            rows.append({"width": width, "run": r,
                         "parameters": trained.parameter_count(),
                         "train_mse": rep.final_train_mse,
                         "test_mse": rep.final_test_mse})
    notes = {"desk_substitutions": subs,
             "problem": "gravity pendulum, error vs hidden width (same width "
                        "for branch, trunk, and the merge dimension)"}
    return PresetResult("pendulum_width", _jsonable(params), reports, rows, {}, notes)


def _pendulum_datasize(seed, desk, runs, overrides):
    """Error vs number of training inputs; exponential then power regime."""
    full = {
        "l": 0.2, "k": 1.0, "horizon": 1.0, "m": 100,
        "n_u_values": (100, 200, 400, 800, 1600, 3200), "train_y_per_u": 10,
        "test_n_u": 100, "test_y_per_u": 100,
        "iterations": 100000, "lr": 1e-3,
        "branch_hidden": (40,), "trunk_hidden": (40, 40, 40),
    }
    desk_values = {"n_u_values": (100, 200, 400, 800), "iterations": 20000}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    space = GrfSpace(l=params["l"])
    domain = (0.0, params["horizon"])
    max_n_u = max(params["n_u_values"])
    pool = solve_ode_pool("pendulum", space, max_n_u, seed, domain=domain, k=params["k"])
    full_train = dataset_from_pool(pool, params["m"], params["train_y_per_u"])
    test_set = build_ode_dataset("pendulum", space, params["m"],
                                 params["test_n_u"], params["test_y_per_u"],
                                 seed + 1000, domain=domain, k=params["k"])
    reports, rows, means = {}, [], []
    for n_u in params["n_u_values"]:
        train_set, _ = split_by_u(full_train, n_u, 0)
        finals = []
        for label, r in _run_labels(f"n{n_u}", runs):
            model = build_deeponet("unstacked", params["m"], 1, seed + 7 * r,
                                   branch_hidden=params["branch_hidden"],
                                   trunk_hidden=params["trunk_hidden"])
            _, rep = _train_one(model, train_set, test_set, params,
                                "pendulum_datasize", seed)
            reports[label] = rep
            finals.append(rep.final_test_mse)
            rows.append({"n_u": n_u, "records": len(train_set), "run": r,
                         "train_mse": rep.final_train_mse,
                         "test_mse": rep.final_test_mse})
        means.append(float(np.mean(finals)))
    n_values = np.asarray(params["n_u_values"], dtype=float)
    rates = {}
    fit = _try_fit(best_fit_window, n_values, means, "exponential")
    if isinstance(fit, dict):
        rates["early_exponential"] = fit
    else:
        (decay, pre_e, r2_e), window = fit
        rates["early_exponential"] = {"decay": decay, "prefactor": pre_e,
                                      "r2": r2_e, "window_points": window}
    fit = _try_fit(fit_power_law, n_values, means)
    if isinstance(fit, dict):
        rates["overall_power"] = fit
    else:
        exponent, pre_p, r2_p = fit
        rates["overall_power"] = {"exponent": exponent, "prefactor": pre_p, "r2": r2_p}
    notes = {"desk_substitutions": subs,
             "problem": "gravity pendulum, error vs training-set size (shared "
                        "input pool, prefixes by distinct input)"}
    return PresetResult("pendulum_datasize", _jsonable(params), reports, rows, rates, notes)


def _pendulum_inputspace(seed, desk, runs, overrides):
    """Evaluate a GRF-trained model on polynomial input families.

    One model is trained on the GRF space and then scored, unchanged, on
    Chebyshev-coefficient families of varying richness. That makes this an
    out-of-distribution probe rather than a per-space retraining sweep, and
    its numbers are not comparable to one (notes carry the flag).
    """
    full = {
        "l": 0.2, "k": 1.0, "horizon": 1.0, "m": 100,
        "train_n_u": 1000, "train_y_per_u": 10, "test_n_u": 100, "test_y_per_u": 100,
        "iterations": 100000, "lr": 1e-3,
        "branch_hidden": (40,), "trunk_hidden": (40, 40, 40),
        "n_terms_values": (5, 10, 20), "bounds": (0.5, 1.0, 2.0),
    }
    desk_values = {"train_n_u": 500, "iterations": 20000}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    grf = GrfSpace(l=params["l"])
    domain = (0.0, params["horizon"])
    train_set = build_ode_dataset("pendulum", grf, params["m"],
                                  params["train_n_u"], params["train_y_per_u"],
                                  seed, domain=domain, k=params["k"])
    grf_test = build_ode_dataset("pendulum", grf, params["m"],
                                 params["test_n_u"], params["test_y_per_u"],
                                 seed + 1000, domain=domain, k=params["k"])
    reports, rows = {}, []
    for label, r in _run_labels("grf_trained", runs):
        model = build_deeponet("unstacked", params["m"], 1, seed + 7 * r,
                               branch_hidden=params["branch_hidden"],
                               trunk_hidden=params["trunk_hidden"])
        trained, rep = _train_one(model, train_set, grf_test, params,
                                  "pendulum_inputspace", seed)
        reports[label] = rep
        rows.append({"space": grf.tag, "n_terms": "", "bound": "", "run": r,
                     "test_mse": rep.final_test_mse})
        for n_terms in params["n_terms_values"]:
            for bound in params["bounds"]:
                cheb = ChebyshevSpace(n_terms=n_terms, bound=bound)
                ood = build_ode_dataset("pendulum", cheb, params["m"],
                                        params["test_n_u"], params["test_y_per_u"],
                                        seed + 2000, domain=domain, k=params["k"])
                rows.append({"space": cheb.tag, "n_terms": n_terms, "bound": bound,
                             "run": r, "test_mse": evaluate(trained, ood)})
    notes = {"desk_substitutions": subs, "out_of_distribution": True,
             "problem": "out-of-distribution probe: one GRF-trained model "
                        "evaluated on Chebyshev input families"}
    return PresetResult("pendulum_inputspace", _jsonable(params), reports, rows, {}, notes)


def _fnn_gridsearch(seed, desk, runs, overrides):
    """Depth x width x learning-rate grid for the dense baseline."""
    full = {
        "l": 0.2, "m": 100, "train_n_u": 100, "train_y_per_u": 100,
        "test_n_u": 1000, "test_y_per_u": 100, "iterations": 50000,
        "depths": (2, 3, 4),
        "widths": (10, 20, 40, 80, 160, 320, 640, 1280, 2560),
        "lrs": (1e-2, 1e-3, 1e-4),
    }
    desk_values = {"depths": (2, 3), "widths": (10, 40, 160), "lrs": (1e-3,),
                   "iterations": 5000, "test_n_u": 200, "test_y_per_u": 50}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    space = GrfSpace(l=params["l"])
    train_set = build_ode_dataset("antiderivative", space, params["m"],
                                  params["train_n_u"], params["train_y_per_u"], seed)
    test_set = build_ode_dataset("antiderivative", space, params["m"],
                                 params["test_n_u"], params["test_y_per_u"], seed + 1000)
    reports, rows = {}, []
    best = None
    for depth in params["depths"]:
        for width in params["widths"]:
            for lr in params["lrs"]:
                base = f"d{depth}_w{width}_lr{lr:g}"
                for label, r in _run_labels(base, runs):
                    fnn = build_fnn(params["m"], 1, (width,) * (depth - 1),
                                    seed + 7 * r)
                    trained, rep = _train_one(fnn, train_set, test_set, params,
                                              "fnn_gridsearch", seed, lr=lr)
                    reports[label] = rep
                    rows.append({"depth": depth, "width": width, "lr": lr, "run": r,
                                 "parameters": trained.parameter_count(),
                                 "train_mse": rep.final_train_mse,
                                 "test_mse": rep.final_test_mse})
                    if best is None or rep.final_test_mse < best[1]:
                        best = (base, rep.final_test_mse)
    notes = {"desk_substitutions": subs, "best_config": best[0],
             "best_test_mse": best[1],
             "problem": "dense baseline on the antiderivative, grid-searched"}
    return PresetResult("fnn_gridsearch", _jsonable(params), reports, rows, {}, notes)


# ---------------------------------------------------------------------------
# PDE presets
# ---------------------------------------------------------------------------


def _diffusion_common(params, seed):
    cfg = solvers.PdeConfig(diffusion=params["diffusion"], reaction=params["reaction"])
    space = GrfSpace(l=params["l"])
    test_set = build_pde_dataset(space, params["m"], params["test_n_u"],
                                 params["test_P"], seed + 1000, cfg)
    return cfg, space, test_set


def _diffusion_reaction_P(seed, desk, runs, overrides):
    """Error vs number of sampled solution points per input."""
    full = {
        "l": 0.2, "diffusion": 0.01, "reaction": 0.01, "m": 100,
        "P_values": (10, 100, 1000), "n_u": 100,
        "test_n_u": 1000, "test_P": 1000,
        "iterations": 500000, "lr": 1e-3,
        "branch_hidden": (100,), "trunk_hidden": (100, 100, 100),
    }
    desk_values = {"iterations": 20000, "test_n_u": 100}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    cfg, space, test_set = _diffusion_common(params, seed)
    reports, rows, means = {}, [], []
    for P in params["P_values"]:
        train_set = build_pde_dataset(space, params["m"], params["n_u"], P, seed, cfg)
        finals = []
        for label, r in _run_labels(f"P{P}", runs):
            model = build_deeponet("unstacked", params["m"], 2, seed + 7 * r,
                                   branch_hidden=params["branch_hidden"],
                                   trunk_hidden=params["trunk_hidden"])
            _, rep = _train_one(model, train_set, test_set, params,
                                "diffusion_reaction_P", seed)
            reports[label] = rep
            finals.append(rep.final_test_mse)
            rows.append({"P": P, "run": r,
                         "train_mse": rep.final_train_mse,
                         "test_mse": rep.final_test_mse})
        means.append(float(np.mean(finals)))
    fit = _try_fit(fit_power_law, params["P_values"], means)
    if isinstance(fit, dict):
        rates = {"points_power": fit}
    else:
        exponent, prefactor, r2 = fit
        rates = {"points_power": {"exponent": exponent, "prefactor": prefactor,
                                  "r2": r2}}
    notes = {"desk_substitutions": subs,
             "problem": "diffusion-reaction source-to-solution map, error vs "
                        "solution points sampled per input"}
    return PresetResult("diffusion_reaction_P", _jsonable(params), reports, rows,
                        rates, notes)


def _diffusion_reaction_nu(seed, desk, runs, overrides):
    """Error vs number of training input functions at fixed P."""
    full = {
        "l": 0.2, "diffusion": 0.01, "reaction": 0.01, "m": 100,
        "n_u_values": (10, 50, 100, 200), "P": 1000,
        "test_n_u": 1000, "test_P": 1000,
        "iterations": 500000, "lr": 1e-3,
        "branch_hidden": (100,), "trunk_hidden": (100, 100, 100),
    }
    desk_values = {"iterations": 20000, "test_n_u": 100}
    params, subs = _merge_params(full, desk_values, desk, overrides)
    cfg, space, test_set = _diffusion_common(params, seed)
    reports, rows, means = {}, [], []
    for n_u in params["n_u_values"]:
        train_set = build_pde_dataset(space, params["m"], n_u, params["P"], seed, cfg)
        finals = []
        for label, r in _run_labels(f"nu{n_u}", runs):
            model = build_deeponet("unstacked", params["m"], 2, seed + 7 * r,
                                   branch_hidden=params["branch_hidden"],
                                   trunk_hidden=params["trunk_hidden"])
            _, rep = _train_one(model, train_set, test_set, params,
                                "diffusion_reaction_nu", seed)
            reports[label] = rep
            finals.append(rep.final_test_mse)
            rows.append({"n_u": n_u, "run": r,
                         "train_mse": rep.final_train_mse,
                         "test_mse": rep.final_test_mse})
        means.append(float(np.mean(finals)))
    fit = _try_fit(fit_power_law, params["n_u_values"], means)
    if isinstance(fit, dict):
        rates = {"inputs_power": fit}
    else:
        exponent, prefactor, r2 = fit
        rates = {"inputs_power": {"exponent": exponent, "prefactor": prefactor,
                                  "r2": r2}}
    notes = {"desk_substitutions": subs,
             "problem": "diffusion-reaction source-to-solution map, error vs "
                        "number of training inputs"}
    return PresetResult("diffusion_reaction_nu", _jsonable(params), reports, rows,
                        rates, notes)


_BUILDERS = {
    "linear_ode": _linear_ode,
    "nonlinear_ode": _nonlinear_ode,
    "pendulum_sensors": _pendulum_sensors,
    "pendulum_horizon": _pendulum_horizon,
    "pendulum_width": _pendulum_width,
    "pendulum_datasize": _pendulum_datasize,
    "pendulum_inputspace": _pendulum_inputspace,
    "fnn_gridsearch": _fnn_gridsearch,
    "diffusion_reaction_P": _diffusion_reaction_P,
    "diffusion_reaction_nu": _diffusion_reaction_nu,
}

# x-axis column and scales for the generated plot script, per preset
_PLOT_SPECS = {
    "linear_ode": None,  # history comparison instead of a sweep
    "nonlinear_ode": None,
    "pendulum_sensors": {"x": "m", "logy": True, "logx": False},
    "pendulum_horizon": {"x": "horizon", "logy": True, "logx": False},
    "pendulum_width": {"x": "width", "logy": True, "logx": True},
    "pendulum_datasize": {"x": "n_u", "logy": True, "logx": True},
    "pendulum_inputspace": {"x": "n_terms", "logy": True, "logx": False},
    "fnn_gridsearch": {"x": "width", "logy": True, "logx": True},
    "diffusion_reaction_P": {"x": "P", "logy": True, "logx": True},
    "diffusion_reaction_nu": {"x": "n_u", "logy": True, "logx": True},
}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _write_artifacts(result: PresetResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if result.summary:
        keys = list(result.summary[0])
        for row in result.summary[1:]:
            keys.extend(k for k in row if k not in keys)
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(result.summary)
    for label, report in result.reports.items():
        path = os.path.join(out_dir, f"history_{label}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "train_mse", "test_mse"])
            writer.writerows(report.history_rows())
    script = _plot_script(result)
    with open(os.path.join(out_dir, f"plot_{result.name}.py"), "w") as fh:
        fh.write(script)


def _plot_script(result: PresetResult) -> str:
    spec = _PLOT_SPECS[result.name]
    if spec is None:
        return _HISTORY_PLOT_TEMPLATE.format(name=result.name)
    return _SWEEP_PLOT_TEMPLATE.format(
        name=result.name, x_col=spec["x"],
        logx=repr(spec["logx"]), logy=repr(spec["logy"]))


_HISTORY_PLOT_TEMPLATE = '''"""Redraw the {name} training curves from the CSVs next to this script."""

import csv
import glob
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, ax = plt.subplots(figsize=(7, 5))
for path in sorted(glob.glob(os.path.join(here, "history_*.csv"))):
    label = os.path.basename(path)[len("history_"):-len(".csv")]
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    its = [int(r["iteration"]) for r in rows]
    ax.plot(its, [float(r["test_mse"]) for r in rows], label=label + " test")
    ax.plot(its, [float(r["train_mse"]) for r in rows], "--",
            label=label + " train", alpha=0.5)
ax.set_yscale("log")
ax.set_xlabel("iteration")
ax.set_ylabel("MSE")
ax.set_title("{name}")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(os.path.join(here, "{name}.png"), dpi=150)
print("wrote", os.path.join(here, "{name}.png"))
'''

_SWEEP_PLOT_TEMPLATE = '''"""Redraw the {name} sweep from summary.csv next to this script."""

import csv
import os
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "summary.csv")) as fh:
    rows = [r for r in csv.DictReader(fh) if r.get("{x_col}", "") != ""]

groups = defaultdict(list)
for r in rows:
    groups[float(r["{x_col}"])].append(float(r["test_mse"]))
xs = sorted(groups)
means = [sum(groups[x]) / len(groups[x]) for x in xs]
lo = [min(groups[x]) for x in xs]
hi = [max(groups[x]) for x in xs]

fig, ax = plt.subplots(figsize=(6, 4.5))
ax.errorbar(xs, means,
            yerr=[[m - a for m, a in zip(means, lo)],
                  [b - m for m, b in zip(means, hi)]],
            fmt="o-", capsize=3)
if {logx}:
    ax.set_xscale("log")
if {logy}:
    ax.set_yscale("log")
ax.set_xlabel("{x_col}")
ax.set_ylabel("test MSE")
ax.set_title("{name}")
fig.tight_layout()
fig.savefig(os.path.join(here, "{name}.png"), dpi=150)
print("wrote", os.path.join(here, "{name}.png"))
'''
