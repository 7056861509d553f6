"""Command-line entry points.

Subcommands cover the full workflow: gen-data writes a dataset container,
train fits a model and writes its checkpoint plus history, eval scores a
saved model, preset runs one of the named studies, and fit-rates extracts
a convergence rate from a summary CSV.

Any subcommand accepts --config FILE, a plain text file of key=value lines
(# comments allowed) holding the same options as the flags; explicit flags
win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import nn
from .data import (ODE_PROBLEMS, PDE_PROBLEM, build_ode_dataset,
                   build_pde_dataset, dataset_to_csv, load_dataset,
                   save_dataset)
from .deeponet import (MODEL_MAGIC, DeepONetModel, FnnBaseline, build_deeponet,
                       build_fnn, load_model, save_model)
from .experiments import (TrainConfig, best_fit_window, evaluate,
                          fit_exponential, fit_power_law, train,
                          trimmed_test_mse)
from .function_spaces import ChebyshevSpace, GrfSpace
from .presets import PRESET_NAMES, run_preset
from .solvers import PdeConfig


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opnet",
        description="operator learning with branch-trunk networks")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="key=value file providing defaults for this command")
    common.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-data", parents=[common],
                       help="sample inputs, solve them, write a dataset")
    p.add_argument("--problem", required=True,
                   choices=sorted(ODE_PROBLEMS) + [PDE_PROBLEM])
    p.add_argument("--space", choices=("grf", "chebyshev"), default="grf")
    p.add_argument("--length-scale", type=float, default=0.2,
                   help="GRF kernel length scale")
    p.add_argument("--n-terms", type=int, default=10,
                   help="Chebyshev polynomial count")
    p.add_argument("--bound", type=float, default=1.0,
                   help="Chebyshev coefficient bound")
    p.add_argument("--m", type=int, default=100, help="sensor count")
    p.add_argument("--n-u", type=int, default=100, help="distinct input functions")
    p.add_argument("--y-per-u", type=int, default=100,
                   help="query points per input (ODE problems)")
    p.add_argument("--points-per-u", type=int, default=1000,
                   help="solution grid points per input (PDE problem)")
    p.add_argument("--domain-end", type=float, default=1.0,
                   help="right endpoint of the time domain")
    p.add_argument("--k", type=float, default=1.0, help="pendulum gravity constant")
    p.add_argument("--diffusion", type=float, default=0.01)
    p.add_argument("--reaction", type=float, default=0.01)
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--csv", metavar="FILE", help="also export records as CSV")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", parents=[common],
                       help="train a model on saved datasets")
    p.add_argument("--train-data", required=True, metavar="FILE")
    p.add_argument("--test-data", required=True, metavar="FILE")
    p.add_argument("--model", choices=("stacked", "unstacked", "fnn"),
                   default="unstacked")
    p.add_argument("--branch-hidden", type=_int_tuple, default=(40,),
                   metavar="W[,W...]")
    p.add_argument("--trunk-hidden", type=_int_tuple, default=(40, 40, 40),
                   metavar="W[,W...]")
    p.add_argument("--fnn-hidden", type=_int_tuple, default=(2560,),
                   metavar="W[,W...]")
    p.add_argument("--branch-activation", choices=nn.ACTIVATIONS, default="relu")
    p.add_argument("--trunk-activation", choices=nn.ACTIVATIONS, default="tanh")
    p.add_argument("--no-bias", action="store_true",
                   help="drop the branch output bias and the merge constant")
    p.add_argument("--iterations", type=int, default=50000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--eval-cadence", type=int, default=1000)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="score a saved model on a dataset")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--trim", type=float, default=None,
                   help="also report the MSE with this fraction trimmed")
    p.add_argument("--out", metavar="FILE", help="write scores as JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("preset", parents=[common],
                       help="run a named study end to end")
    p.add_argument("name", choices=PRESET_NAMES)
    p.add_argument("--desk", action="store_true",
                   help="reduced sizes; substitutions recorded in the output")
    p.add_argument("--runs", type=int, default=1,
                   help="repeats per sweep point for error bars")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one preset knob (repeatable)")
    p.set_defaults(func=_cmd_preset)

    p = sub.add_parser("fit-rates", parents=[common],
                       help="fit a convergence rate to a summary CSV")
    p.add_argument("--summary", required=True, metavar="FILE")
    p.add_argument("--x-col", required=True)
    p.add_argument("--y-col", default="test_mse")
    p.add_argument("--kind", choices=("power", "exponential"), default="power")
    p.add_argument("--window", action="store_true",
                   help="fit the best prefix window instead of all points")
    p.add_argument("--min-points", type=int, default=4)
    p.set_defaults(func=_cmd_fit_rates)
    return parser


def _expand_config_file(argv: list[str]) -> list[str]:
    """Splice key=value lines from --config FILE in as leading options."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise SystemExit("--config needs a file argument")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2:]
    extra = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            extra.extend([f"--{key.replace('_', '-')}", value])
    if not rest:
        return extra
    # config values go right after the subcommand so explicit flags win
    return rest[:1] + extra + rest[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _expand_config_file(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


# ---------------------------------------------------------------------------


def _space_from_args(args):
    if args.space == "grf":
        return GrfSpace(l=args.length_scale)
    return ChebyshevSpace(n_terms=args.n_terms, bound=args.bound)


def _cmd_gen_data(args) -> int:
    space = _space_from_args(args)
    if args.problem == PDE_PROBLEM:
        cfg = PdeConfig(diffusion=args.diffusion, reaction=args.reaction)
        ds = build_pde_dataset(space, args.m, args.n_u, args.points_per_u,
                               args.seed, cfg)
    else:
        ds = build_ode_dataset(args.problem, space, args.m, args.n_u,
                               args.y_per_u, args.seed,
                               domain=(0.0, args.domain_end), k=args.k)
    save_dataset(ds, args.out)
    if args.csv:
        dataset_to_csv(ds, args.csv)
    print(f"wrote {args.out}: {len(ds)} records, {ds.n_distinct_u} inputs, "
          f"m={ds.m}, dropped={ds.n_dropped}")
    return 0


def _cmd_train(args) -> int:
    train_set = load_dataset(args.train_data)
    test_set = load_dataset(args.test_data)
    if args.model == "fnn":
        model = build_fnn(train_set.m, train_set.dim_y, args.fnn_hidden,
                          args.seed, activation=args.branch_activation)
    else:
        model = build_deeponet(args.model, train_set.m, train_set.dim_y,
                               args.seed,
                               branch_hidden=args.branch_hidden,
                               trunk_hidden=args.trunk_hidden,
                               branch_activation=args.branch_activation,
                               trunk_activation=args.trunk_activation,
                               use_bias=not args.no_bias)
    cfg = TrainConfig(iterations=args.iterations, lr=args.lr,
                      batch_size=args.batch_size, seed=args.seed,
                      eval_cadence=args.eval_cadence)
    trained, report = train(model, train_set, test_set, cfg)
    os.makedirs(args.out, exist_ok=True)
    if isinstance(trained, DeepONetModel):
        model_path = os.path.join(args.out, "model.opmd")
        save_model(trained, model_path)
    else:
        model_path = os.path.join(args.out, "model.opnt")
        nn.save_params(trained.net, model_path)
    with open(os.path.join(args.out, "history.csv"), "w") as fh:
        fh.write("iteration,train_mse,test_mse\n")
        for row in report.history_rows():
            fh.write(",".join(str(v) for v in row) + "\n")
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(asdict(report), fh, indent=2)
    print(f"wrote {model_path}")
    print(f"final train MSE {report.final_train_mse:.3e}, "
          f"test MSE {report.final_test_mse:.3e} "
          f"(config {report.config_hash})")
    return 0


def _load_any_model(path: str, ds):
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
    if magic == MODEL_MAGIC:
        return load_model(path)
    return FnnBaseline(ds.m, ds.dim_y, nn.load_params(path))


def _cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model = _load_any_model(args.model, ds)
    scores = {"mse": evaluate(model, ds), "records": len(ds)}
    if args.trim is not None:
        scores["trimmed_mse"] = trimmed_test_mse(model, ds, args.trim)
        scores["trim_fraction"] = args.trim
    for key, value in scores.items():
        print(f"{key}: {value:.6e}" if isinstance(value, float) else f"{key}: {value}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(scores, fh, indent=2)
    return 0


def _cmd_preset(args) -> int:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    result = run_preset(args.name, seed=args.seed, desk=args.desk,
                        runs=args.runs, out_dir=args.out, overrides=overrides)
    print(f"preset {result.name}: {len(result.reports)} runs")
    for row in result.summary:
        print("  " + ", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    if result.rates:
        print("rates:")
        for key, value in result.rates.items():
            print(f"  {key}: {value}")
    subs = result.notes.get("desk_substitutions")
    if subs:
        print(f"substitutions vs full scale: {subs}")
    if args.out:
        print(f"artifacts in {args.out}")
    return 0


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.4g}"
    return value


def _cmd_fit_rates(args) -> int:
    import csv as _csv

    with open(args.summary) as fh:
        rows = [r for r in _csv.DictReader(fh) if r.get(args.x_col, "") != ""]
    if not rows:
        raise SystemExit(f"no rows with column {args.x_col!r} in {args.summary}")
    groups: dict[float, list[float]] = {}
    for r in rows:
        groups.setdefault(float(r[args.x_col]), []).append(float(r[args.y_col]))
    xs = np.array(sorted(groups))
    ys = np.array([np.mean(groups[x]) for x in xs])
    if args.window:
        (a, b, r2), n_points = best_fit_window(xs, ys, args.kind, args.min_points)
        window_note = f" over best {n_points}-point prefix"
    else:
        fit = fit_power_law if args.kind == "power" else fit_exponential
        a, b, r2 = fit(xs, ys)
        window_note = ""
    if args.kind == "power":
        print(f"power law{window_note}: exponent {a:.4f}, "
              f"prefactor {b:.4g}, R^2 {r2:.4f}")
    else:
        print(f"exponential{window_note}: decay {a:.6g} per unit "
              f"(shrink factor {np.exp(a):.4g}), prefactor {b:.4g}, R^2 {r2:.4f}")
    return 0
