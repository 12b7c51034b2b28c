"""Command line entry point: ``slidefair {train,sweep,geometry,diagnose,simulate,data}``."""
from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigFileError, data_params, read_config, snapshot, train_config
from .constraints import ConstraintSpec
from .data import DataError, SplitSpec, data_dir, dump_csv, load_csv, load_dump, split, synth
from .evaluation import evaluate, mnf_diagnostic, pareto_sweep, pareto_to_csv
from .nn_core import load_model, save_model

SUBCOMMANDS = ("train", "sweep", "geometry", "diagnose", "simulate", "data")


class UsageError(Exception):
    pass


class OutputExistsError(FileExistsError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, default=0, help="root seed for every random substream")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for restarts and sweep cells")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def _train_flags(p):
    g = p.add_argument_group("training overrides")
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--restarts", type=int)
    g.add_argument("--mode", choices=("plain", "hyslide", "cccp"))
    g.add_argument("--architecture", choices=("linear", "mlp"))
    g.add_argument("--hidden-width", type=int)
    g.add_argument("--target-accuracy", type=float)
    g.add_argument("--surrogate")
    g.add_argument("--tau", type=float)
    g.add_argument("--tau-range", help="LOW,HIGH: draw tau uniformly per restart")
    g.add_argument("--criterion")
    g.add_argument("--gamma", type=float)
    g.add_argument("--epsilon", type=float)
    _data_flags(p)


def _data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV file (relative names resolve against SLIDE_DATA_DIR)")
    g.add_argument("--schema", help="schema INI or built-in schema name (adult, bank, law)")
    g.add_argument("--synthetic", help="synthetic generator name")
    g.add_argument("--n", type=int, help="synthetic sample size")
    g.add_argument("--repetition", type=int)


def build_parser():
    parser = _Parser(prog="slidefair", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train, select over restarts, evaluate on the test split")
    _common(p), _train_flags(p)

    p = sub.add_parser("sweep", help="accuracy/fairness curve over a penalty grid")
    _common(p), _train_flags(p)
    p.add_argument("--lambdas", required=True, help="comma separated penalty weights")
    p.add_argument("--metric", default=None, help="fairness metric for the curve (default: the criterion)")

    p = sub.add_parser("geometry", help="feasible-set gap curves and the analytic 1-D example")
    _common(p)
    p.add_argument("--kind", choices=("gaussian_mixture", "two_moon", "analytic1d"), default="gaussian_mixture")
    p.add_argument("--resolution", type=int, help="grid nodes per axis (50 toy, 101 analytic)")
    p.add_argument("--fine-grid", action="store_true", help="use the 200x200 grid")
    p.add_argument("--alphas", help="comma separated alpha levels")
    p.add_argument("--taus", default="0.01,0.1")
    p.add_argument("--n-mc", type=int, default=10_000)
    p.add_argument("--gamma", type=float, default=0.3)
    p.add_argument("--exact-hinge", action="store_true", help="analytic1d: exact hinge expectation")
    p.add_argument("--scatter-n", type=int, default=500, help="size of the toy scatter dump")

    p = sub.add_parser("diagnose", help="surrogate-gap diagnostic for a saved model")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dump CSV (with sidecar) or raw CSV with --schema")
    p.add_argument("--schema")
    p.add_argument("--criterion", default="di")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--threshold", type=float, default=0.10)

    p = sub.add_parser("simulate", help="convergence table for DI+SLIDE linear fits")
    _common(p)
    p.add_argument("--n-values", default="250,1000,4000,16000")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--second-moment", choices=("variance", "sd"), default="variance")

    p = sub.add_parser("data", help="load or synthesise a dataset and dump it (plus splits)")
    _common(p)
    _data_flags(p)
    p.add_argument("--no-split", action="store_true")
    return parser


# helpers ---------------------------------------------------------------

def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


class Run:
    """Collects outputs and writes them through one place, refusing to clobber without ``--force``."""

    def __init__(self, args, cp=None):
        self.args = args
        self.out = Path(args.out)
        self.cp = cp
        self.outputs = []
        self.t0 = time.perf_counter()

    def path(self, name) -> Path:
        p = self.out / name
        if p.exists() and not self.args.force:
            raise OutputExistsError(f"{p} exists; pass --force to overwrite")
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(p))
        return p

    def write_json(self, name, obj):
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")
        return p

    def manifest(self, extra=None):
        args = {k: v for k, v in vars(self.args).items() if k != "func"}
        man = {"subcommand": self.args.command, "argv": args, "seed": self.args.seed,
               "config": snapshot(self.cp) if self.cp is not None else None,
               "version": __version__, "git": _git_stamp(), "outputs": list(self.outputs),
               "wall_clock_seconds": time.perf_counter() - self.t0}
        man.update(extra or {})
        p = self.out / "manifest.json"
        if p.exists() and not self.args.force:
            raise OutputExistsError(f"{p} exists; pass --force to overwrite")
        p.write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")


def _git_stamp():
    try:
        r = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                           cwd=Path(__file__).parent, timeout=5)
        return r.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def _overrides(args):
    o = {"train.lambda": getattr(args, "lam", None), "train.epochs": getattr(args, "epochs", None),
         "train.lr": getattr(args, "lr", None), "train.restarts": getattr(args, "restarts", None),
         "train.mode": getattr(args, "mode", None), "train.architecture": getattr(args, "architecture", None),
         "train.hidden_width": getattr(args, "hidden_width", None),
         "train.target_accuracy": getattr(args, "target_accuracy", None),
         "surrogate.kind": getattr(args, "surrogate", None), "surrogate.tau": getattr(args, "tau", None),
         "constraint.criterion": getattr(args, "criterion", None),
         "constraint.gamma": getattr(args, "gamma", None), "constraint.epsilon": getattr(args, "epsilon", None),
         "data.path": getattr(args, "data", None), "data.schema": getattr(args, "schema", None),
         "data.synthetic": getattr(args, "synthetic", None), "data.n": getattr(args, "n", None),
         "data.repetition": getattr(args, "repetition", None)}
    tr = getattr(args, "tau_range", None)
    if tr:
        lo, hi = _floats(tr)
        o["surrogate.tau_low"], o["surrogate.tau_high"] = lo, hi
    return o


def _resolve_data_path(path):
    p = Path(path)
    if not p.exists() and not p.is_absolute() and (data_dir() / p).exists():
        p = data_dir() / p
    return p


def load_dataset(cp, seed):
    d = cp["data"]
    if d.get("synthetic", "").strip():
        return synth(d["synthetic"].strip(), int(d["n"]), seed, data_params(cp))
    if d.get("path", "").strip():
        p = _resolve_data_path(d["path"].strip())
        if Path(str(p) + ".schema.json").exists():
            return load_dump(p)
        if not d.get("schema", "").strip():
            raise DataError("a raw CSV needs a schema (--schema or [data] schema)")
        return load_csv(p, d["schema"].strip())
    raise DataError("no data given: set [data] synthetic or path, or pass --synthetic / --data")


def _splits(cp, ds, seed):
    ratios = tuple(_floats(cp["data"]["split"]))
    return split(ds, SplitSpec(ratios, seed, int(cp["data"]["repetition"])))


# subcommands -------------------------------------------------------------

def cmd_train(args):
    from .trainer import select_model, train_restarts

    cp = read_config(args.config, _overrides(args))
    run = Run(args, cp)
    cfg = train_config(cp, args.seed)
    ds = load_dataset(cp, args.seed)
    tr, va, te = _splits(cp, ds, args.seed)
    runs = train_restarts(tr, cfg, jobs=args.jobs)
    best = select_model(runs, va, cfg.target_accuracy, cfg.constraint, cfg.accuracy_band, cfg.adversary)
    save_model(best.params, run.path("model.json"))
    best.to_csv(run.path("trajectory.csv"))
    report = evaluate(best.params, te, cfg.constraint, tau=best.meta["tau"], adversary=cfg.adversary,
                      seed=args.seed, meta={"restart": best.meta["restart"], "tau": best.meta["tau"],
                                            "lambda": cfg.lam, "mode": cfg.mode, "n_train": tr.n,
                                            "n_test": te.n, "val_accuracy": best.meta.get("val_accuracy")})
    report.to_json(run.path("report.json"))
    dump_csv(te, run.path("test.csv"))
    run.outputs.append(str(run.out / "test.csv.schema.json"))
    run.manifest({"restart_taus": [r.meta["tau"] for r in runs]})
    return 0


def cmd_sweep(args):
    cp = read_config(args.config, _overrides(args))
    run = Run(args, cp)
    cfg = train_config(cp, args.seed)
    ds = load_dataset(cp, args.seed)
    tr, _, te = _splits(cp, ds, args.seed)
    metric = args.metric or cfg.constraint.criterion
    spec = cfg.constraint if metric == cfg.constraint.criterion else ConstraintSpec(metric)
    points = pareto_sweep(tr, te, _floats(args.lambdas), cfg, spec, jobs=args.jobs)
    pareto_to_csv(points, run.path("pareto.csv"))
    run.manifest({"lambdas": _floats(args.lambdas)})
    return 0


def cmd_geometry(args):
    from . import geometry as geo

    run = Run(args, read_config(args.config) if args.config else None)
    if args.kind == "analytic1d":
        res = args.resolution or (200 if args.fine_grid else 101)
        alphas = _floats(args.alphas) if args.alphas else None
        curve, grid, valid = geo.analytic_gap_curve(alphas, res, exact=args.exact_hinge)
        curve.to_csv(run.path("analytic1d_gap.csv"), {"hinge": "d_hinge"})
        with open(run.path("analytic1d_grid.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta0", "beta", "di", "di_hinge"])
            for (b0, b), di, dh, ok in zip(grid.nodes, grid.values["indicator"], grid.values["hinge"], valid):
                if ok:
                    w.writerow([repr(float(b0)), repr(float(b)), repr(float(di)), repr(float(dh))])
    else:
        res = args.resolution or (200 if args.fine_grid else 50)
        taus = tuple(_floats(args.taus))
        default = (0.1, 0.15, 0.2, 0.25, 0.3) if args.kind == "gaussian_mixture" else (0.1, 0.15, 0.2, 0.25)
        alphas = _floats(args.alphas) if args.alphas else default
        curve, _ = geo.toy_gap_curve(args.kind, alphas, taus, res, args.n_mc, args.gamma, args.seed)
        curve.to_csv(run.path(f"{args.kind}_gap.csv"), geo.toy_curve_names(taus))
        dump_csv(synth(geo.TOY_LAWS[args.kind], args.scatter_n, args.seed), run.path(f"{args.kind}_scatter.csv"))
        run.outputs.append(str(run.out / f"{args.kind}_scatter.csv.schema.json"))
    run.manifest()
    return 0


def cmd_diagnose(args):
    run = Run(args)
    model = load_model(args.model)
    p = _resolve_data_path(args.data)
    ds = load_dump(p) if Path(str(p) + ".schema.json").exists() or not args.schema else load_csv(p, args.schema)
    spec = ConstraintSpec(args.criterion, gamma=args.gamma, epsilon=args.epsilon)
    m, ratio, verdict = mnf_diagnostic(model, ds, spec, args.tau, args.threshold, seed=args.seed)
    run.write_json("diagnose.json", {"criterion": spec.criterion, "tau": args.tau, "M_nf": m,
                                     "M_ratio": "inf" if np.isinf(ratio) else ratio,
                                     "threshold": args.threshold, "verdict": verdict, "n": ds.n})
    run.manifest()
    return 0


def cmd_simulate(args):
    from .geometry import simulate_convergence, write_rows

    run = Run(args)
    out = simulate_convergence([int(v) for v in _floats(args.n_values)], range(args.seeds), args.alpha, args.tau, args.epochs,
                               law_params={"second_moment": args.second_moment}, seed=args.seed)
    write_rows(out["rows"], run.path("convergence.csv"))
    run.manifest({"f_star": out["f_star"], "risk_star": out["risk_star"], "di_star": out["di_star"]})
    return 0


def cmd_data(args):
    cp = read_config(args.config, _overrides(args))
    run = Run(args, cp)
    ds = load_dataset(cp, args.seed)
    name = cp["data"].get("synthetic", "").strip() or Path(cp["data"]["path"]).stem
    dump_csv(ds, run.path(f"{name}.csv"))
    run.outputs.append(str(run.out / f"{name}.csv.schema.json"))
    if not args.no_split:
        for part in _splits(cp, ds, args.seed):
            fn = f"{name}_{part.provenance['split']}.csv"
            dump_csv(part, run.path(fn))
            run.outputs.append(str(run.out / (fn + ".schema.json")))
    run.manifest({"n": ds.n, "d": ds.d})
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "geometry": cmd_geometry, "diagnose": cmd_diagnose,
            "simulate": cmd_simulate, "data": cmd_data}


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message)}) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    try:
        return COMMANDS[args.command](args)
    except OutputExistsError as exc:
        return _fail("output_exists", exc, 3)
    except (ConfigFileError, DataError, FileNotFoundError, KeyError, ValueError, FloatingPointError) as exc:
        return _fail(type(exc).__name__, f"{args.command}: {exc}", 1)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
