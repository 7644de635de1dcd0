"""Command-line front end.

Subcommands: ``run`` (one adaptation), ``protocol`` (repeated runs with
baselines), ``sweep`` (parameter grid), ``synth`` (write a synthetic pair)
and ``selfcheck`` (numerical oracles).

Settings resolve in this order, later winning: built-in defaults, the
``--preset`` values, a ``--config`` file of ``key=value`` lines, then
explicit flags.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks, harness
from .dataset import (DomainPair, FeatureFileError, ShiftSpec, generate_synthetic_pair,
                      load_features, load_indices, load_labels, sample_labeled_subset,
                      save_features, save_labels)
from .graph import PropagationError
from .solver import GRAPH_SCHEDULES, PRESETS, SolverConfig, SolverError, run_slsada

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# flag name -> (SolverConfig field, type)
SOLVER_FLAGS = {
    "k": ("k", int),
    "gamma": ("gamma", float),
    "lambda": ("lam", float),
    "iters": ("iterations", int),
    "neighbors": ("neighbor_count", int),
    "graph": ("graph_schedule", str),
}
# keys accepted in a config file besides the solver flags
OTHER_KEYS = {
    "preset": str, "seed": int, "per_class": int, "repeats": int, "source": str,
    "target": str, "labels_source": str, "labels_target": str, "labeled_idx": str,
    "out": str, "baselines": str, "threads": int, "data_seed": int,
    "rotation": float, "offset": float, "separation": float, "cov_scale": float,
    "classes": int, "dim": int, "samples_per_class": int,
}


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment. Keys use ``_`` or ``-``."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FeatureFileError(f"cannot read config file: {exc}") from None
    for i, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        kind = SOLVER_FLAGS.get(key, (None, None))[1] or OTHER_KEYS.get(key)
        if kind is None:
            raise UsageError(f"{path}:{i}: unknown key {key!r}")
        try:
            out[key] = kind(value)
        except ValueError:
            raise UsageError(f"{path}:{i}: bad value for {key}: {value!r}") from None
    return out


def _add_solver_flags(p):
    p.add_argument("--config", help="key=value settings file (flags override it)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="k and lambda preset")
    p.add_argument("--k", type=int, help="subspace dimension")
    p.add_argument("--gamma", type=float, help="clustering weight")
    p.add_argument("--lambda", type=float, dest="lambda", help="scale regularizer")
    p.add_argument("--iters", type=int, help="outer iterations T")
    p.add_argument("--neighbors", type=int, help="kNN graph neighbour count")
    p.add_argument("--graph", choices=GRAPH_SCHEDULES, help="graph rebuild schedule")
    p.add_argument("--seed", type=int, help="seed for labeled-subset sampling")


def _add_data_flags(p):
    p.add_argument("--source", help="source feature file (m x n_s, CSV or .bin)")
    p.add_argument("--target", help="target feature file (m x n_t)")
    p.add_argument("--labels-source", dest="labels_source", help="source labels, one per line")
    p.add_argument("--labels-target", dest="labels_target", help="target labels (evaluation)")


def _add_synthetic_flags(p, per_class_name):
    p.add_argument("--classes", type=int, help="number of classes")
    p.add_argument("--dim", type=int, help="feature dimension")
    p.add_argument(per_class_name, type=int, dest="samples_per_class",
                   help="samples per class in each domain")
    p.add_argument("--rotation", type=float, help="target rotation in degrees")
    p.add_argument("--offset", type=float, help="target offset along the first axis")
    p.add_argument("--separation", type=float, help="distance of class means from 0")
    p.add_argument("--cov-scale", type=float, dest="cov_scale", help="noise std")


def build_parser():
    parser = argparse.ArgumentParser(prog="slsada", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="adapt one source/target pair")
    _add_solver_flags(run)
    _add_data_flags(run)
    run.add_argument("--labeled-idx", dest="labeled_idx",
                     help="indices of labeled source samples, one per line")
    run.add_argument("--per-class", dest="per_class", type=int,
                     help="sample this many labeled source samples per class instead")
    run.add_argument("--out", help="output directory")
    run.add_argument("--show-config", action="store_true",
                     help="print the effective configuration and exit")

    for name, text in (("protocol", "repeated runs with baselines"),
                       ("sweep", "protocol over a parameter grid")):
        p = sub.add_parser(name, help=text)
        _add_solver_flags(p)
        _add_data_flags(p)
        p.add_argument("--synthetic", action="store_true",
                       help="use a generated pair instead of feature files")
        _add_synthetic_flags(p, "--samples-per-class")
        p.add_argument("--data-seed", dest="data_seed", type=int,
                       help="seed for the synthetic pair")
        p.add_argument("--per-class", dest="per_class", type=int,
                       help="labeled source samples per class")
        p.add_argument("--repeats", type=int, help="number of repeats")
        p.add_argument("--baselines", help="comma separated: " + ",".join(harness.BASELINES))
        p.add_argument("--threads", type=int, help="worker threads (default SLSADA_THREADS)")
        p.add_argument("--out", help="output directory")
        if name == "sweep":
            p.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2",
                           help="grid axis, e.g. gamma=0,0.01,0.1 (repeatable)")

    synth = sub.add_parser("synth", help="write a synthetic pair to files")
    _add_synthetic_flags(synth, "--per-class")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--format", choices=("csv", "bin"), default="csv")
    synth.add_argument("--out", default=".", help="output directory")

    sub.add_parser("selfcheck", help="run the numerical oracle checks")
    return parser


def resolve_settings(args):
    """Merge preset, config file and flags into one dict of settings."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: v for k, v in vars(args).items() if v is not None}
    merged = {**file_values, **flags}
    preset = merged.get("preset")
    solver_kw = dict(PRESETS[preset]) if preset else {}
    for flag, (field_name, _) in SOLVER_FLAGS.items():
        if flag in merged:
            solver_kw[field_name] = merged[flag]
    if "seed" in merged:
        solver_kw["seed"] = merged["seed"]
    try:
        merged["solver"] = SolverConfig(**solver_kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return merged


def _config_echo(config):
    d = config.to_dict()
    return " ".join(f"{k}={d[k]}" for k in sorted(d))


def _require(settings, *names):
    missing = [n for n in names if not settings.get(n)]
    if missing:
        raise UsageError("missing required setting(s): "
                         + ", ".join("--" + n.replace("_", "-") for n in missing))


def _file_pair(settings, need_target_labels):
    _require(settings, "source", "target", "labels_source")
    if need_target_labels:
        _require(settings, "labels_target")
    xs = load_features(settings["source"])
    xt = load_features(settings["target"])
    ys = load_labels(settings["labels_source"])
    yt = load_labels(settings["labels_target"]) if settings.get("labels_target") else None
    return xs, xt, ys, yt


def _synthetic_spec(settings):
    kw = {}
    for key, field_name in (("classes", "n_classes"), ("dim", "dim"),
                            ("samples_per_class", "per_class"), ("rotation", "rotation_deg"),
                            ("offset", "offset"), ("separation", "separation"),
                            ("cov_scale", "cov_scale")):
        if key in settings:
            kw[field_name] = settings[key]
    return ShiftSpec(**kw)


def cmd_run(settings, out=sys.stdout):
    config = settings["solver"]
    print("config:", _config_echo(config), file=out)
    if settings.get("show_config"):
        return EXIT_OK
    xs, xt, ys, yt = _file_pair(settings, need_target_labels=False)
    if ys.size != xs.shape[1]:
        # labels may cover only the labeled subset when an index file is given
        if not settings.get("labeled_idx"):
            raise FeatureFileError(
                f"{xs.shape[1]} source samples but {ys.size} source labels")
    if settings.get("labeled_idx"):
        idx = load_indices(settings["labeled_idx"])
        labels = ys if ys.size == idx.size else ys[idx]
        y_source = ys if ys.size == xs.shape[1] else None
        pair = DomainPair.build(xs, xt, idx, labels, y_source=y_source, y_target=yt)
    else:
        per_class = settings.get("per_class", 5)
        idx = sample_labeled_subset(ys, per_class, config.seed)
        pair = DomainPair.build(xs, xt, idx, y_source=ys, y_target=yt)
    config.check_dims(pair.dim)

    out_dir = Path(settings.get("out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    with harness.TraceWriter(out_dir / "trace.jsonl") as trace:
        state, pred = run_slsada(pair, config, callback=trace)
    save_labels(pair.to_original(pred.source_full(pair)), out_dir / "pred_source.txt")
    save_labels(pred.target, out_dir / "pred_target.txt")
    harness.embed_dump(state, pair, out_dir / "embedding.csv", normalize=config.normalize)
    report = {"config": config.to_dict(), "variants": harness.update_variants(config),
              "objective_trace": state.objective_trace,
              "graph_accepted": state.graph_accepted}
    if pair.y_source is not None:
        report["acc_s"] = harness.accuracy_s(pred, pair)
    if pair.y_target is not None:
        report["acc_t"] = harness.accuracy_t(pred, pair)
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    for key in ("acc_s", "acc_t"):
        if key in report:
            print(f"{key}: {report[key]:.4f}", file=out)
    print(f"wrote {out_dir}", file=out)
    return EXIT_OK


def _experiment(settings):
    config = settings["solver"]
    if settings.get("synthetic"):
        data = _synthetic_spec(settings)
    else:
        xs, xt, ys, yt = _file_pair(settings, need_target_labels=True)
        data = DomainPair.build(xs, xt, y_source=ys, y_target=yt)
    baselines = tuple(b for b in settings.get("baselines", "").split(",") if b)
    kw = dict(data=data, solver=config, baselines=baselines,
              seed=config.seed, threads=settings.get("threads"))
    for key, field_name in (("per_class", "per_class_labels"), ("repeats", "repeats"),
                            ("data_seed", "data_seed")):
        if key in settings:
            kw[field_name] = settings[key]
    try:
        return harness.ExperimentSpec(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _print_summary(report, out):
    for name, row in report.summary().items():
        print(f"{name:>17}  s {100 * row['mean_s']:5.1f} +- {100 * row['std_s']:4.1f}"
              f"   t {100 * row['mean_t']:5.1f} +- {100 * row['std_t']:4.1f}", file=out)
    if not report.complete:
        failed = [r["repeat"] for r in report.repeats if not r["ok"]]
        print(f"incomplete: repeats {failed} failed", file=out)


def cmd_protocol(settings, out=sys.stdout):
    spec = _experiment(settings)
    print("config:", _config_echo(spec.solver), file=out)
    report = harness.run_protocol(spec)
    _print_summary(report, out)
    if settings.get("out"):
        out_dir = Path(settings["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_json(out_dir / "report.json")
        report.to_csv(out_dir / "summary.csv")
    return EXIT_OK


def parse_grid(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"grid axis must look like name=v1,v2, got {item!r}")
        name, values = item.split("=", 1)
        name = name.strip()
        if name not in harness.SWEEP_PARAMS:
            raise UsageError(f"cannot sweep {name!r}")
        kind = float if harness.SWEEP_PARAMS[name] in ("lam", "gamma") else int
        try:
            grid[name] = [kind(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad grid values for {name}: {values!r}") from None
    return grid


def cmd_sweep(settings, out=sys.stdout):
    grid = parse_grid(settings.get("grid", []))
    if not grid:
        raise UsageError("sweep needs at least one --grid axis")
    spec = replace(_experiment(settings), grid=grid)
    out_dir = Path(settings.get("out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    results = harness.sweep(spec, csv_path=out_dir / "sweep.csv")
    for point, report in results:
        row = report.summary()["slsada"]
        label = " ".join(f"{k}={v}" for k, v in point.items())
        print(f"{label}: s {100 * row['mean_s']:.1f}  t {100 * row['mean_t']:.1f}", file=out)
    print(f"wrote {out_dir / 'sweep.csv'}", file=out)
    return EXIT_OK


def cmd_synth(settings, out=sys.stdout):
    spec = _synthetic_spec(settings)
    pair = generate_synthetic_pair(spec, settings.get("seed", 0))
    out_dir = Path(settings.get("out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".bin" if settings.get("format") == "bin" else ".csv"
    paths = [out_dir / f"source{ext}", out_dir / f"target{ext}",
             out_dir / "source_labels.txt", out_dir / "target_labels.txt"]
    save_features(pair.original_source(), paths[0])
    save_features(pair.target, paths[1])
    save_labels(pair.original_y_source(), paths[2])
    save_labels(pair.y_target, paths[3])
    for p in paths:
        print(f"wrote {p}", file=out)
    return EXIT_OK


def cmd_selfcheck(settings, out=sys.stdout):
    results = checks.run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}", file=out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {"run": cmd_run, "protocol": cmd_protocol, "sweep": cmd_sweep,
            "synth": cmd_synth, "selfcheck": cmd_selfcheck}


def main(argv=None, out=None, err=None):
    """Parse ``argv`` and dispatch; returns the exit status."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "synth":
            settings = {k: v for k, v in vars(args).items() if v is not None}
        else:
            settings = resolve_settings(args)
        return COMMANDS[args.command](settings, out=out)
    except UsageError as exc:
        print(f"slsada {args.command}: usage error: {exc}", file=err)
        return EXIT_USAGE
    except (SolverError, PropagationError, np.linalg.LinAlgError) as exc:
        print(f"slsada {args.command}: numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except (FeatureFileError, OSError, ValueError) as exc:
        print(f"slsada {args.command}: data error: {exc}", file=err)
        return EXIT_DATA


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
