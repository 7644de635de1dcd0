"""Evaluation protocol: accuracies, baselines, repeated runs, sweeps and
report files.

A repeat draws a fresh labeled source subset (seeded) and runs the solver
plus any requested baselines on the same data. Only the labeled subset
changes between repeats.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import alignment, graph
from .dataset import (DomainPair, ShiftSpec, generate_synthetic_pair, hard_labels,
                      one_hot, sample_labeled_subset)
from .solver import (Prediction, RangeBasis, SolverConfig, SolverError, assemble_kms,
                     run_slsada, solve_projection)

BASELINES = ("source_only", "tca_like", "jda_like", "propagation_only")
SWEEP_PARAMS = {"k": "k", "lambda": "lam", "lam": "lam", "gamma": "gamma",
                "iterations": "iterations", "T": "iterations",
                "per_class_labels": "per_class_labels"}


# ---------------------------------------------------------------------------
# metrics

def _source_predictions(predictions, pair):
    if isinstance(predictions, Prediction):
        predictions = predictions.source_unlabeled
    pred = np.asarray(predictions, dtype=int).ravel()
    if pred.size == pair.n_unlabeled:
        pred = np.concatenate([pair.labeled_classes, pred])
    elif pred.size == pair.n_source:
        # labeled samples are clamped to their given labels
        pred = pred.copy()
        pred[:pair.n_labeled] = pair.labeled_classes
    else:
        raise ValueError(
            f"expected {pair.n_unlabeled} or {pair.n_source} source predictions, got {pred.size}")
    return pred


def accuracy_s(predictions, pair):
    """Accuracy over all source samples, labeled ones counted as correct.

    ``predictions`` is a :class:`Prediction`, or labels in stored order for
    either the unlabeled source samples or the whole source domain.
    """
    if pair.y_source is None:
        raise ValueError("pair has no true source labels")
    return float(np.mean(_source_predictions(predictions, pair) == pair.y_source))


def accuracy_t(predictions, pair):
    """Accuracy over the target samples."""
    if pair.y_target is None:
        raise ValueError("pair has no true target labels")
    if isinstance(predictions, Prediction):
        predictions = predictions.target
    pred = np.asarray(predictions, dtype=int).ravel()
    if pred.size != pair.n_target:
        raise ValueError(f"expected {pair.n_target} target predictions, got {pred.size}")
    return float(np.mean(pred == pair.y_target))


# ---------------------------------------------------------------------------
# baselines

def _nearest_centroid(z_labeled, labels, n_classes, z):
    """Assign each column of ``z`` to the closest class mean of ``z_labeled``.

    Classes without labeled samples are never predicted.
    """
    f = one_hot(labels, n_classes)
    counts = f.sum(axis=0)
    means = z_labeled @ alignment.centroid_map(f)
    d = (np.sum(z**2, axis=0)[:, None] - 2 * z.T @ means
         + np.sum(means**2, axis=0)[None, :])
    d[:, counts == 0] = np.inf
    return np.argmin(d, axis=1)


def _nc_predict(pair, zs, zt):
    n_l = pair.n_labeled
    y = pair.labeled_classes
    return Prediction(_nearest_centroid(zs[:, :n_l], y, pair.n_classes, zs[:, n_l:]),
                      _nearest_centroid(zs[:, :n_l], y, pair.n_classes, zt))


def source_only(pair, config=None):
    """Nearest centroid of the labeled source samples in feature space."""
    return _nc_predict(pair, pair.source, pair.target)


def _projected(pair, config, mmds, basis):
    x = np.hstack([pair.source, pair.target])
    k_ms = assemble_kms(x, mmds, 0.0, 0.0, 0.0, config.lam)
    proj = solve_projection(k_ms, x, config.k, basis)
    return proj.embed(pair.source), proj.embed(pair.target)


def tca_like(pair, config=SolverConfig()):
    """Marginal-MMD projection followed by nearest centroid."""
    config.check_dims(pair.dim)
    pair = pair.centered(normalize=config.normalize)
    x = np.hstack([pair.source, pair.target])
    m0 = alignment.build_m0(pair.n_source, pair.n_target)
    zs, zt = _projected(pair, config, [m0], RangeBasis(x))
    return _nc_predict(pair, zs, zt)


def jda_like(pair, config=SolverConfig()):
    """Marginal plus class-wise MMD with nearest-centroid pseudo-labels.

    Starts from :func:`tca_like` and for ``config.iterations`` rounds
    rebuilds the class-wise matrices from the current pseudo-labels (labeled
    source samples keep their labels) and re-solves the projection. No
    clustering term and no graph.
    """
    config.check_dims(pair.dim)
    pair = pair.centered(normalize=config.normalize)
    x = np.hstack([pair.source, pair.target])
    basis = RangeBasis(x)
    m0 = alignment.build_m0(pair.n_source, pair.n_target)
    zs, zt = _projected(pair, config, [m0], basis)
    pred = _nc_predict(pair, zs, zt)
    for _ in range(config.iterations):
        ys = pred.source_full(pair)
        mcs = alignment.build_all_mc(ys, pred.target, pair.n_classes)
        zs, zt = _projected(pair, config, [m0, *mcs], basis)
        pred = _nc_predict(pair, zs, zt)
    return pred


def propagation_only(pair, config=SolverConfig()):
    """Initialization only: marginal projection and two label propagations."""
    _, pred = run_slsada(pair, replace(config, iterations=0))
    return pred


BASELINE_FUNCS = {"source_only": source_only, "tca_like": tca_like,
                  "jda_like": jda_like, "propagation_only": propagation_only}


# ---------------------------------------------------------------------------
# experiment spec and report

@dataclass(frozen=True)
class ExperimentSpec:
    """What to run.

    ``data`` is either a fully labeled :class:`DomainPair` (its labeled
    subset is ignored and redrawn per repeat) or a :class:`ShiftSpec`, which
    is sampled once with ``data_seed``. ``grid`` maps sweep parameter names
    (``k``, ``lambda``, ``gamma``, ``iterations``, ``per_class_labels``) to
    value lists.
    """

    data: DomainPair | ShiftSpec
    per_class_labels: int = 5
    repeats: int = 10
    solver: SolverConfig = SolverConfig()
    baselines: tuple = ()
    grid: dict | None = None
    seed: int = 0
    data_seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.per_class_labels < 1:
            raise ValueError("per_class_labels must be >= 1")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ValueError(f"unknown baselines {sorted(unknown)}; choose from {BASELINES}")
        if self.grid is not None:
            if not self.grid:
                raise ValueError("grid must not be empty")
            for name, values in self.grid.items():
                if name not in SWEEP_PARAMS:
                    raise ValueError(f"cannot sweep {name!r}; choose from {sorted(SWEEP_PARAMS)}")
                if len(values) == 0:
                    raise ValueError(f"grid for {name!r} is empty")

    def pair(self):
        if isinstance(self.data, ShiftSpec):
            return generate_synthetic_pair(self.data, self.data_seed)
        return self.data

    def repeat_seeds(self):
        """One labeled-subset seed per repeat, derived from ``seed``."""
        children = np.random.SeedSequence(self.seed).spawn(self.repeats)
        return [int(c.generate_state(1)[0]) for c in children]


def _stats(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std())


@dataclass
class RunReport:
    """Per-repeat results plus their mean and (population) std.

    ``repeats`` holds one dict per repeat, in repeat order. Failed repeats
    carry ``ok=False`` and the error text and are left out of the summary.
    """

    config: dict
    variants: dict
    repeats: list = field(default_factory=list)
    elapsed: float | None = None

    @property
    def complete(self):
        return all(r["ok"] for r in self.repeats)

    def methods(self):
        names = ["slsada"]
        for r in self.repeats:
            for name in r.get("baselines", {}):
                if name not in names:
                    names.append(name)
        return names

    def values(self, method="slsada", metric="acc_t"):
        out = []
        for r in self.repeats:
            if not r["ok"]:
                continue
            src = r if method == "slsada" else r["baselines"].get(method)
            if src is not None:
                out.append(src[metric])
        return out

    def summary(self):
        rows = {}
        for name in self.methods():
            mean_s, std_s = _stats(self.values(name, "acc_s"))
            mean_t, std_t = _stats(self.values(name, "acc_t"))
            rows[name] = {"mean_s": mean_s, "std_s": std_s, "mean_t": mean_t,
                          "std_t": std_t, "n": len(self.values(name, "acc_t"))}
        return rows

    def to_dict(self):
        out = {"config": self.config, "variants": self.variants,
               "repeats": self.repeats, "summary": self.summary(),
               "complete": self.complete}
        if self.elapsed is not None:
            out["elapsed"] = self.elapsed
        return out

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "mean_s", "std_s", "mean_t", "std_t", "n"])
            for name, row in self.summary().items():
                w.writerow([name, repr(row["mean_s"]), repr(row["std_s"]),
                            repr(row["mean_t"]), repr(row["std_t"]), row["n"]])


def update_variants(config):
    """The update-rule choices in effect, for the report."""
    return {
        "g_rule": "gradient split, negative over positive part",
        "fsu_rule": config.fsu_rule,
        "ft_rule": config.ft_rule,
        "projection_step": config.projection_step,
        "graph_schedule": config.graph_schedule,
        "reset_centroids": config.reset_centroids,
    }


def _worker_count(requested, jobs):
    n = requested
    if n is None:
        env = os.environ.get("SLSADA_THREADS")
        n = int(env) if env else 1
    return max(1, min(n, jobs))


def _one_repeat(base, seed, per_class, config, baselines, index):
    record = {"repeat": index, "seed": seed, "ok": True}
    try:
        labeled = sample_labeled_subset(base.original_y_source(), per_class, seed)
        pair = base.with_labeled(labeled)
        state, pred = run_slsada(pair, config)
        record.update(acc_s=accuracy_s(pred, pair), acc_t=accuracy_t(pred, pair),
                      objective_trace=[float(v) for v in state.objective_trace],
                      graph_accepted=list(state.graph_accepted))
        record["baselines"] = {}
        for name in baselines:
            bp = BASELINE_FUNCS[name](pair, config)
            record["baselines"][name] = {"acc_s": accuracy_s(bp, pair),
                                         "acc_t": accuracy_t(bp, pair)}
    except (SolverError, graph.PropagationError, ValueError, np.linalg.LinAlgError) as exc:
        record = {"repeat": index, "seed": seed, "ok": False,
                  "error": f"{type(exc).__name__}: {exc}"}
    return record


def run_protocol(spec, timing=False):
    """Run ``spec.repeats`` seeded repeats and collect a :class:`RunReport`.

    Repeats run on up to ``spec.threads`` worker threads (default: the
    ``SLSADA_THREADS`` environment variable, else 1); results are ordered
    by repeat index so the report does not depend on scheduling. Wall time
    is recorded only when ``timing`` is set, which keeps reports
    byte-identical across runs otherwise.
    """
    t0 = time.perf_counter()
    base = spec.pair()
    if base.y_source is None or base.y_target is None:
        raise ValueError("the protocol needs true labels for both domains")
    spec.solver.check_dims(base.dim)
    seeds = spec.repeat_seeds()
    jobs = [(base, s, spec.per_class_labels, spec.solver, spec.baselines, i)
            for i, s in enumerate(seeds)]
    workers = _worker_count(spec.threads, len(jobs))
    if workers == 1:
        records = [_one_repeat(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda job: _one_repeat(*job), jobs))
    config = {**spec.solver.to_dict(), "per_class_labels": spec.per_class_labels,
              "repeats": spec.repeats, "master_seed": spec.seed,
              "baselines": list(spec.baselines)}
    report = RunReport(config, update_variants(spec.solver), records)
    if timing:
        report.elapsed = time.perf_counter() - t0
    return report


def grid_points(grid):
    """Cartesian product of a parameter grid, in insertion order."""
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*grid.values())]


def _apply_point(spec, point):
    solver_kw = {SWEEP_PARAMS[k]: v for k, v in point.items()
                 if SWEEP_PARAMS[k] != "per_class_labels"}
    per_class = point.get("per_class_labels", spec.per_class_labels)
    return replace(spec, solver=replace(spec.solver, **solver_kw),
                   per_class_labels=int(per_class), grid=None)


def sweep(spec, csv_path=None):
    """One :class:`RunReport` per grid point.

    Every point is validated before anything runs, so a ``k`` larger than
    the feature dimension fails immediately. Returns a list of
    ``(point, report)``; with ``csv_path`` also writes rows of
    ``param, value, mean_s, std_s, mean_t, std_t`` (multi-parameter points
    join names and values with ``;``).
    """
    if not spec.grid:
        raise ValueError("sweep needs a non-empty grid")
    base = spec.pair()
    points = grid_points(spec.grid)
    specs = []
    for point in points:
        s = _apply_point(spec, point)
        s.solver.check_dims(base.dim)
        specs.append(replace(s, data=base))
    results = [(p, run_protocol(s)) for p, s in zip(points, specs)]
    if csv_path is not None:
        write_sweep_csv(results, csv_path)
    return results


def write_sweep_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "mean_s", "std_s", "mean_t", "std_t"])
        for point, report in results:
            row = report.summary()["slsada"]
            w.writerow([";".join(point), ";".join(repr(v) for v in point.values()),
                        repr(row["mean_s"]), repr(row["std_s"]),
                        repr(row["mean_t"]), repr(row["std_t"])])


# ---------------------------------------------------------------------------
# dumps

def embed_dump(state, pair, path, normalize=False):
    """Write the embedded samples as CSV.

    Columns are ``domain, true_label, predicted_label, z_1 .. z_k``; one row
    per source sample (stored order) then per target sample. Values use 15
    significant digits. Missing true labels are written as ``-1``.
    """
    centered = pair.centered(normalize=normalize)
    z_s = state.projection.embed(centered.source)
    z_t = state.projection.embed(centered.target)
    y_s, y_t = state.labels()
    k = z_s.shape[0]
    true_s = pair.y_source if pair.y_source is not None else np.full(pair.n_source, -1)
    true_t = pair.y_target if pair.y_target is not None else np.full(pair.n_target, -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", "true_label", "predicted_label"]
                   + [f"z_{i + 1}" for i in range(k)])
        for domain, z, truth, pred in (("source", z_s, true_s, y_s),
                                       ("target", z_t, true_t, y_t)):
            for j in range(z.shape[1]):
                w.writerow([domain, int(truth[j]), int(pred[j])]
                           + [format(v, ".15g") for v in z[:, j]])
    return Path(path)


def read_embed_dump(path):
    """Inverse of :func:`embed_dump`: ``(domains, true, predicted, Z)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    domains = [r[0] for r in body]
    true = np.array([int(r[1]) for r in body])
    pred = np.array([int(r[2]) for r in body])
    z = np.array([[float(v) for v in r[3:]] for r in body]).T
    return domains, true, pred, z


class TraceWriter:
    """Solver callback that appends each iteration record as a JSON line.

    >>> with TraceWriter("trace.jsonl") as cb:  # doctest: +SKIP
    ...     run_slsada(pair, config, callback=cb)
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fh = None

    def __enter__(self):
        self._fh = open(self.path, "w")
        return self

    def __exit__(self, *exc):
        self._fh.close()
        self._fh = None

    def __call__(self, record):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")


def hard_predictions(state):
    """Hard labels of ``state`` as a :class:`Prediction`."""
    y_s, y_t = state.labels()
    return Prediction(y_s[state.n_labeled:], y_t)


__all__ = ["accuracy_s", "accuracy_t", "source_only", "tca_like", "jda_like",
           "propagation_only", "ExperimentSpec", "RunReport", "run_protocol", "sweep",
           "grid_points", "embed_dump", "read_embed_dump", "TraceWriter",
           "hard_predictions", "BASELINES", "hard_labels"]
