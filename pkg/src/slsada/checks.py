"""Quick numerical self-checks of the building blocks.

Each check draws small random instances, compares a library routine with a
direct computation and returns a :class:`CheckResult`. ``run_all`` is what
``slsada selfcheck`` prints.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import alignment, graph, solver
from .dataset import one_hot


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _labels_all_present(rng, n, c):
    y = rng.integers(0, c, n)
    y[:c] = np.arange(c)
    return rng.permutation(y)


def check_scatter_identity(n_instances=50, seed=0):
    """Clustering loss in the projection equals ``tr(A^T S_w A)``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        m, n, c = rng.integers(2, 20), rng.integers(5, 40), rng.integers(1, 5)
        k = rng.integers(1, m + 1)
        x = rng.standard_normal((m, n))
        a = rng.standard_normal((m, k))
        f = one_hot(_labels_all_present(rng, n, c), c)
        g = alignment.centroid_map(f)
        lhs = alignment.projected_clustering_loss(a, x, g, f)
        rhs = float(np.trace(a.T @ alignment.intra_class_scatter(x, f) @ a))
        worst = max(worst, _rel(lhs, rhs))
    return CheckResult("scatter identity", worst < 1e-8, f"max rel err {worst:.2e}")


def check_centroid_form(n_instances=50, seed=1):
    """Class-wise MMD sum equals the centroid-difference norm."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        m, c = rng.integers(2, 20), rng.integers(1, 5)
        n_s, n_t = rng.integers(c + 1, 30), rng.integers(c + 1, 30)
        ys, yt = _labels_all_present(rng, n_s, c), _labels_all_present(rng, n_t, c)
        xs, xt = rng.standard_normal((m, n_s)), rng.standard_normal((m, n_t))
        a = rng.standard_normal((m, rng.integers(1, m + 1)))
        mcs = alignment.build_all_mc(ys, yt, c)
        lhs = alignment.conditional_mmd(a, np.hstack([xs, xt]), mcs)
        rhs = alignment.conditional_mmd_centroid_form(
            a, xs, xt, alignment.centroid_map(one_hot(ys, c)),
            alignment.centroid_map(one_hot(yt, c)))
        worst = max(worst, _rel(lhs, rhs))
    return CheckResult("centroid form", worst < 1e-8, f"max rel err {worst:.2e}")


def check_mmd_matrices(n_instances=50, seed=2):
    """Zero row sums, rank one and agreement with the mean difference."""
    rng = np.random.default_rng(seed)
    worst_row = worst_eig = worst_loss = 0.0
    for _ in range(n_instances):
        n_s, n_t, m = rng.integers(1, 25), rng.integers(1, 25), rng.integers(1, 10)
        xs, xt = rng.standard_normal((m, n_s)), rng.standard_normal((m, n_t))
        a = rng.standard_normal((m, rng.integers(1, m + 1)))
        m0 = alignment.build_m0(n_s, n_t)
        dense = m0.toarray()
        worst_row = max(worst_row, np.abs(dense.sum(axis=1)).max())
        ev = np.sort(np.abs(np.linalg.eigvalsh(dense)))
        if ev.size > 1:
            worst_eig = max(worst_eig, ev[-2])
        direct = np.sum((a.T @ (xs.mean(axis=1) - xt.mean(axis=1))) ** 2)
        worst_loss = max(worst_loss, abs(m0.loss(a, np.hstack([xs, xt])) - direct))
    ok = bool(worst_row < 1e-12 and worst_eig < 1e-10 and worst_loss < 1e-10)
    return CheckResult("MMD matrices", ok,
                       f"row sum {worst_row:.1e}, 2nd eig {worst_eig:.1e}, "
                       f"loss diff {worst_loss:.1e}")


def random_laplacian(rng, n, n_source, n_labeled, neighbors=5):
    points = rng.standard_normal((3, n))
    g = graph.build_knn_graph(points, min(neighbors, n - 1))
    return graph.build_laplacian(g, n_source, n_labeled)


def check_propagation(n_instances=20, seed=3):
    """Harmonic solution has zero Laplacian residual on unlabeled nodes."""
    rng = np.random.default_rng(seed)
    worst_res = worst_diff = 0.0
    for _ in range(n_instances):
        n, c = rng.integers(20, 120), rng.integers(2, 5)
        n_l = rng.integers(c, n // 2)
        lap = random_laplacian(rng, n, n, n_l)
        y = one_hot(rng.integers(0, c, n_l), c)
        fu = graph.propagate_labels(lap.ss_uu, lap.ss_ul, y)
        f = np.vstack([y, fu])
        worst_res = max(worst_res, np.abs((lap.full @ f)[n_l:]).max())
        dense = np.linalg.solve(lap.ss_uu.toarray(), -lap.ss_ul.toarray() @ y)
        worst_diff = max(worst_diff, np.abs(dense - fu).max())
    ok = bool(worst_res < 1e-8 and worst_diff < 1e-8)
    return CheckResult("harmonic propagation", ok,
                       f"residual {worst_res:.1e}, dense diff {worst_diff:.1e}")


def random_problem(rng, k=None, n_s=None, n_t=None, c=None):
    """Random positive state for exercising the multiplicative updates."""
    c = c or int(rng.integers(2, 4))
    n_s = n_s or int(rng.integers(10, 25))
    n_t = n_t or int(rng.integers(10, 25))
    k = k or int(rng.integers(1, 4))
    n_l = int(rng.integers(c, n_s - 2))
    z_s, z_t = rng.standard_normal((k, n_s)), rng.standard_normal((k, n_t))
    f_s = np.vstack([one_hot(rng.integers(0, c, n_l), c),
                     rng.uniform(0.01, 1, (n_s - n_l, c))])
    return dict(
        z_s=z_s, z_t=z_t, n_labeled=n_l, f_s=f_s,
        f_t=rng.uniform(0.01, 1, (n_t, c)),
        g_s=rng.uniform(0.01, 1, (n_s, c)) / n_s,
        g_t=rng.uniform(0.01, 1, (n_t, c)) / n_t,
        lap=random_laplacian(rng, n_s + n_t, n_s, n_l),
        gamma=float(rng.choice([0.0, 0.01, 0.1, 1.0])),
    )


def _descends(values, slack):
    return bool(np.all(np.diff(values) <= slack * np.maximum(1.0, np.abs(values[:-1]))))


def descent_traces(p, steps=50):
    """Sub-objective values over ``steps`` repeats of each update in isolation."""
    gs, gt, fs, ft = p["g_s"], p["g_t"], p["f_s"], p["f_t"]
    zs, zt, n_l, lap, gam = p["z_s"], p["z_t"], p["n_labeled"], p["lap"], p["gamma"]
    traces = {name: [] for name in ("G_s", "G_t", "F_s^u", "F_t")}
    g, h = gs, gt
    for _ in range(steps + 1):
        traces["G_s"].append(solver.gs_objective(zs, zt, g, gt, fs, gam))
        g = solver.update_gs(zs, zt, g, gt, fs, gam)
        traces["G_t"].append(solver.gt_objective(zs, zt, gs, h, ft, gam))
        h = solver.update_gt(zs, zt, gs, h, ft, gam)
    f = fs
    for _ in range(steps + 1):
        traces["F_s^u"].append(solver.fsu_full_objective(zs, gs, f, ft, n_l, lap, gam))
        f = solver.update_fsu(zs, gs, f, n_l, lap, gam, f_t=ft)
    f = ft
    for _ in range(steps + 1):
        traces["F_t"].append(solver.ft_objective(zt, gt, f, fs, lap, gam))
        f = solver.update_ft(zt, gt, f, fs, lap, gam)
    return traces


def check_descent(n_instances=20, steps=50, seed=4):
    """Every multiplicative update is non-increasing on its sub-objective."""
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(n_instances):
        for name, trace in descent_traces(random_problem(rng), steps).items():
            if not _descends(np.asarray(trace), 1e-8):
                failures.append(f"{name}#{i}")
    return CheckResult("multiplicative descent", not failures,
                       "all non-increasing" if not failures else "rises: " + ", ".join(failures))


def check_unsplit_target_rule(n_instances=20, seed=5):
    """The unsplit target-label rule leaves ``F_t`` unchanged."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        p = random_problem(rng)
        new = solver.update_ft(p["z_t"], p["g_t"], p["f_t"], p["f_s"], p["lap"], p["gamma"],
                               rule="unsplit")
        worst = max(worst, np.abs(new / p["f_t"] - 1).max())
    return CheckResult("unsplit target rule is a no-op", worst < 1e-12,
                       f"max rel change {worst:.1e}")


def check_eigen_step(n_instances=20, seed=6):
    """Whitening constraint holds and the objective is the eigenvalue sum."""
    rng = np.random.default_rng(seed)
    worst_c = worst_o = 0.0
    for _ in range(n_instances):
        m = int(rng.integers(2, 15))
        n = int(rng.integers(m + 1, 40))
        k = int(rng.integers(1, m + 1))
        x = rng.standard_normal((m, n))
        b = rng.standard_normal((m, m))
        kms = b @ b.T + 0.1 * np.eye(m)
        proj = solver.solve_projection(kms, x, k)
        a = proj.values
        worst_c = max(worst_c, solver.constraint_residual(a, x))
        oracle = scipy.linalg.eigh(kms, x @ x.T, eigvals_only=True)[:k].sum()
        worst_o = max(worst_o, _rel(float(np.trace(a.T @ kms @ a)), oracle))
    ok = bool(worst_c < 1e-6 and worst_o < 1e-8)
    return CheckResult("eigen-step", ok, f"constraint {worst_c:.1e}, objective {worst_o:.1e}")


CHECKS = (check_scatter_identity, check_centroid_form, check_mmd_matrices,
          check_propagation, check_descent, check_unsplit_target_rule, check_eigen_step)


def run_all():
    return [check() for check in CHECKS]
