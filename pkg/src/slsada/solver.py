"""Alternating optimization: an eigen-step for the projection and
nonnegative multiplicative updates for centroid maps and soft labels.

Sample order everywhere is ``[source labeled, source unlabeled, target]``.
Gradient splits use magnitudes: ``T = T+ - T-`` with ``T+ = positive_part(T)``
and ``T- = -negative_part(T)``, both entrywise nonnegative.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import alignment, graph
from .dataset import DomainPair, hard_labels, one_hot

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A step of the alternating optimization failed."""


class NumericalError(SolverError):
    pass


# ---------------------------------------------------------------------------
# configuration

GRAPH_SCHEDULES = ("guarded", "rebuild", "frozen")

PRESETS = {
    "small": dict(k=20, lam=0.05),
    "large": dict(k=100, lam=0.1),
}


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of one adaptation run.

    ``lam`` is the scale regularizer on ``||A||_F^2``; ``gamma`` weighs the
    projected-clustering loss. ``use_conditional=False`` drops the
    class-wise MMD terms (ablation). The defaults (soft eigen-step, guarded
    graph rebuild, no centroid reset) keep the recorded objective
    non-increasing; see :func:`run_slsada` for the alternatives.
    """

    k: int = 20
    gamma: float = 0.01
    lam: float = 0.05
    iterations: int = 5
    inner_updates: int = 1
    neighbor_count: int = 20
    epsilon: float = 1e-12
    floor: float = 1e-15
    graph_schedule: str = "guarded"
    bandwidth: float | None = None
    use_conditional: bool = True
    ft_rule: str = "split"
    fsu_rule: str = "coupled"
    projection_step: str = "soft"
    reset_centroids: bool = False
    normalize: bool = False
    seed: int = 0

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.inner_updates < 1:
            raise ValueError("inner_updates must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.graph_schedule not in GRAPH_SCHEDULES:
            raise ValueError(f"graph_schedule must be one of {GRAPH_SCHEDULES}")
        if self.ft_rule not in ("split", "unsplit"):
            raise ValueError("ft_rule must be 'split' or 'unsplit'")
        if self.fsu_rule not in ("coupled", "uncoupled"):
            raise ValueError("fsu_rule must be 'coupled' or 'uncoupled'")
        if self.projection_step not in ("hard", "soft"):
            raise ValueError("projection_step must be 'hard' or 'soft'")
        if self.neighbor_count < 1:
            raise ValueError("neighbor_count must be >= 1")

    def check_dims(self, m):
        if self.k > m:
            raise ValueError(f"subspace dimension k={self.k} exceeds feature dimension m={m}")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# sign split

def positive_part(t):
    """Copy of ``t`` with negative entries set to 0."""
    if sp.issparse(t):
        return t.maximum(0)
    return np.maximum(t, 0)


def negative_part(t):
    """Copy of ``t`` with positive entries set to 0 (so entries are <= 0)."""
    if sp.issparse(t):
        return t.minimum(0)
    return np.minimum(t, 0)


def _split(t):
    """``(T+, T-)`` magnitudes."""
    return positive_part(t), -negative_part(t)


def _ratio_update(value, num, den, eps, name):
    num = np.asarray(num)
    den = np.asarray(den)
    ratio = (num + eps) / (den + eps)
    bad = ~np.isfinite(ratio) | (ratio < 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise NumericalError(
            f"{name} update has invalid ratio at ({i}, {j}): num={num[i, j]!r}, "
            f"den={den[i, j]!r}, epsilon={eps!r}")
    return value * np.sqrt(ratio)


# ---------------------------------------------------------------------------
# eigen-step

@dataclass(frozen=True)
class Projection:
    """Projection ``A`` (m x k) with ``A^T X X^T A = I_k``."""

    values: np.ndarray
    eigenvalues: np.ndarray

    @property
    def subspace_dim(self):
        return self.values.shape[1]

    def embed(self, x):
        return self.values.T @ x


class RangeBasis:
    """Orthonormal basis of the column space of ``X`` with singular values.

    Every matrix the solver minimizes over has the form ``X P X^T + lam I``.
    Components of ``A`` orthogonal to the range of ``X`` then add
    ``lam ||.||^2`` to the objective and nothing to ``A^T X X^T A``, so the
    constrained minimizer never uses them. Working here keeps the pencil
    definite even when ``m > n``.
    """

    def __init__(self, x, rtol=None):
        u, s, _ = np.linalg.svd(np.asarray(x, dtype=float), full_matrices=False)
        if rtol is None:
            rtol = max(x.shape) * np.finfo(float).eps
        keep = s > rtol * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
        self.u = u[:, keep]
        self.s = s[keep]
        self.rank = int(keep.sum())
        self.m = x.shape[0]

    @property
    def condition(self):
        return float((self.s[0] / self.s[-1]) ** 2) if self.rank else np.inf


def solve_projection(k_ms, x, k, basis=None):
    """Smallest-``k`` solution of ``min tr(A^T K A)`` s.t. ``A^T X X^T A = I``.

    Equivalent to the symmetric pencil ``K a = mu X X^T a`` restricted to the
    range of ``X``; the objective at the optimum is the sum of the ``k``
    smallest generalized eigenvalues.
    """
    if basis is None:
        basis = RangeBasis(x)
    if k > basis.rank:
        raise NumericalError(
            f"k={k} exceeds rank of X ({basis.rank}); the constraint cannot be met")
    w = basis.u / basis.s
    h = w.T @ k_ms @ w
    h = 0.5 * (h + h.T)
    try:
        mu, v = scipy.linalg.eigh(h, subset_by_index=[0, k - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(
            f"eigen-solver failed ({exc}); cond(X X^T) = {basis.condition:.3e}") from None
    return Projection(w @ v, mu)


def assemble_kms(x, mmds, sw_source, sw_target, gamma, lam):
    """``sum_c X M_c X^T + gamma (S_w^s + S_w^t) + lam I``."""
    m = x.shape[0]
    k = lam * np.eye(m)
    for mat in mmds:
        if not mat.is_empty:
            k += mat.gram(x)
    if gamma:
        k += gamma * (sw_source + sw_target)
    return 0.5 * (k + k.T)


def soft_kms(xs, xt, g_s, g_t, f_s, f_t, m0, gamma, lam, use_conditional=True):
    """Quadratic form of the full objective in ``A`` at soft ``(G, F)``.

    Coincides with :func:`assemble_kms` built from hard labels when ``F`` is
    one-hot and ``G`` its centroid map.
    """
    x = np.hstack([xs, xt])
    k = lam * np.eye(x.shape[0]) + m0.gram(x)
    if use_conditional:
        d = xs @ g_s - xt @ g_t
        k += d @ d.T
    if gamma:
        r_s = xs - (xs @ g_s) @ f_s.T
        r_t = xt - (xt @ g_t) @ f_t.T
        k += gamma * (r_s @ r_s.T + r_t @ r_t.T)
    return 0.5 * (k + k.T)


def constraint_residual(a, x):
    z = a.T @ x
    return float(np.linalg.norm(z @ z.T - np.eye(a.shape[1])))


# ---------------------------------------------------------------------------
# multiplicative updates and their sub-objectives

def gs_objective(z_s, z_t, g_s, g_t, f_s, gamma):
    """Centroid alignment plus source clustering, as a function of ``G_s``."""
    d = z_s @ g_s - z_t @ g_t
    r = z_s - (z_s @ g_s) @ f_s.T
    return float(np.sum(d * d) + gamma * np.sum(r * r))


def gt_objective(z_s, z_t, g_s, g_t, f_t, gamma):
    return gs_objective(z_t, z_s, g_t, g_s, f_t, gamma)


def update_gs(z_s, z_t, g_s, g_t, f_s, gamma, eps=1e-12):
    """One multiplicative step on the source centroid map.

    ``z_s``, ``z_t`` are the embedded domains (k x n_s, k x n_t).
    """
    t1p, t1m = _split(z_s.T @ z_s)
    t2p, t2m = _split(z_s.T @ z_t)
    t3 = f_s.T @ f_s
    num = t2p @ g_t + gamma * (t1p @ f_s) + t1m @ g_s + gamma * (t1m @ g_s @ t3)
    den = t2m @ g_t + gamma * (t1m @ f_s) + t1p @ g_s + gamma * (t1p @ g_s @ t3)
    return _ratio_update(g_s, num, den, eps, "G_s")


def update_gt(z_s, z_t, g_s, g_t, f_t, gamma, eps=1e-12):
    """Target counterpart of :func:`update_gs` (domains swapped)."""
    return update_gs(z_t, z_s, g_t, g_s, f_t, gamma, eps)


def lp_source_term(f_s, n_labeled, lap):
    y, fu = f_s[:n_labeled], f_s[n_labeled:]
    return float(np.sum(fu * (lap.ss_uu @ fu)) + 2.0 * np.sum(fu * (lap.ss_ul @ y)))


def lp_target_term(f_t, f_s, lap):
    return float(np.sum(f_t * (lap.tt @ f_t)) + 2.0 * np.sum(f_t * (lap.ts @ f_s)))


def fsu_objective(z_s, g_s, f_s, n_labeled, lap, gamma):
    """Sub-objective in the unlabeled source labels."""
    zc = z_s @ g_s
    r = z_s[:, n_labeled:] - zc @ f_s[n_labeled:].T
    return float(gamma * np.sum(r * r) + lp_source_term(f_s, n_labeled, lap))


def ft_objective(z_t, g_t, f_t, f_s, lap, gamma):
    """All terms of the full objective that involve ``F_t``."""
    r = z_t - (z_t @ g_t) @ f_t.T
    return float(gamma * np.sum(r * r) + lp_target_term(f_t, f_s, lap))


def fsu_full_objective(z_s, g_s, f_s, f_t, n_labeled, lap, gamma):
    """:func:`fsu_objective` plus the target coupling ``2 tr(F_t^T L_ts F_s)``."""
    return (fsu_objective(z_s, g_s, f_s, n_labeled, lap, gamma)
            + 2.0 * float(np.sum(f_t * (lap.ts @ f_s))))


def update_fsu(z_s, g_s, f_s, n_labeled, lap, gamma, eps=1e-12, f_t=None):
    """Multiplicative step on the unlabeled source rows of ``F_s``.

    Without ``f_t`` this descends :func:`fsu_objective`, which ignores that
    the unlabeled source rows also enter the source-target graph term. With
    ``f_t`` the split gains ``L_ut F_t`` and the step descends
    :func:`fsu_full_objective`, i.e. the full objective in ``F_s^u``.
    The first ``n_labeled`` rows are returned unchanged.
    """
    y, fu = f_s[:n_labeled], f_s[n_labeled:]
    zc = z_s @ g_s
    k1p, k1m = _split(z_s[:, n_labeled:].T @ zc)
    k2p, k2m = _split(zc.T @ zc)
    luu_p, luu_m = _split(lap.ss_uu)
    lul_p, lul_m = _split(lap.ss_ul)
    num = gamma * k1p + gamma * (fu @ k2m) + luu_m @ fu + lul_m @ y
    den = gamma * k1m + gamma * (fu @ k2p) + luu_p @ fu + lul_p @ y
    if f_t is not None:
        lut_p, lut_m = _split(lap.st[n_labeled:])
        num = num + lut_m @ f_t
        den = den + lut_p @ f_t
    out = f_s.copy()
    out[n_labeled:] = _ratio_update(fu, num, den, eps, "F_s^u")
    return out


def update_ft(z_t, g_t, f_t, f_s, lap, gamma, eps=1e-12, rule="split"):
    """Multiplicative step on the target labels.

    ``rule="unsplit"`` uses the same expression for numerator and denominator
    and therefore never moves ``F_t``; it is kept for comparison.
    """
    zc = z_t @ g_t
    k3p, k3m = _split(z_t.T @ zc)
    k4p, k4m = _split(zc.T @ zc)
    ltt_p, ltt_m = _split(lap.tt)
    lts_p, lts_m = _split(lap.ts)
    num = gamma * k3p + gamma * (f_t @ k4m) + ltt_m @ f_t + lts_m @ f_s
    if rule == "unsplit":
        den = gamma * k3p + gamma * (f_t @ k4m) + ltt_m @ f_t + lts_m @ f_s
    elif rule == "split":
        den = gamma * k3m + gamma * (f_t @ k4p) + ltt_p @ f_t + lts_p @ f_s
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return _ratio_update(f_t, num, den, eps, "F_t")


def gs_gradient(z_s, z_t, g_s, g_t, f_s, gamma):
    """Half the gradient of :func:`gs_objective` with respect to ``G_s``."""
    t1 = z_s.T @ z_s
    return t1 @ g_s - z_s.T @ z_t @ g_t + gamma * (t1 @ g_s @ (f_s.T @ f_s)) - gamma * (t1 @ f_s)


# ---------------------------------------------------------------------------
# full objective

def objective_terms(a, xs, xt, g_s, g_t, f_s, f_t, n_labeled, lap, gamma, lam):
    """Every term of the overall objective at the given point."""
    z_s, z_t = a.T @ xs, a.T @ xt
    r_s = z_s - (z_s @ g_s) @ f_s.T
    r_t = z_t - (z_t @ g_t) @ f_t.T
    terms = {
        "clustering": float(np.sum(r_s * r_s) + np.sum(r_t * r_t)),
        "marginal": alignment.marginal_mmd(a, xs, xt),
        "conditional": alignment.conditional_mmd_centroid_form(a, xs, xt, g_s, g_t),
        "propagation": graph.laplacian_energy(lap, np.vstack([f_s, f_t])),
        "scale": float(lam * np.sum(a * a)),
    }
    terms["total"] = (gamma * terms["clustering"] + terms["marginal"] + terms["conditional"]
                      + terms["propagation"] + terms["scale"])
    return terms


# ---------------------------------------------------------------------------
# driver

@dataclass
class AdaptationState:
    projection: Projection
    g_s: np.ndarray
    g_t: np.ndarray
    f_s: np.ndarray
    f_t: np.ndarray
    n_labeled: int
    laplacian: graph.GraphLaplacian | None = None
    objective_trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    graph_accepted: list = field(default_factory=list)
    iteration: int = 0

    def labels(self):
        """Hard labels of all source samples and of the target."""
        return hard_labels(self.f_s), hard_labels(self.f_t)


class Prediction(NamedTuple):
    source_unlabeled: np.ndarray
    target: np.ndarray

    def source_full(self, pair):
        """Labels for every source sample, labeled ones clamped."""
        return np.concatenate([pair.labeled_classes, self.source_unlabeled])


def _floor(a, value):
    return np.maximum(a, value)


def _accuracies(pair, y_s, y_t):
    out = {}
    if pair.y_source is not None:
        out["acc_s"] = float(np.mean(y_s == pair.y_source))
    if pair.y_target is not None:
        out["acc_t"] = float(np.mean(y_t == pair.y_target))
    return out


def initialize(pair, config, basis=None):
    """Initialization: marginal-only projection followed by two rounds of
    label propagation (labeled -> unlabeled source, source -> target).

    ``pair`` must already be centered. Returns the projection and the soft
    labels ``(F_s, F_t)``.
    """
    xs, xt = pair.source, pair.target
    x = np.hstack([xs, xt])
    n_s, n_l, C = pair.n_source, pair.n_labeled, pair.n_classes
    if basis is None:
        basis = RangeBasis(x)
    m0 = alignment.build_m0(n_s, pair.n_target)
    k0 = assemble_kms(x, [m0], 0.0, 0.0, 0.0, config.lam)
    proj = solve_projection(k0, x, config.k, basis)
    z_s, z_t = proj.embed(xs), proj.embed(xt)

    y = pair.source_labels
    if n_l == 0:
        raise SolverError("at least one labeled source sample is required")
    if n_l < n_s:
        g_src = graph.build_knn_graph(z_s, min(config.neighbor_count, n_s - 1), config.bandwidth)
        lap_s = graph.build_laplacian(g_src, n_s, n_l)
        f_su = graph.propagate_labels(lap_s.ss_uu, lap_s.ss_ul, y)
    else:
        f_su = np.zeros((0, C))
    f_s = np.vstack([y, f_su])

    g_all = graph.build_knn_graph(np.hstack([z_s, z_t]), config.neighbor_count, config.bandwidth)
    lap = graph.build_laplacian(g_all, n_s, n_l)
    f_t = graph.propagate_labels(lap.tt, lap.ts, f_s)
    return proj, f_s, f_t, lap


def run_slsada(pair: DomainPair, config: SolverConfig = SolverConfig(),
               callback: Callable[[dict], None] | None = None):
    """Run the full adaptation on ``pair``.

    The pair is centered jointly (idempotent if it already is). Each outer
    iteration solves the eigen-step, rebuilds the kNN graph on the new
    embedding and applies ``inner_updates`` rounds of the four
    multiplicative updates.

    ``projection_step="hard"`` builds the scatter and class-wise MMD
    matrices from the current hard labels; ``"soft"`` uses the current
    ``G`` and ``F`` directly, which makes the eigen-step an exact minimizer
    of the full objective. ``graph_schedule="guarded"`` keeps the rebuilt
    graph only when it ends the iteration at a lower objective than the
    current graph; ``"rebuild"`` always takes it and ``"frozen"`` never
    rebuilds. ``reset_centroids`` reinitializes ``G`` from the hard labels
    before the updates.

    Returns
    -------
    state : AdaptationState
    prediction : Prediction
        Hard labels for the unlabeled source samples and the target.
    """
    config.check_dims(pair.dim)
    pair = pair.centered(normalize=config.normalize)
    xs, xt = pair.source, pair.target
    x = np.hstack([xs, xt])
    n_s, n_l, C = pair.n_source, pair.n_labeled, pair.n_classes
    gamma, eps = config.gamma, config.epsilon
    basis = RangeBasis(x)

    try:
        proj, f_s, f_t, lap = initialize(pair, config, basis)
    except (SolverError, graph.PropagationError, ValueError) as exc:
        raise SolverError(f"initialization: {exc}") from exc
    y = f_s[:n_l].copy()
    f_s = np.vstack([y, _floor(f_s[n_l:], config.floor)])
    f_t = _floor(f_t, config.floor)
    g_s = _floor(alignment.centroid_map(one_hot(hard_labels(f_s), C), eps), config.floor)
    g_t = _floor(alignment.centroid_map(one_hot(hard_labels(f_t), C), eps), config.floor)
    state = AdaptationState(proj, g_s, g_t, f_s, f_t, n_l, lap)
    m0 = alignment.build_m0(n_s, pair.n_target)

    for t in range(1, config.iterations + 1):
        try:
            _outer_step(state, pair, x, basis, m0, config)
        except (SolverError, graph.PropagationError, ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"iteration {t}: {exc}") from exc
        state.iteration = t
        a = state.projection.values
        terms = objective_terms(a, xs, xt, state.g_s, state.g_t, state.f_s, state.f_t,
                                n_l, state.laplacian, gamma, config.lam)
        state.objective_trace.append(terms["total"])
        y_s, y_t = state.labels()
        record = {"iteration": t, "objective": terms["total"],
                  "eigen_objective": float(np.sum(state.projection.eigenvalues)),
                  "constraint_residual": constraint_residual(a, x),
                  **{f"term_{k}": v for k, v in terms.items() if k != "total"},
                  **_accuracies(pair, y_s, y_t)}
        state.history.append(record)
        logger.debug("iteration %d: %s", t, record)
        if callback is not None:
            callback(record)

    y_s, y_t = state.labels()
    return state, Prediction(y_s[n_l:], y_t)


def _outer_step(state, pair, x, basis, m0, config):
    xs, xt = pair.source, pair.target
    n_s, n_l, C = pair.n_source, pair.n_labeled, pair.n_classes
    gamma, eps = config.gamma, config.epsilon
    y = state.f_s[:n_l]

    ys_hard, yt_hard = state.labels()
    ys_hard[:n_l] = hard_labels(y)
    fs_hard, ft_hard = one_hot(ys_hard, C), one_hot(yt_hard, C)
    if config.projection_step == "hard":
        sw_s = alignment.intra_class_scatter(xs, fs_hard)
        sw_t = alignment.intra_class_scatter(xt, ft_hard)
        mmds = [m0]
        if config.use_conditional:
            mmds += alignment.build_all_mc(ys_hard, yt_hard, C)
        k_ms = assemble_kms(x, mmds, sw_s, sw_t, gamma, config.lam)
    else:
        k_ms = soft_kms(xs, xt, state.g_s, state.g_t, state.f_s, state.f_t, m0, gamma,
                        config.lam, config.use_conditional)
    state.projection = solve_projection(k_ms, x, config.k, basis)
    z_s, z_t = state.projection.embed(xs), state.projection.embed(xt)

    if config.reset_centroids:
        state.g_s = _floor(alignment.centroid_map(fs_hard, eps), config.floor)
        state.g_t = _floor(alignment.centroid_map(ft_hard, eps), config.floor)
    f_t_coupling = config.fsu_rule == "coupled"

    def inner(lap):
        g_s, g_t, f_s, f_t = state.g_s, state.g_t, state.f_s, state.f_t
        for _ in range(config.inner_updates):
            g_s = update_gs(z_s, z_t, g_s, g_t, f_s, gamma, eps)
            g_t = update_gt(z_s, z_t, g_s, g_t, f_t, gamma, eps)
            f_s = update_fsu(z_s, g_s, f_s, n_l, lap, gamma, eps,
                             f_t=f_t if f_t_coupling else None)
            f_t = update_ft(z_t, g_t, f_t, f_s, lap, gamma, eps, rule=config.ft_rule)
        return g_s, g_t, f_s, f_t

    if config.graph_schedule == "frozen":
        lap, result = state.laplacian, inner(state.laplacian)
        accept = None
    else:
        g = graph.build_knn_graph(np.hstack([z_s, z_t]), config.neighbor_count,
                                  config.bandwidth)
        lap = graph.build_laplacian(g, n_s, n_l)
        result = inner(lap)
        accept = True
        if config.graph_schedule == "guarded":
            # keep the rebuilt graph only if it ends the step no higher than
            # the current one would have
            kept = inner(state.laplacian)
            a = state.projection.values

            def total(lap_, r):
                return objective_terms(a, xs, xt, *r, n_l, lap_, gamma, config.lam)["total"]

            accept = total(lap, result) <= total(state.laplacian, kept)
            if not accept:
                lap, result = state.laplacian, kept
        state.graph_accepted.append(accept)
    state.laplacian = lap
    state.g_s, state.g_t, state.f_s, state.f_t = result


def with_overrides(config, **kw):
    return replace(config, **kw)
