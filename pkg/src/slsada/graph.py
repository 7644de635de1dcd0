"""kNN similarity graph, block-partitioned Laplacian and harmonic label
propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimilarityGraph:
    weights: sp.csr_matrix
    neighbor_count: int
    bandwidth: float

    @property
    def n(self):
        return self.weights.shape[0]


def _knn(points, k):
    """Indices and distances of the ``k`` nearest other points (rows)."""
    tree = cKDTree(points)
    dist, idx = tree.query(points, k=k + 1)
    n = points.shape[0]
    own = idx == np.arange(n)[:, None]
    # with duplicate points the query row itself may land anywhere in the
    # result (or be pushed out); drop it if present, else the farthest hit
    missing = ~own.any(axis=1)
    own[missing, -1] = True
    keep = ~own
    return idx[keep].reshape(n, k), dist[keep].reshape(n, k)


def build_knn_graph(z, neighbor_count=20, bandwidth=None):
    """Heat-kernel kNN graph over the columns of ``z``.

    Each sample is joined to its ``neighbor_count`` nearest neighbours in
    Euclidean distance with weight ``exp(-d^2 / (2 sigma^2))``; ``sigma``
    defaults to the median neighbour distance. The result is symmetrized
    with an elementwise max.
    """
    z = np.asarray(z, dtype=float)
    if neighbor_count <= 0:
        raise ValueError("neighbor_count must be positive")
    n = z.shape[1]
    if n <= neighbor_count:
        raise ValueError(f"need more than {neighbor_count} samples, got {n}")
    idx, dist = _knn(z.T, neighbor_count)
    if bandwidth is None:
        bandwidth = float(np.median(dist))
        if bandwidth <= 0:
            bandwidth = 1.0
    elif not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    w = np.exp(-dist**2 / (2.0 * bandwidth**2))
    rows = np.repeat(np.arange(n), neighbor_count)
    knn = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
    weights = knn.maximum(knn.T).tocsr()
    weights.setdiag(0)
    weights.eliminate_zeros()
    return SimilarityGraph(weights, int(neighbor_count), bandwidth)


@dataclass(frozen=True)
class GraphLaplacian:
    """``L = D - W`` with the source/target and labeled/unlabeled blocks.

    Sample order is ``[source labeled, source unlabeled, target]``.
    """

    full: sp.csr_matrix
    n_source: int
    n_labeled: int

    @property
    def n(self):
        return self.full.shape[0]

    def _block(self, rows, cols):
        return self.full[rows][:, cols]

    @property
    def ss(self):
        s = slice(0, self.n_source)
        return self._block(s, s)

    @property
    def st(self):
        return self._block(slice(0, self.n_source), slice(self.n_source, None))

    @property
    def ts(self):
        return self._block(slice(self.n_source, None), slice(0, self.n_source))

    @property
    def tt(self):
        t = slice(self.n_source, None)
        return self._block(t, t)

    @property
    def ss_ll(self):
        l = slice(0, self.n_labeled)
        return self._block(l, l)

    @property
    def ss_lu(self):
        return self._block(slice(0, self.n_labeled), slice(self.n_labeled, self.n_source))

    @property
    def ss_ul(self):
        return self._block(slice(self.n_labeled, self.n_source), slice(0, self.n_labeled))

    @property
    def ss_uu(self):
        u = slice(self.n_labeled, self.n_source)
        return self._block(u, u)


def build_laplacian(graph, n_source, n_labeled):
    """Laplacian of ``graph`` with block views for the given partition.

    ``D`` holds the column sums of ``W``.
    """
    w = graph.weights if isinstance(graph, SimilarityGraph) else sp.csr_matrix(graph)
    n = w.shape[0]
    if w.shape != (n, n):
        raise ValueError("weight matrix must be square")
    if not 0 <= n_labeled <= n_source <= n:
        raise ValueError(
            f"inconsistent partition: n_labeled={n_labeled}, n_source={n_source}, n={n}")
    degree = np.asarray(w.sum(axis=0)).ravel()
    lap = (sp.diags(degree) - w).tocsr()
    return GraphLaplacian(lap, int(n_source), int(n_labeled))


def laplacian_energy(lap, f):
    """``tr(F^T L F)``; equals ``1/2 sum_ij W_ij ||F_i - F_j||^2``."""
    f = np.asarray(f)
    full = lap.full if isinstance(lap, GraphLaplacian) else lap
    return float(np.sum(f * (full @ f)))


def propagate_labels(l_uu, l_ul, labeled):
    """Harmonic extension of ``labeled`` onto the unlabeled nodes.

    Solves ``L_uu F_u = -L_ul Y_l``. Connected parts of the unlabeled
    subgraph with no edge to a labeled node make ``L_uu`` singular; they are
    left out of the solve and get all-zero rows (the limit of a vanishing
    ridge). The remaining system is solved exactly.

    Returns
    -------
    F_u : ndarray (n_u, C)
        Soft labels; take the row argmax for hard labels.
    """
    l_uu = sp.csc_matrix(l_uu)
    l_ul = sp.csr_matrix(l_ul)
    y = np.asarray(labeled, dtype=float)
    n_u = l_uu.shape[0]
    if l_uu.shape != (n_u, n_u) or l_ul.shape != (n_u, y.shape[0]):
        raise ValueError("block shapes do not match the labeled matrix")
    f = np.zeros((n_u, y.shape[1]))
    if n_u == 0:
        return f
    rhs = -(l_ul @ y)

    # components of the unlabeled subgraph that touch no labeled node
    adj = l_uu.copy()
    adj.setdiag(0)
    _, comp = connected_components(adj != 0, directed=False)
    anchored = np.zeros(comp.max() + 1, dtype=bool)
    anchored[np.unique(comp[np.asarray(abs(l_ul).sum(axis=1)).ravel() > 0])] = True
    keep = np.flatnonzero(anchored[comp])
    if keep.size == 0:
        return f
    system = l_uu[keep][:, keep].tocsc()
    try:
        f[keep] = splu(system).solve(rhs[keep])
    except RuntimeError as exc:
        raise PropagationError(
            f"unlabeled Laplacian block is singular ({exc}); check graph "
            "connectivity and edge weights") from None
    if not np.all(np.isfinite(f)):
        raise PropagationError(
            "harmonic solve produced non-finite labels; check graph connectivity "
            "and edge weights")
    return f
