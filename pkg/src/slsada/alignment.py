"""Distribution alignment and clustering quantities.

The marginal and class-wise MMD matrices are rank one, ``M = e e^T`` with
``e`` holding ``1/n_s`` on source members and ``-1/n_t`` on target members,
so they are stored by their support and coefficients and never densified
unless asked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MmdMatrix:
    """Rank-one MMD matrix over ``n = n_s + n_t`` samples.

    ``class_id`` is 0 for the marginal matrix and ``c >= 1`` for class ``c``.
    An empty ``index`` means the class is missing from one domain this round
    and the matrix is zero.
    """

    n: int
    index: np.ndarray
    coef: np.ndarray
    class_id: int = 0

    @property
    def is_empty(self):
        return self.index.size == 0

    def vector(self):
        e = np.zeros(self.n)
        e[self.index] = self.coef
        return e

    def toarray(self):
        e = self.vector()
        return np.outer(e, e)

    def project(self, x):
        """``X e`` for a feature matrix ``x`` (m x n)."""
        return x[:, self.index] @ self.coef

    def gram(self, x):
        """``X M X^T``."""
        v = self.project(x)
        return np.outer(v, v)

    def loss(self, a, x):
        """``tr(A^T X M X^T A)``."""
        v = a.T @ self.project(x)
        return float(v @ v)


def build_m0(n_s, n_t):
    """Marginal MMD matrix."""
    if n_s < 1 or n_t < 1:
        raise ValueError("need n_s >= 1 and n_t >= 1")
    coef = np.concatenate([np.full(n_s, 1.0 / n_s), np.full(n_t, -1.0 / n_t)])
    return MmdMatrix(n_s + n_t, np.arange(n_s + n_t), coef, 0)


def build_mc(labels_s, labels_t, c):
    """Class-wise MMD matrix for class ``c`` (1-based) from hard labels.

    ``labels_s`` and ``labels_t`` hold 0-based class ids, so class ``c``
    matches the samples labeled ``c - 1``.
    """
    labels_s = np.asarray(labels_s)
    labels_t = np.asarray(labels_t)
    if c < 1:
        raise ValueError("class-wise matrices are indexed from 1")
    src = np.flatnonzero(labels_s == c - 1)
    tgt = np.flatnonzero(labels_t == c - 1)
    n = labels_s.size + labels_t.size
    if src.size == 0 or tgt.size == 0:
        return MmdMatrix(n, np.zeros(0, dtype=int), np.zeros(0), c)
    index = np.concatenate([src, labels_s.size + tgt])
    coef = np.concatenate([np.full(src.size, 1.0 / src.size),
                           np.full(tgt.size, -1.0 / tgt.size)])
    return MmdMatrix(n, index, coef, c)


def build_all_mc(labels_s, labels_t, n_classes):
    return [build_mc(labels_s, labels_t, c) for c in range(1, n_classes + 1)]


def marginal_mmd(a, xs, xt):
    """Squared distance between the projected domain means."""
    d = a.T @ (xs.mean(axis=1) - xt.mean(axis=1))
    return float(d @ d)


def centroid_map(f, eps=0.0):
    """``G = F (F^T F + eps I)^{-1}`` for a label matrix ``F`` (n x C).

    With ``eps = 0`` empty classes get a zero column instead of a division
    by zero.
    """
    f = np.asarray(f, dtype=float)
    gram = f.T @ f
    if eps > 0:
        return np.linalg.solve(gram + eps * np.eye(gram.shape[0]), f.T).T
    counts = np.diag(gram).copy()
    off = gram - np.diag(counts)
    if np.any(np.abs(off) > 0):
        return f @ np.linalg.pinv(gram)
    scale = np.zeros_like(counts)
    scale[counts > 0] = 1.0 / counts[counts > 0]
    return f * scale


def conditional_mmd_centroid_form(a, xs, xt, g_s, g_t):
    """``||A^T X_s G_s - A^T X_t G_t||_F^2``."""
    d = a.T @ (xs @ g_s - xt @ g_t)
    return float(np.sum(d * d))


def conditional_mmd(a, x, mcs):
    """``sum_c tr(A^T X M_c X^T A)`` over the given class-wise matrices."""
    return float(sum(m.loss(a, x) for m in mcs))


def intra_class_scatter(x, f):
    """Within-class scatter ``(X - X G F^T)(X - X G F^T)^T`` for hard ``F``."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    r = x - x @ centroid_map(f) @ f.T
    return r @ r.T


def projected_clustering_loss(a, x, g, f):
    """``||A^T X - A^T X G F^T||_F^2``."""
    z = a.T @ x
    r = z - (z @ g) @ f.T
    return float(np.sum(r * r))
