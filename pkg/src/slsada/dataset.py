"""Source/target domain data: feature files, centering, labeled subsets and
synthetic drifted pairs.

Feature matrices are stored with samples as columns (``m x n``) throughout
the package.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FeatureFileError(ValueError):
    """Raised when a feature, label or index file cannot be parsed."""


def check_features(x, name="features"):
    """Return ``x`` as a finite 2-D float array, raising otherwise."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D (m x n), got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"{name} must have m >= 1 and n >= 1, got {x.shape}")
    bad = np.argwhere(~np.isfinite(x))
    if len(bad):
        i, j = bad[0]
        raise ValueError(f"{name} has non-finite value at ({i}, {j})")
    return x


def one_hot(labels, n_classes):
    """Hard label matrix (n x C) for an integer label vector."""
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    f = np.zeros((labels.size, n_classes))
    f[np.arange(labels.size), labels] = 1.0
    return f


def hard_labels(f):
    """Row argmax of a label matrix; ties go to the lowest class index."""
    return np.argmax(np.asarray(f), axis=1)


# ---------------------------------------------------------------------------
# file formats

def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "bin"):
            raise ValueError(f"unknown feature format {fmt!r}")
        return fmt
    return "bin" if Path(path).suffix.lower() in (".bin", ".raw") else "csv"


def load_features(path, fmt=None):
    """Read a feature matrix from a CSV or raw-binary file.

    CSV layout: first line ``m,n``, then ``m`` lines of ``n`` comma separated
    values (row ``i`` is feature ``i``). Binary layout: little-endian uint64
    ``m`` and ``n`` followed by ``m*n`` float64 values in row-major order.
    The format is taken from the extension (``.bin``/``.raw`` means binary)
    unless ``fmt`` is given.
    """
    fmt = _infer_format(path, fmt)
    if fmt == "bin":
        return _load_bin(path)
    return _load_csv(path)


def _load_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FeatureFileError(f"{path}: empty file")
    try:
        m, n = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise FeatureFileError(f"{path}: header must be 'm,n', got {lines[0]!r}") from None
    if m < 1 or n < 1:
        raise FeatureFileError(f"{path}: header dimensions must be positive")
    if len(lines) - 1 != m:
        raise FeatureFileError(f"{path}: header declares {m} rows, found {len(lines) - 1}")
    x = np.empty((m, n))
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != n:
            raise FeatureFileError(f"{path}: row {i} has {len(cells)} values, expected {n}")
        for j, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise FeatureFileError(f"{path}: cannot parse {cell!r} at ({i}, {j})") from None
            if not np.isfinite(v):
                raise FeatureFileError(f"{path}: non-finite value at ({i}, {j})")
            x[i, j] = v
    return x


def _load_bin(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FeatureFileError(f"{path}: truncated header")
    m, n = struct.unpack("<QQ", raw[:16])
    expected = 16 + 8 * m * n
    if len(raw) != expected:
        raise FeatureFileError(f"{path}: expected {expected} bytes for {m}x{n}, got {len(raw)}")
    x = np.frombuffer(raw, dtype="<f8", offset=16).reshape(m, n).astype(float)
    bad = np.argwhere(~np.isfinite(x))
    if len(bad):
        raise FeatureFileError(f"{path}: non-finite value at ({bad[0][0]}, {bad[0][1]})")
    return x


def save_features(x, path, fmt=None):
    """Write ``x`` in the format read by :func:`load_features` (lossless)."""
    x = check_features(x)
    fmt = _infer_format(path, fmt)
    m, n = x.shape
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(struct.pack("<QQ", m, n))
            fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())
        return
    with open(path, "w") as fh:
        fh.write(f"{m},{n}\n")
        for row in x.tolist():
            fh.write(",".join(repr(v) for v in row))
            fh.write("\n")


def load_labels(path):
    """One integer class id per line."""
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise FeatureFileError(f"{path}: line {i} is not an integer: {line!r}") from None
    return np.asarray(out, dtype=int)


def save_labels(labels, path):
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


load_indices = load_labels
save_indices = save_labels


# ---------------------------------------------------------------------------
# preprocessing

def center_features(x):
    """Subtract each feature row's mean."""
    x = check_features(x)
    return x - x.mean(axis=1, keepdims=True)


def normalize_samples(x):
    """Scale every column to unit L2 norm (zero columns are left alone)."""
    x = check_features(x)
    norms = np.linalg.norm(x, axis=0)
    norms[norms == 0] = 1.0
    return x / norms


def center_pair(xs, xt):
    """Center source and target jointly; returns the two centered blocks."""
    x = center_features(np.hstack([xs, xt]))
    return x[:, : xs.shape[1]], x[:, xs.shape[1]:]


def sample_labeled_subset(labels, per_class, seed):
    """Pick ``per_class`` random indices from every class.

    Returns a sorted index array of length ``per_class * C``. Classes are the
    distinct values of ``labels``.
    """
    labels = np.asarray(labels, dtype=int)
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < per_class:
            raise ValueError(
                f"class {c} has {members.size} samples, fewer than per_class={per_class}")
        picked.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(picked))


# ---------------------------------------------------------------------------
# domain pair

def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DomainPair:
    """A source/target pair with the labeled source samples stored first.

    ``source`` columns are the original source columns permuted by ``order``:
    column ``j`` of ``source`` is original sample ``order[j]``, and the first
    ``n_labeled`` columns are the labeled ones.  Use :meth:`to_original` to
    map per-source-sample outputs back to the input order.
    """

    source: np.ndarray
    target: np.ndarray
    n_labeled: int
    n_classes: int
    order: np.ndarray
    source_labels: np.ndarray = field(repr=False)
    y_source: np.ndarray | None = field(default=None, repr=False)
    y_target: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def build(cls, xs, xt, labeled_idx=(), labels=None, *, y_source=None,
              y_target=None, n_classes=None):
        """Validate inputs and reorder the source labeled-first.

        Parameters
        ----------
        xs, xt : array (m, n_s), (m, n_t)
        labeled_idx : sequence of int
            Indices (original order) of the labeled source samples.
        labels : array of int, optional
            Class ids of the labeled samples, aligned with ``labeled_idx``.
            Taken from ``y_source`` when omitted.
        y_source, y_target : array of int, optional
            Ground truth for evaluation only.
        n_classes : int, optional
            Defaults to one more than the largest label seen.
        """
        xs = check_features(xs, "source")
        xt = check_features(xt, "target")
        if xs.shape[0] != xt.shape[0]:
            raise ValueError(
                f"source and target feature dimensions differ: {xs.shape[0]} vs {xt.shape[0]}")
        n_s = xs.shape[1]
        idx = np.asarray(labeled_idx, dtype=int).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= n_s):
            raise ValueError(f"labeled indices must lie in [0, {n_s})")
        if np.unique(idx).size != idx.size:
            raise ValueError("labeled indices contain duplicates")
        if y_source is not None:
            y_source = np.asarray(y_source, dtype=int)
            if y_source.shape != (n_s,):
                raise ValueError("y_source length must equal the source sample count")
        if y_target is not None:
            y_target = np.asarray(y_target, dtype=int)
            if y_target.shape != (xt.shape[1],):
                raise ValueError("y_target length must equal the target sample count")
        if labels is None:
            if idx.size and y_source is None:
                raise ValueError("labels for the labeled indices are required")
            labels = y_source[idx] if idx.size else np.zeros(0, dtype=int)
        labels = np.asarray(labels, dtype=int)
        if labels.shape != idx.shape:
            raise ValueError("labels must align with labeled_idx")
        if n_classes is None:
            seen = [labels]
            seen += [y for y in (y_source, y_target) if y is not None]
            n_classes = int(max((s.max() for s in seen if s.size), default=0)) + 1
        rest = np.setdiff1d(np.arange(n_s), idx)
        order = np.concatenate([idx, rest])
        return cls(
            source=_frozen(xs[:, order]),
            target=_frozen(xt),
            n_labeled=int(idx.size),
            n_classes=int(n_classes),
            order=_frozen(order),
            source_labels=_frozen(one_hot(labels, n_classes)),
            y_source=None if y_source is None else _frozen(y_source[order]),
            y_target=None if y_target is None else _frozen(y_target),
        )

    @property
    def dim(self):
        return self.source.shape[0]

    @property
    def n_source(self):
        return self.source.shape[1]

    @property
    def n_target(self):
        return self.target.shape[1]

    @property
    def n_unlabeled(self):
        return self.n_source - self.n_labeled

    @property
    def labeled_classes(self):
        return hard_labels(self.source_labels)

    def to_original(self, values):
        """Undo the labeled-first reordering along the first axis."""
        values = np.asarray(values)
        out = np.empty_like(values)
        out[self.order] = values
        return out

    def original_source(self):
        return self.to_original(self.source.T).T

    def original_y_source(self):
        return None if self.y_source is None else self.to_original(self.y_source)

    def with_labeled(self, labeled_idx):
        """New pair with a different labeled subset (original indices)."""
        y = self.original_y_source()
        if y is None:
            raise ValueError("relabeling needs y_source")
        return DomainPair.build(self.original_source(), self.target, labeled_idx,
                                y_source=y, y_target=self.y_target,
                                n_classes=self.n_classes)

    def centered(self, normalize=False):
        """Jointly centered copy (optionally L2-normalizing samples first)."""
        xs, xt = self.source, self.target
        if normalize:
            xs, xt = normalize_samples(xs), normalize_samples(xt)
        xs, xt = center_pair(xs, xt)
        return DomainPair(_frozen(xs), _frozen(xt), self.n_labeled, self.n_classes,
                          self.order, self.source_labels, self.y_source, self.y_target)


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class ShiftSpec:
    """Class-conditional Gaussians plus a rigid motion of the target domain.

    Class ``c`` has mean ``separation * e_c`` unless ``means`` (C x m) is
    given. The target is drawn from the same Gaussians and then rotated by
    ``rotation_deg`` in the plane of the first two axes and translated by
    ``offset`` along ``offset_axis``.
    """

    n_classes: int = 3
    dim: int = 10
    per_class: int = 50
    separation: float = 1.5
    cov_scale: float = 0.5
    rotation_deg: float = 0.0
    offset: float = 0.0
    offset_axis: int = 0
    means: tuple | None = None

    def class_means(self):
        if self.means is not None:
            mu = np.asarray(self.means, dtype=float)
            if mu.shape != (self.n_classes, self.dim):
                raise ValueError("means must have shape (n_classes, dim)")
            return mu
        if self.n_classes > self.dim:
            raise ValueError("default means need n_classes <= dim; pass explicit means")
        return self.separation * np.eye(self.n_classes, self.dim)

    def rotation(self):
        theta = np.deg2rad(self.rotation_deg)
        r = np.eye(self.dim)
        r[:2, :2] = [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        return r

    def shift(self):
        t = np.zeros(self.dim)
        t[self.offset_axis] = self.offset
        return t

    def transform(self, x):
        """Map source-space points (columns of ``x``) into the target domain."""
        return self.rotation() @ x + self.shift()[:, None]


def generate_synthetic_pair(spec=ShiftSpec(), seed=0):
    """Draw a labeled source/target pair; no source sample is marked labeled.

    Use :meth:`DomainPair.with_labeled` to choose the labeled subset.
    """
    if spec.n_classes < 2 or spec.dim < 2 or spec.per_class < 2:
        raise ValueError("need n_classes >= 2, dim >= 2 and per_class >= 2")
    if not spec.cov_scale > 0:
        raise ValueError("cov_scale must be positive")
    if not 0 <= spec.offset_axis < spec.dim:
        raise ValueError("offset_axis out of range")
    mu = spec.class_means()
    rng = np.random.default_rng(seed)

    def draw():
        y = np.repeat(np.arange(spec.n_classes), spec.per_class)
        x = mu[y].T + spec.cov_scale * rng.standard_normal((spec.dim, y.size))
        return x, y

    xs, ys = draw()
    xt, yt = draw()
    return DomainPair.build(xs, spec.transform(xt), y_source=ys, y_target=yt,
                            n_classes=spec.n_classes)
