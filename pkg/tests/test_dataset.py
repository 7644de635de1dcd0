import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from slsada.dataset import (DomainPair, FeatureFileError, ShiftSpec, center_features,
                            center_pair, generate_synthetic_pair, hard_labels, load_features,
                            load_labels, normalize_samples, one_hot, sample_labeled_subset,
                            save_features, save_labels)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


# --- feature files -----------------------------------------------------------

def test_csv_header_and_rows(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("2,3\n1,2,3\n4,5,6\n")
    x = load_features(p)
    assert x.shape == (2, 3)
    np.testing.assert_array_equal(x, [[1, 2, 3], [4, 5, 6]])


def test_csv_bad_cell_names_position(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("2,2\n1,2\n3,abc\n")
    with pytest.raises(FeatureFileError, match=r"\(1, 1\)"):
        load_features(p)


def test_csv_short_row_names_row(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("2,3\n1,2,3\n4,5\n")
    with pytest.raises(FeatureFileError, match="row 1"):
        load_features(p)


@pytest.mark.parametrize("text", ["2,2\n1,nan\n3,4\n", "2,2\n1,2\n3,inf\n"])
def test_csv_non_finite_rejected(tmp_path, text):
    p = tmp_path / "x.csv"
    p.write_text(text)
    with pytest.raises(FeatureFileError, match="non-finite"):
        load_features(p)


def test_csv_row_count_must_match_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("3,2\n1,2\n3,4\n")
    with pytest.raises(FeatureFileError, match="3 rows"):
        load_features(p)


def test_binary_truncated(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"\x02" + b"\x00" * 7 + b"\x02" + b"\x00" * 7 + b"\x00" * 8)
    with pytest.raises(FeatureFileError, match="expected"):
        load_features(p)


def test_binary_layout_is_little_endian_row_major(tmp_path):
    x = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    p = tmp_path / "x.bin"
    save_features(x, p)
    raw = p.read_bytes()
    assert raw[:16] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
    np.testing.assert_array_equal(np.frombuffer(raw[16:], "<f8"), [1, 2, 3, 4, 5, 6])


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite),
       st.sampled_from(["x.csv", "x.bin"]))
def test_save_load_round_trip_bit_exact(tmp_path_factory, x, name):
    p = tmp_path_factory.mktemp("rt") / name
    save_features(x, p)
    y = load_features(p)
    assert y.tobytes() == x.tobytes()


def test_labels_round_trip_and_errors(tmp_path):
    p = tmp_path / "y.txt"
    save_labels([2, 0, 1], p)
    np.testing.assert_array_equal(load_labels(p), [2, 0, 1])
    p.write_text("1\nx\n")
    with pytest.raises(FeatureFileError, match="line 1"):
        load_labels(p)


# --- centering -----------------------------------------------------------------

def test_center_example():
    np.testing.assert_array_equal(center_features([[1, 3], [2, 2]]), [[-1, 1], [0, 0]])


def test_center_random_rows_have_zero_mean(rng):
    c = center_features(rng.standard_normal((5, 7)))
    assert np.abs(c.mean(axis=1)).max() < 1e-12


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3)))
def test_center_idempotent(x):
    once = center_features(x)
    np.testing.assert_allclose(center_features(once), once, atol=1e-12)


def test_center_pair_is_joint(rng):
    xs, xt = rng.standard_normal((3, 4)) + 5, rng.standard_normal((3, 6)) - 1
    cs, ct = center_pair(xs, xt)
    joint = np.hstack([cs, ct])
    assert np.abs(joint.mean(axis=1)).max() < 1e-12
    # per-domain means stay apart
    assert np.abs(cs.mean(axis=1) - ct.mean(axis=1)).min() > 1


def test_normalize_samples_unit_columns(rng):
    x = rng.standard_normal((4, 6))
    x[:, 2] = 0
    y = normalize_samples(x)
    norms = np.linalg.norm(y, axis=0)
    np.testing.assert_allclose(norms[[0, 1, 3, 4, 5]], 1)
    assert norms[2] == 0


# --- labels ----------------------------------------------------------------------

def test_one_hot_and_argmax_ties():
    f = one_hot([1, 0, 2], 3)
    np.testing.assert_array_equal(hard_labels(f), [1, 0, 2])
    assert hard_labels([[0.5, 0.5, 0.1]])[0] == 0
    with pytest.raises(ValueError):
        one_hot([3], 3)


def test_subset_five_per_class_ten_classes():
    labels = np.repeat(np.arange(10), 12)
    idx = sample_labeled_subset(labels, 5, seed=3)
    assert idx.size == 50
    np.testing.assert_array_equal(np.bincount(labels[idx]), np.full(10, 5))


def test_subset_full_class_takes_everything():
    labels = np.array([0, 0, 0, 1, 1, 1, 1])
    for seed in range(5):
        idx = sample_labeled_subset(labels, 3, seed)
        assert set(np.flatnonzero(labels == 0)) <= set(idx)


def test_subset_determinism():
    labels = np.repeat([0, 1], 50)
    a = sample_labeled_subset(labels, 5, seed=1)
    np.testing.assert_array_equal(a, sample_labeled_subset(labels, 5, seed=1))
    assert not np.array_equal(a, sample_labeled_subset(labels, 5, seed=2))


def test_subset_small_class_named():
    with pytest.raises(ValueError, match="class 1 has 2"):
        sample_labeled_subset([0, 0, 0, 1, 1], 3, seed=0)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=60), st.integers(0, 2**32 - 1))
def test_subset_disjoint_per_class(labels, seed):
    labels = np.asarray(labels)
    per_class = int(np.bincount(labels)[np.unique(labels)].min())
    idx = sample_labeled_subset(labels, per_class, seed)
    assert np.unique(idx).size == idx.size == per_class * np.unique(labels).size
    for c in np.unique(labels):
        assert np.sum(labels[idx] == c) == per_class


# --- domain pair -------------------------------------------------------------------

def test_pair_reorders_labeled_first(rng):
    xs = rng.standard_normal((3, 6))
    ys = np.array([0, 1, 2, 0, 1, 2])
    pair = DomainPair.build(xs, rng.standard_normal((3, 4)), [4, 1], y_source=ys)
    np.testing.assert_array_equal(pair.source[:, 0], xs[:, 4])
    np.testing.assert_array_equal(pair.source[:, 1], xs[:, 1])
    np.testing.assert_array_equal(pair.labeled_classes, [1, 1])
    assert pair.n_labeled == 2 and pair.n_unlabeled == 4
    np.testing.assert_array_equal(pair.original_source(), xs)


@given(st.integers(2, 20).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.integers(0, n - 1), unique=True, max_size=n))))
def test_reordering_is_a_permutation(args):
    n, idx = args
    xs = np.arange(2 * n, dtype=float).reshape(2, n)
    pair = DomainPair.build(xs, np.zeros((2, 3)), idx, np.zeros(len(idx), int), n_classes=1)
    values = np.arange(n) * 10
    np.testing.assert_array_equal(pair.to_original(values[pair.order]), values)
    np.testing.assert_array_equal(pair.original_source(), xs)


def test_pair_rejections(rng):
    xs, xt = rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
    with pytest.raises(ValueError, match="dimensions differ"):
        DomainPair.build(xs, xt)
    with pytest.raises(ValueError, match=r"\[0, 5\)"):
        DomainPair.build(xs, xs, [5], [0])
    with pytest.raises(ValueError, match="duplicates"):
        DomainPair.build(xs, xs, [1, 1], [0, 0])
    bad = xs.copy()
    bad[1, 2] = np.nan
    with pytest.raises(ValueError, match=r"\(1, 2\)"):
        DomainPair.build(bad, xs)


def test_pair_is_read_only(shifted_pair):
    with pytest.raises(ValueError):
        shifted_pair.source[0, 0] = 1.0


# --- synthetic ------------------------------------------------------------------------

def test_synthetic_shapes_and_labels():
    pair = generate_synthetic_pair(ShiftSpec(n_classes=3, dim=10, per_class=50), seed=1)
    assert pair.source.shape == (10, 150) and pair.target.shape == (10, 150)
    np.testing.assert_array_equal(np.bincount(pair.y_source), [50, 50, 50])
    np.testing.assert_array_equal(np.bincount(pair.y_target), [50, 50, 50])
    assert pair.n_labeled == 0


def test_synthetic_deterministic():
    spec = ShiftSpec(rotation_deg=15, offset=1.0)
    a, b = generate_synthetic_pair(spec, 7), generate_synthetic_pair(spec, 7)
    assert a.source.tobytes() == b.source.tobytes()
    assert a.target.tobytes() == b.target.tobytes()


def test_synthetic_no_shift_same_distribution():
    # pooled over seeds, class means of both domains agree to sampling error
    spec = ShiftSpec(per_class=200)
    diffs = []
    for seed in range(5):
        pair = generate_synthetic_pair(spec, seed)
        for c in range(3):
            diffs.append(pair.source[:, pair.y_source == c].mean(axis=1)
                         - pair.target[:, pair.y_target == c].mean(axis=1))
    se = spec.cov_scale * np.sqrt(2 / spec.per_class)
    assert np.abs(np.mean(diffs, axis=0)).max() < 4 * se / np.sqrt(15)


def test_synthetic_transform_is_rigid():
    spec = ShiftSpec(rotation_deg=15, offset=1.0)
    r = spec.rotation()
    np.testing.assert_allclose(r.T @ r, np.eye(spec.dim), atol=1e-15)
    x = np.zeros((spec.dim, 1))
    np.testing.assert_allclose(spec.transform(x).ravel(), spec.shift())


def test_synthetic_rejections():
    with pytest.raises(ValueError, match="cov_scale"):
        generate_synthetic_pair(ShiftSpec(cov_scale=0.0))
    with pytest.raises(ValueError):
        generate_synthetic_pair(ShiftSpec(n_classes=1))


def _nc_accuracy(x_train, y_train, x_test, y_test):
    means = np.stack([x_train[:, y_train == c].mean(axis=1) for c in np.unique(y_train)], 1)
    d = ((x_test[:, :, None] - means[:, None, :]) ** 2).sum(axis=0)
    return np.mean(np.argmin(d, axis=1) == y_test)


def test_shift_hurts_source_only_classifier():
    # the Bayes rule of the source is nearest true mean (equal isotropic covariance)
    spec = ShiftSpec(rotation_deg=15, offset=1.0)
    mu = spec.class_means().T
    bayes, shifted = [], []
    for seed in range(10):
        pair = generate_synthetic_pair(spec, seed)
        bayes.append(_nc_accuracy(mu, np.arange(3), pair.source, pair.y_source))
        shifted.append(_nc_accuracy(pair.source, pair.y_source, pair.target, pair.y_target))
    assert np.mean(shifted) < np.mean(bayes)
