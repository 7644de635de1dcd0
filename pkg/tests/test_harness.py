import csv
import json

import numpy as np
import pytest

from slsada import harness
from slsada.dataset import DomainPair, ShiftSpec, generate_synthetic_pair
from slsada.harness import (ExperimentSpec, accuracy_s, accuracy_t, embed_dump,
                            read_embed_dump, run_protocol, sweep)
from slsada.solver import Prediction, SolverConfig, SolverError, run_slsada

SHIFT = ShiftSpec(rotation_deg=15, offset=1.0)
FAST = SolverConfig(k=2, lam=0.3, gamma=0.1)


# --- metrics ---------------------------------------------------------------------

def test_accuracy_all_correct(shifted_pair):
    pred = Prediction(shifted_pair.y_source[shifted_pair.n_labeled:], shifted_pair.y_target)
    assert accuracy_s(pred, shifted_pair) == 1.0
    assert accuracy_t(pred, shifted_pair) == 1.0


def test_accuracy_counts_clamped_labels(shifted_pair):
    wrong = (shifted_pair.y_source + 1) % shifted_pair.n_classes
    n_l, n_s = shifted_pair.n_labeled, shifted_pair.n_source
    assert accuracy_s(wrong[n_l:], shifted_pair) == n_l / n_s
    # a full-length vector has its labeled rows clamped
    assert accuracy_s(wrong, shifted_pair) == n_l / n_s


def test_random_predictions_near_chance():
    pair = generate_synthetic_pair(ShiftSpec(n_classes=4, dim=4, per_class=250), 0)
    rng = np.random.default_rng(0)
    accs = [accuracy_t(rng.integers(0, 4, pair.n_target), pair) for _ in range(200)]
    # 3 sigma band of the mean of 200 binomial proportions
    sigma = np.sqrt(0.25 * 0.75 / pair.n_target / 200)
    assert abs(np.mean(accs) - 0.25) < 3 * sigma


def test_accuracy_errors(shifted_pair):
    with pytest.raises(ValueError, match="expected"):
        accuracy_s(np.zeros(3, int), shifted_pair)
    with pytest.raises(ValueError, match="expected"):
        accuracy_t(np.zeros(3, int), shifted_pair)
    unlabeled = DomainPair.build(np.ones((2, 3)), np.ones((2, 3)), [0], [0])
    with pytest.raises(ValueError, match="true source labels"):
        accuracy_s(np.zeros(2, int), unlabeled)
    with pytest.raises(ValueError, match="true target labels"):
        accuracy_t(np.zeros(3, int), unlabeled)


# --- baselines -----------------------------------------------------------------------

def test_source_only_is_nearest_labeled_mean(shifted_pair):
    pred = harness.source_only(shifted_pair)
    n_l = shifted_pair.n_labeled
    y = shifted_pair.labeled_classes
    means = np.stack([shifted_pair.source[:, :n_l][:, y == c].mean(axis=1) for c in range(3)])
    d = ((shifted_pair.target.T[:, None, :] - means[None]) ** 2).sum(axis=2)
    np.testing.assert_array_equal(pred.target, d.argmin(axis=1))


@pytest.mark.parametrize("name", harness.BASELINES)
def test_baselines_return_predictions(shifted_pair, name):
    pred = harness.BASELINE_FUNCS[name](shifted_pair, FAST)
    assert pred.source_unlabeled.shape == (shifted_pair.n_unlabeled,)
    assert pred.target.shape == (shifted_pair.n_target,)


def test_propagation_only_is_zero_iterations(shifted_pair):
    a = harness.propagation_only(shifted_pair, FAST)
    _, b = run_slsada(shifted_pair, SolverConfig(k=2, lam=0.3, gamma=0.1, iterations=0))
    np.testing.assert_array_equal(a.target, b.target)


# --- protocol ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def report():
    return run_protocol(ExperimentSpec(SHIFT, repeats=10, solver=FAST,
                                       baselines=("source_only",)))


def test_protocol_bookkeeping(report):
    assert len(report.repeats) == 10 and report.complete
    assert [r["repeat"] for r in report.repeats] == list(range(10))
    for method in ("slsada", "source_only"):
        for metric, key in (("acc_s", "s"), ("acc_t", "t")):
            v = np.array(report.values(method, metric))
            row = report.summary()[method]
            assert abs(row[f"mean_{key}"] - v.mean()) < 1e-12
            assert abs(row[f"std_{key}"] - v.std()) < 1e-12


def test_protocol_beats_source_only(report):
    s = report.summary()
    assert s["slsada"]["mean_t"] > s["source_only"]["mean_t"]


def test_repeats_vary_only_labeled_subset(report):
    seeds = [r["seed"] for r in report.repeats]
    assert len(set(seeds)) == 10
    assert report.config["master_seed"] == 0


def test_report_files(report, tmp_path):
    text = report.to_json(tmp_path / "r.json")
    data = json.loads(text)
    assert data["complete"] is True and len(data["repeats"]) == 10
    assert data["variants"]["ft_rule"] == "split"
    assert "elapsed" not in data
    report.to_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert [r["method"] for r in rows] == ["slsada", "source_only"]


def test_failures_are_recorded(monkeypatch):
    real = harness.run_slsada

    def sometimes(pair, config, **kw):
        if sometimes.calls == 1:
            sometimes.calls += 1
            raise SolverError("iteration 3: boom")
        sometimes.calls += 1
        return real(pair, config, **kw)

    sometimes.calls = 0
    monkeypatch.setattr(harness, "run_slsada", sometimes)
    rep = run_protocol(ExperimentSpec(SHIFT, repeats=3, solver=FAST))
    assert not rep.complete
    assert [r["ok"] for r in rep.repeats] == [True, False, True]
    assert "boom" in rep.repeats[1]["error"]
    assert rep.summary()["slsada"]["n"] == 2


def test_threads_match_serial(monkeypatch):
    spec = ExperimentSpec(SHIFT, repeats=4, solver=FAST)
    serial = run_protocol(spec).to_json()
    monkeypatch.setenv("SLSADA_THREADS", "3")
    assert run_protocol(spec).to_json() == serial
    assert run_protocol(ExperimentSpec(SHIFT, repeats=4, solver=FAST, threads=2)).to_json() == serial


def test_timing_is_opt_in():
    rep = run_protocol(ExperimentSpec(SHIFT, repeats=1, solver=FAST), timing=True)
    assert rep.elapsed > 0 and "elapsed" in json.loads(rep.to_json())


@pytest.mark.parametrize("kw", [dict(repeats=0), dict(per_class_labels=0),
                                dict(baselines=("magic",)), dict(grid={}),
                                dict(grid={"k": []}), dict(grid={"alpha": [1]})])
def test_spec_rejections(kw):
    with pytest.raises(ValueError):
        ExperimentSpec(SHIFT, **kw)


def test_protocol_needs_true_labels(rng):
    pair = DomainPair.build(rng.standard_normal((3, 10)), rng.standard_normal((3, 10)))
    with pytest.raises(ValueError, match="true labels"):
        run_protocol(ExperimentSpec(pair))


# --- sweeps -----------------------------------------------------------------------------

def test_gamma_sweep(tmp_path):
    spec = ExperimentSpec(SHIFT, repeats=3, solver=FAST,
                          grid={"gamma": [0.0, 0.001, 0.01, 0.1]})
    results = sweep(spec, csv_path=tmp_path / "g.csv")
    assert [p["gamma"] for p, _ in results] == [0.0, 0.001, 0.01, 0.1]
    ablation = run_protocol(ExperimentSpec(SHIFT, repeats=3,
                                           solver=SolverConfig(k=2, lam=0.3, gamma=0.0)))
    assert results[0][1].summary() == ablation.summary()
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["param", "value", "mean_s", "std_s", "mean_t", "std_t"]
    assert len(rows) == 5 and rows[1][:2] == ["gamma", "0.0"]


def test_label_budget_trend():
    spec = ExperimentSpec(SHIFT, repeats=10, solver=FAST,
                          grid={"per_class_labels": [1, 3, 5, 10]})
    means = [r.summary()["slsada"]["mean_s"] for _, r in sweep(spec)]
    assert all(b >= a for a, b in zip(means, means[1:])), means


def test_k_above_dimension_rejected_before_running(monkeypatch):
    monkeypatch.setattr(harness, "run_protocol", lambda *a, **k: pytest.fail("ran"))
    spec = ExperimentSpec(ShiftSpec(dim=60, rotation_deg=15), grid={"k": [20, 50, 100]})
    with pytest.raises(ValueError, match="k=100 exceeds feature dimension m=60"):
        sweep(spec)


def test_grid_points_cartesian():
    pts = harness.grid_points({"k": [2, 3], "gamma": [0, 1]})
    assert pts == [{"k": 2, "gamma": 0}, {"k": 2, "gamma": 1},
                   {"k": 3, "gamma": 0}, {"k": 3, "gamma": 1}]


# --- ordering and ablations on shifted pairs --------------------------------------------

def test_baseline_ordering():
    spec = ExperimentSpec(SHIFT, repeats=10, solver=SolverConfig(k=2, lam=1.0, gamma=0.1),
                          baselines=("source_only", "jda_like"))
    s = run_protocol(spec).summary()
    margins = (s["slsada"]["mean_t"] - s["jda_like"]["mean_t"],
               s["jda_like"]["mean_t"] - s["source_only"]["mean_t"])
    print(f"slsada - jda_like = {margins[0]:+.3f}, jda_like - source_only = {margins[1]:+.3f}")
    assert margins[0] >= 0 and margins[1] >= 0


def test_ablations_degrade_target_accuracy():
    def mean_t(**kw):
        cfg = SolverConfig(**{"k": 2, "lam": 0.3, "gamma": 0.1, **kw})
        return run_protocol(ExperimentSpec(SHIFT, repeats=10, solver=cfg)).summary()["slsada"]["mean_t"]

    full = mean_t()
    assert mean_t(gamma=0.0) < full
    assert mean_t(use_conditional=False) < full


# --- dumps --------------------------------------------------------------------------------

def test_embed_dump_schema_and_round_trip(shifted_pair, tmp_path):
    state, _ = run_slsada(shifted_pair, FAST)
    path = embed_dump(state, shifted_pair, tmp_path / "z.csv")
    header = open(path).readline().strip().split(",")
    assert header == ["domain", "true_label", "predicted_label", "z_1", "z_2"]
    domains, true, pred, z = read_embed_dump(path)
    n = shifted_pair.n_source + shifted_pair.n_target
    assert len(domains) == n and domains.count("source") == shifted_pair.n_source
    centered = shifted_pair.centered()
    expected = np.hstack([state.projection.embed(centered.source),
                          state.projection.embed(centered.target)])
    np.testing.assert_allclose(z, expected, rtol=1e-12, atol=0)
    np.testing.assert_array_equal(true[: shifted_pair.n_source], shifted_pair.y_source)
    np.testing.assert_array_equal(pred[shifted_pair.n_source:], state.labels()[1])


def test_trace_writer(shifted_pair, tmp_path):
    with harness.TraceWriter(tmp_path / "t.jsonl") as cb:
        state, _ = run_slsada(shifted_pair, SolverConfig(k=2, iterations=3), callback=cb)
    lines = [json.loads(l) for l in open(tmp_path / "t.jsonl")]
    assert [l["iteration"] for l in lines] == [1, 2, 3]
    assert lines[-1]["objective"] == state.objective_trace[-1]
