import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpsvm import cnn, pipeline, pso
from cpsvm.pipeline import PipelineConfig, RunReport
from cpsvm.spectra_io import ConfigurationError, LabeledDataset, SyntheticConfig


def small_config(**kw):
    """A desk-scale config that runs each model in well under a second."""
    base = PipelineConfig(
        synthetic=SyntheticConfig(class_count=3, spectra_per_class=12, channel_count=64, seed=7),
        cnn=cnn.TrainConfig(max_epochs=4),
        swarm=pso.SwarmConfig(population=3, max_iterations=3),
        monte_carlo_runs=3,
    )
    return dataclasses.replace(base, **kw)


# --- confusion matrices -------------------------------------------------------

def test_confusion_hand_count():
    cm = pipeline.confusion([1, 2, 2], [1, 1, 2], 2)
    np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 1]])
    np.testing.assert_array_equal(cm.normalized, [[0.5, 0.5], [0.0, 1.0]])
    assert cm.accuracy == pytest.approx(2 / 3) and cm.empty_rows == []


def test_confusion_perfect_is_identity():
    truth = np.repeat(np.arange(1, 5), 3)
    cm = pipeline.confusion(truth, truth, 4)
    np.testing.assert_array_equal(cm.normalized, np.eye(4))
    assert cm.accuracy == 1.0


def test_confusion_empty_row_flagged():
    cm = pipeline.confusion([1, 1], [1, 3], 3)
    assert cm.empty_rows == [2]
    np.testing.assert_array_equal(cm.normalized[1], 0.0)


def test_confusion_label_range():
    with pytest.raises(ValueError):
        pipeline.confusion([1, 4], [1, 2], 3)
    with pytest.raises(ValueError):
        pipeline.confusion([1, 2], [0, 2], 3)
    with pytest.raises(ValueError):
        pipeline.confusion([1, 2, 1], [1, 2], 3)


@settings(max_examples=50)
@given(st.integers(2, 14).flatmap(lambda k: st.tuples(
    st.just(k), st.lists(st.tuples(st.integers(1, k), st.integers(1, k)), min_size=1, max_size=300))))
def test_confusion_invariants(case):
    k, pairs = case
    preds, truth = np.array(pairs).T
    cm = pipeline.confusion(preds, truth, k)
    assert cm.counts.sum() == len(pairs)
    full = [i for i in range(k) if cm.counts[i].sum() > 0]
    np.testing.assert_allclose(cm.normalized[full].sum(axis=1), 1.0, atol=1e-9)
    assert cm.accuracy == np.trace(cm.counts) / cm.counts.sum() == np.mean(preds == truth)


def test_accuracy_one_error_in_280():
    truth = np.repeat(np.arange(1, 15), 20)
    preds = truth.copy()
    preds[0] = 2
    assert pipeline.confusion(preds, truth, 14).accuracy == pytest.approx(0.996428, abs=1e-6)


# --- config and seeds ---------------------------------------------------------------

def test_config_validation():
    for bad in (dict(train_fraction=1.0), dict(validation_fraction=0.0), dict(fitness_split="train"),
                dict(model="lstm"), dict(monte_carlo_runs=0)):
        with pytest.raises(ConfigurationError):
            dataclasses.replace(PipelineConfig(), **bad).validate()
    PipelineConfig().validate()


def test_reduced_profile():
    cfg = pipeline.reduced_profile()
    assert cfg.synthetic.spectra_per_class == 50
    assert (cfg.swarm.population, cfg.swarm.max_iterations) == (10, 20)
    assert PipelineConfig().swarm.population == 40


def test_derive_seed_distinct_and_stable():
    seeds = {pipeline.derive_seed(s, t) for s in range(42, 62) for t in range(1, 6)}
    assert len(seeds) == 100
    assert pipeline.derive_seed(42, 1) == pipeline.derive_seed(42, 1)


def test_single_class_rejected():
    cfg = small_config(synthetic=SyntheticConfig(class_count=1, spectra_per_class=5, channel_count=64))
    with pytest.raises(ConfigurationError):
        pipeline.run_plain_svm(cfg)


# --- splits ---------------------------------------------------------------------

def test_validation_split_keeps_test_out():
    cfg = small_config()
    data = pipeline.load_data(cfg)
    s = pipeline.make_splits(data, cfg, 42)
    rows = lambda d: {r.tobytes() for r in d.spectra}
    assert rows(s.fit) | rows(s.score) == rows(s.train)
    assert not rows(s.fit) & rows(s.score)
    assert not rows(s.train) & rows(s.test)
    assert len(s.train) + len(s.test) == len(data)


def test_test_split_policy_reuses_test():
    cfg = small_config(fitness_split="test")
    s = pipeline.make_splits(pipeline.load_data(cfg), cfg, 42)
    assert s.fit is s.train and s.score is s.test


def test_load_data_normalizes(tmp_path):
    cfg = small_config()
    data = pipeline.load_data(cfg)
    assert data.spectra.min() == 0.0 and data.spectra.max() == 1.0
    np.testing.assert_array_equal(data.spectra.max(axis=1), 1.0)


# --- runs -------------------------------------------------------------------------

def _stable(report: RunReport):
    return json.dumps(report.to_dict(include_timing=False), sort_keys=True)


@pytest.mark.parametrize("run", [pipeline.run_plain_svm, pipeline.run_ipso_svm, pipeline.run_cpsvm])
def test_runs_deterministic(run):
    cfg = small_config()
    a, b = run(cfg), run(cfg)
    assert _stable(a) == _stable(b)
    assert a.wall_time_s > 0 and 0 <= a.accuracy <= 1
    assert a.accuracy == np.trace(a.confusion.counts) / a.confusion.counts.sum()
    c = run(cfg, seed=43)
    assert c.seed == 43


def test_plain_svm_draw_in_bounds_and_seeded():
    cfg = small_config()
    draws = {(r.C, r.sigma) for r in (pipeline.run_plain_svm(cfg, seed=s) for s in range(5))}
    assert len(draws) == 5
    for C, sigma in draws:
        assert 0.01 <= C <= 100 and 0.01 <= sigma <= 50


def test_ipso_bookkeeping():
    cfg = small_config(swarm=pso.SwarmConfig(population=4, max_iterations=5))
    r = pipeline.run_ipso_svm(cfg)
    assert len(r.evaluations) == 20 and len(r.best_fitness_curve) == 5
    assert np.all(np.diff(r.best_fitness_curve) >= 0)
    assert 0.01 <= r.C <= 100 and 0.01 <= r.sigma <= 50
    assert r.extra["gbest_fitness"] == max(e[-1] for e in r.evaluations)


def test_default_scale_evaluation_count():
    cfg = PipelineConfig()
    assert cfg.swarm.population * cfg.swarm.max_iterations == 4000


def test_cpsvm_features_are_84_wide():
    r = pipeline.run_cpsvm(small_config())
    assert r.extra["feature_count"] == 84
    assert r.svm_model.feature_count == 84
    assert r.cnn_model.arch.input_length == 64


def test_cpsvm_with_test_fitness_split():
    r = pipeline.run_cpsvm(small_config(fitness_split="test"))
    assert 0 <= r.accuracy <= 1


def test_run_model_dispatch():
    assert pipeline.run_model(small_config(model="svm")).model == "svm"


# --- Monte Carlo -------------------------------------------------------------------

def _fake_report(acc, t, seed=0):
    cm = pipeline.confusion([1], [1], 1)
    return RunReport("x", acc, t, seed, 1.0, 1.0, cm)


def test_summary_statistics():
    reps = [_fake_report(a, t) for a, t in ((0.9, 1.0), (0.95, 2.0), (1.0, 6.0))]
    s = pipeline.summarize("x", reps)
    assert s.accuracy_mean == pytest.approx(95.0)
    assert s.accuracy_std == pytest.approx(np.std([90, 95, 100], ddof=1))
    assert s.time_mean == pytest.approx(3.0) and s.time_std == pytest.approx(np.std([1, 2, 6], ddof=1))
    const = pipeline.summarize("x", [_fake_report(0.8, 1.0)] * 20)
    assert const.accuracy_std == 0.0 and const.accuracy_mean == pytest.approx(80.0)


def test_monte_carlo_seeds_and_files(tmp_path):
    cfg = small_config()
    seen = []
    mc = pipeline.monte_carlo(cfg, ["svm", "ipso-svm"], progress=lambda m, i, r: seen.append((m, i)))
    assert [r.seed for r in mc.reports["svm"]] == [42, 43, 44]
    assert len(seen) == 6
    out = pipeline.write_monte_carlo(mc, tmp_path)
    with (out / "runs.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    acc = [100 * float(r["accuracy"]) for r in rows if r["model"] == "svm"]
    with (out / "summary.csv").open() as fh:
        summary = {r["model"]: r for r in csv.DictReader(fh)}
    assert float(summary["svm"]["accuracy_mean_pct"]) == pytest.approx(np.mean(acc), abs=1e-12)
    assert float(summary["svm"]["accuracy_std_pct"]) == pytest.approx(np.std(acc, ddof=1), abs=1e-12)
    assert (out / "ipso-svm" / "run_02" / "eval_log.csv").exists()
    text = pipeline.format_summary(mc)
    assert "svm" in text and "+-" in text


def test_monte_carlo_failure_names_run(monkeypatch):
    calls = []

    def flaky(cfg, data, seed):
        calls.append(seed)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return _fake_report(1.0, 1.0, seed)

    monkeypatch.setitem(pipeline.RUNNERS, "svm", flaky)
    with pytest.raises(pipeline.MonteCarloError, match="svm run 1 failed: boom") as exc:
        pipeline.monte_carlo(small_config(), ["svm"])
    assert exc.value.run_index == 1


def test_report_files(tmp_path):
    r = pipeline.run_cpsvm(small_config())
    out = pipeline.write_report(r, tmp_path / "run")
    names = {p.name for p in out.iterdir()}
    assert {"report.json", "confusion.csv", "fitness_curves.csv", "eval_log.csv", "svm_model.txt",
            "cnn_model.npz", "training_curves.csv"} <= names
    data = json.loads((out / "report.json").read_text())
    assert data["accuracy"] == r.accuracy and data["fitness_evaluations"] == 9
    with (out / "confusion.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert sum(int(x["count"]) for x in rows) == sum(map(sum, data["confusion_counts"]))
    with (out / "eval_log.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["iteration", "particle", "C", "sigma", "fitness"]
    # full-precision floats survive the text round trip
    with (out / "fitness_curves.csv").open() as fh:
        best = [float(x["best"]) for x in csv.DictReader(fh)]
    assert best == r.best_fitness_curve
