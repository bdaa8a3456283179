import json
import math
import shutil
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic_dataset
from mammo.classifiers import (ChaidClassifier, MlpClassifier, ModelError, SvmClassifier, load_model, save_model)
from mammo.config import ConfigError, ExperimentConfig, canonical_json, fingerprint, load_config
from mammo.dataset import MAMMO_SCHEMA, Dataset, write_dataset
from mammo.evaluation import EvalReport
from mammo.imputation import impute_all
from mammo.mlp import MlpTrainConfig, PruneConfig
from mammo.partition import PartitionSpec, allocate, split, split_indices
from mammo.pipeline import DataError, aggregate, load_reports, run_experiment
from mammo.svm import KernelParams, SvmParams


# ------------------------------------------------------------------ partition

def allocation_oracle(sizes, fraction):
    """Among all floor/ceil choices with the right total, the ones closest to the exact quotas."""
    f = Fraction(fraction)
    total = math.floor(sum(sizes) * f + Fraction(1, 2))
    quotas = [n * f for n in sizes]
    best, winners = None, []
    for pick in product(*[sorted({math.floor(q), math.ceil(q)}) for q in quotas]):
        if sum(pick) != total:
            continue
        cost = sum((a - q) ** 2 for a, q in zip(pick, quotas))
        if best is None or cost < best:
            best, winners = cost, [list(pick)]
        elif cost == best:
            winners.append(list(pick))
    return winners


def test_allocation_examples():
    assert allocate([516, 445], 0.7).tolist() == [361, 312]
    assert allocate([961], 0.7).tolist() == [673]
    assert allocation_oracle([516, 445], 0.7) == [[361, 312]]


@given(st.lists(st.integers(2, 500), min_size=1, max_size=4), st.floats(0.05, 0.95))
@settings(max_examples=300)
def test_allocation_matches_oracle(sizes, fraction):
    got = allocate(sizes, fraction).tolist()
    assert got in allocation_oracle(sizes, fraction)


def test_split_961_stratified():
    ds = synthetic_dataset(516, 445, missing_rate=0.0)
    train, test = split(ds, PartitionSpec(0.7, True, 0))
    assert (len(train), len(test)) == (673, 288)
    assert train.class_counts() == {0: 361, 1: 312} and test.class_counts() == {0: 155, 1: 133}


@pytest.mark.parametrize("stratified", [True, False])
def test_split_is_a_partition(stratified):
    labels = np.r_[np.zeros(50, int), np.ones(31, int)]
    tr, te = split_indices(labels, PartitionSpec(0.7, stratified, 3))
    assert len(np.intersect1d(tr, te)) == 0
    assert sorted(np.r_[tr, te].tolist()) == list(range(81))
    tr2, te2 = split_indices(labels, PartitionSpec(0.7, stratified, 3))
    np.testing.assert_array_equal(tr, tr2)
    tr3, _ = split_indices(labels, PartitionSpec(0.7, stratified, 4))
    assert len(tr3) == len(tr) and not np.array_equal(tr3, tr)


def test_split_errors():
    with pytest.raises(ValueError):
        PartitionSpec(train_fraction=1.0)
    with pytest.raises(ValueError):
        split_indices(np.array([0, 0, 0, 1]), PartitionSpec(0.7, True, 0))
    with pytest.raises(ValueError):
        split_indices(np.array([0, 1, 0]), PartitionSpec(0.01, False, 0))
    with pytest.raises(ValueError):
        split_indices(np.array([], dtype=int), PartitionSpec())


# ------------------------------------------------------------------ config

BASE = {"dataset": "d.data", "models": ["chaid", "svm"], "seeds": [0, 1],
        "chaid": {"alpha_merge": 0.05}, "svm": {"c": 1.0, "degree": 2}}


def test_fingerprint_properties():
    a = ExperimentConfig.from_dict(BASE)
    reordered = json.loads(json.dumps(dict(reversed(list(BASE.items())))))
    assert fingerprint(ExperimentConfig.from_dict(reordered)) == fingerprint(a)
    changed = dict(BASE, chaid={"alpha_merge": 0.06})
    assert fingerprint(ExperimentConfig.from_dict(changed)) != fingerprint(a)
    fp = fingerprint(a)
    assert len(fp) == 64 and all(c in "0123456789abcdef" for c in fp)
    # 1.0 and 1 are the same number
    assert fingerprint(ExperimentConfig.from_dict(dict(BASE, svm={"c": 1, "degree": 2.0}))) == fp
    # output location and worker count do not change results
    assert fingerprint(ExperimentConfig.from_dict(dict(BASE, output_dir="elsewhere", jobs=3))) == fp


def test_config_round_trip_and_defaults():
    cfg = ExperimentConfig.from_dict({"dataset": "x"})
    assert cfg.models == ("chaid", "mlp", "svm") and cfg.seeds == tuple(range(10))
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert canonical_json(cfg.to_dict()) == canonical_json(json.loads(json.dumps(cfg.to_dict())))
    off = ExperimentConfig.from_dict({"dataset": "x", "mlp": {"prune": None}})
    assert off.prune is None


@pytest.mark.parametrize("bad, match", [
    ({}, "dataset"),
    ({"dataset": "x", "models": ["tree"]}, "valid names: chaid, mlp, svm"),
    ({"dataset": "x", "models": []}, "at least one"),
    ({"dataset": "x", "seeds": []}, "non-empty"),
    ({"dataset": "x", "seeds": [-1]}, "non-negative"),
    ({"dataset": "x", "chaid": {"alpha": 0.1}}, "unknown key"),
    ({"dataset": "x", "extra": 1}, "unknown top-level"),
    ({"dataset": "x", "partition": {"seed": 3}}, "seeds"),
    ({"dataset": "x", "svm": {"gamma": -1}}, "gamma"),
    ({"dataset": "x", "backend": "gpu"}, "backend"),
])
def test_config_errors(bad, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_dict(bad)


def test_load_config_resolves_relative_paths(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"dataset": "data/x.data"}))
    cfg = load_config(tmp_path / "cfg.json")
    assert cfg.dataset_path == tmp_path / "data" / "x.data"
    assert cfg.output_path == tmp_path / "runs"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


# ------------------------------------------------------------------ classifiers

@pytest.fixture(scope="module")
def small_split():
    ds = impute_all(synthetic_dataset(120, 100, missing_rate=0.02, seed=5))
    return split(ds, PartitionSpec(0.7, True, 0))


FAST_MLP = MlpTrainConfig(hidden=(6,), max_epochs=40, patience=20)
FAST_PRUNE = PruneConfig(max_rounds=1, retrain_epochs=5)


@pytest.mark.parametrize("make", [
    lambda: ChaidClassifier(),
    lambda: MlpClassifier(FAST_MLP, FAST_PRUNE),
    lambda: SvmClassifier(SvmParams(c=1.0), KernelParams(1.0, 0.1, 2)),
])
def test_classifier_round_trip(make, small_split, tmp_path):
    train, test = small_split
    model = make().fit(train, seed=1)
    classes, scores = model.predict(test)
    assert classes.shape == scores.shape == (len(test),)
    assert (classes == test.labels).mean() > 0.7
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    c2, s2 = back.predict(test)
    np.testing.assert_array_equal(c2, classes)
    np.testing.assert_allclose(s2, scores, rtol=0, atol=1e-12)


def test_scaler_fitted_on_train_only(small_split):
    train, test = small_split
    model = SvmClassifier(SvmParams(c=1.0), KernelParams(1.0, 0.1, 2)).fit(train)
    values = test.values.copy()
    values[0, 1] = 110.0  # test-side age outlier, above every training age
    outlier = Dataset(MAMMO_SCHEMA, values, test.labels)
    X = model.encoder.transform(outlier).X
    age = [c.label for c in model.encoder.columns].index("age")
    assert X[0, age] > 1.0
    assert X[1:, age].max() <= model.encoder.transform(test).X[:, age].max()
    model.predict(outlier)


def test_load_model_errors(tmp_path):
    (tmp_path / "a.json").write_text("{not json")
    with pytest.raises(ModelError):
        load_model(tmp_path / "a.json")
    (tmp_path / "b.json").write_text(json.dumps({"kind": "forest"}))
    with pytest.raises(ModelError, match="valid names"):
        load_model(tmp_path / "b.json")


def test_mlp_validation_rows_come_from_train(small_split):
    train, _ = small_split
    m = MlpClassifier(FAST_MLP, None).fit(train, seed=0)
    assert m.history["epochs"] <= FAST_MLP.max_epochs and "prune" not in m.history


# ------------------------------------------------------------------ pipeline

def fast_config(tmp_path, data, **over):
    d = {"dataset": str(data), "seeds": [0, 1], "output_dir": str(tmp_path / "runs"),
         "mlp": {"hidden": [6], "max_epochs": 30, "patience": 15,
                 "prune": {"max_rounds": 1, "retrain_epochs": 5}},
         "svm": {"c": 1.0, "degree": 2}}
    d.update(over)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "synthetic.data"
    write_dataset(synthetic_dataset(160, 140, missing_rate=0.03, seed=2), p)
    return p


def _artifact_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_run_is_deterministic(tmp_path, data_file):
    a = run_experiment(fast_config(tmp_path, data_file))
    fa = _artifact_bytes(a.root)
    shutil.rmtree(a.root)
    b = run_experiment(fast_config(tmp_path, data_file))
    assert a.ok and b.ok and a.fingerprint == b.fingerprint
    fb = _artifact_bytes(b.root)
    assert fa.keys() == fb.keys() and fa == fb
    assert "0/models/svm.json" in fa and "1/curves/mlp_roc.csv" in fa
    m = json.loads((a.root / "manifest.json").read_text())
    assert m["partitions"]["0"]["train"] + m["partitions"]["0"]["test"] == 300
    assert m["dataset_sha256"] and m["stratified"] is True


def test_parallel_run_matches_serial(tmp_path, data_file):
    a = run_experiment(fast_config(tmp_path, data_file, models=["chaid", "mlp"]))
    fa = _artifact_bytes(a.root)
    shutil.rmtree(a.root)
    b = run_experiment(fast_config(tmp_path, data_file, models=["chaid", "mlp"], jobs=2))
    fb = _artifact_bytes(b.root)
    # config.json records the worker count; every result file must match
    del fa["config.json"], fb["config.json"]
    assert fb == fa


def test_single_model_manifest(tmp_path, data_file):
    man = run_experiment(fast_config(tmp_path, data_file, models=["chaid"]))
    assert man.models == ["chaid"]
    for seed_art in man.artifacts.values():
        assert list(seed_art) == ["chaid"]
    assert not list(man.root.rglob("svm*")) and not list(man.root.rglob("mlp*"))


def test_aggregate_recomputes_from_reports(tmp_path, data_file):
    man = run_experiment(fast_config(tmp_path, data_file, models=["chaid"], seeds=[0, 1, 2]))
    paths = [man.artifacts[str(s)]["chaid"]["report_test"] for s in man.seeds]
    reports = load_reports(paths)
    acc = [r.metrics.accuracy for r in reports]
    summary = json.loads((man.root / "summary.json").read_text())
    s = summary["aggregate"]["chaid"]["test"]["accuracy"]
    assert s["mean"] == pytest.approx(np.mean(acc), abs=1e-15)
    assert s["std"] == pytest.approx(np.std(acc, ddof=1), abs=1e-15)
    assert aggregate(reports)["chaid"]["test"]["accuracy"] == s
    one = aggregate(reports[:1])["chaid"]["test"]["accuracy"]
    assert one["std"] is None and one["n"] == 1


def test_partial_failure_is_recorded(tmp_path, data_file, monkeypatch):
    def boom(self, train, seed=0, backend=None):
        raise RuntimeError("diverged")
    monkeypatch.setattr(SvmClassifier, "fit", boom)
    man = run_experiment(fast_config(tmp_path, data_file, models=["chaid", "svm"]))
    assert not man.ok
    assert {(f["model"], f["stage"]) for f in man.failures} == {("svm", "train")}
    assert all(list(a) == ["chaid"] for a in man.artifacts.values())
    summary = json.loads((man.root / "summary.json").read_text())
    assert "svm" not in summary["aggregate"] and len(summary["failures"]) == 2


def test_data_errors_abort_before_training(tmp_path):
    with pytest.raises(DataError, match="not found"):
        run_experiment(fast_config(tmp_path, tmp_path / "nope.data"))
    bad = tmp_path / "bad.data"
    bad.write_text("5,67,3,5,3,1\n5,67,3\n")
    with pytest.raises(DataError, match="line 2"):
        run_experiment(fast_config(tmp_path, bad))
    assert not (tmp_path / "runs").exists()


def test_report_files_match_schema(tmp_path, data_file):
    man = run_experiment(fast_config(tmp_path, data_file, models=["chaid"], seeds=[0]))
    d = json.loads((man.root / "0" / "reports" / "chaid_test.json").read_text())
    assert set(d) == {"model", "partition", "confusion", "metrics", "auc"}
    assert set(d["confusion"]) == {"tp", "tn", "fp", "fn"}
    assert EvalReport.from_dict(d).to_dict() == d
