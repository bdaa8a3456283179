"""Batch experiment runner: load, audit, impute, split, train, evaluate, aggregate.

Output layout::

    <output_dir>/<fingerprint>/
        config.json  audit.json  imputation_log.json  summary.json  manifest.json
        <seed>/models/<model>.json
        <seed>/reports/<model>_{train,test}.json
        <seed>/curves/<model>_{roc,gain}.csv

Only ``manifest.json`` carries timestamps; everything else is a pure
function of the dataset bytes and the config.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .classifiers import save_model
from .config import ExperimentConfig, canonical_json, fingerprint
from .dataset import BENIGN, MALIGNANT, Dataset, ParseError, audit, load_dataset
from .evaluation import EvalReport, evaluate, pct
from .imputation import fill_log, impute_all, write_fill_log
from .partition import PartitionSpec, split, split_indices

__all__ = ["PartitionSpec", "split", "split_indices", "fingerprint", "run_experiment", "RunManifest",
           "aggregate", "DataError"]

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "sensitivity", "specificity", "auc")


class DataError(ValueError):
    """The dataset could not be read or is unusable; raised before any training."""


@dataclass
class RunManifest:
    fingerprint: str
    root: Path
    seeds: list
    models: list
    partitions: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    @property
    def ok(self):
        return not self.failures

    def to_dict(self):
        return {
            "fingerprint": self.fingerprint,
            "seeds": self.seeds,
            "models": self.models,
            "partitions": self.partitions,
            "artifacts": self.artifacts,
            "failures": self.failures,
            "started": self.started,
            "finished": self.finished,
            **self.extra,
        }


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(vals, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else None
    return {"mean": float(arr.mean()), "std": std, "n": len(arr)}


def aggregate(reports):
    """Mean and sample standard deviation per (model, partition, metric) over seeds.

    ``reports`` is an iterable of :class:`EvalReport`; missing metrics
    (``None``) are skipped.
    """
    grouped = {}
    for r in reports:
        d = r.metrics.to_dict()
        d["auc"] = r.auc
        slot = grouped.setdefault(r.model, {}).setdefault(r.partition, {m: [] for m in METRICS})
        for m in METRICS:
            slot[m].append(d[m])
    return {model: {part: {m: _mean_std(v) for m, v in ms.items()} for part, ms in parts.items()}
            for model, parts in grouped.items()}


def summary_text(agg, ranking):
    def cell(s):
        if s["mean"] is None:
            return f"{'n/a':>16}"
        sd = 0.0 if s["std"] is None else s["std"]
        return f"{pct(s['mean'])} ± {100 * sd:5.2f}"

    lines = [f"{'model':<6} {'partition':<9} {'accuracy':>16} {'sensitivity':>16} {'specificity':>16} {'AUC':>14}"]
    for model, parts in agg.items():
        for part in ("train", "test"):
            if part not in parts:
                continue
            s = parts[part]
            auc = s["auc"]
            auc_txt = "n/a" if auc["mean"] is None else f"{auc['mean']:.3f} ± {auc['std'] or 0.0:.3f}"
            lines.append(f"{model:<6} {part:<9} {cell(s['accuracy']):>16} {cell(s['sensitivity']):>16} "
                         f"{cell(s['specificity']):>16} {auc_txt:>14}")
    if ranking:
        lines.append("")
        lines.append("test AUC ranking: " + " > ".join(ranking))
    return "\n".join(lines)


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_inputs(cfg: ExperimentConfig):
    """Read and audit the dataset; raises :class:`DataError` on any problem."""
    path = cfg.dataset_path
    if not path.is_file():
        raise DataError(f"load: dataset not found: {path}")
    try:
        ds = load_dataset(path)
    except ParseError as exc:
        raise DataError(f"load: {path}: {exc}") from exc
    if len(ds) == 0:
        raise DataError(f"load: {path} holds no records")
    if len(np.unique(ds.labels)) < 2:
        raise DataError(f"load: {path} holds a single class")
    return ds


def _named(counts):
    return {"benign": counts[BENIGN], "malignant": counts[MALIGNANT]}


def _run_seed(cfg: ExperimentConfig, imputed: Dataset, seed: int, seed_dir: Path):
    prefix = f"[seed {seed}]"
    train, test = split(imputed, cfg.partition_for(seed))
    part = {"train": len(train), "test": len(test),
            "train_classes": _named(train.class_counts()), "test_classes": _named(test.class_counts())}
    reports, artifacts, failures = [], {}, []
    for kind in cfg.models:
        stage = "train"
        try:
            model = cfg.make_model(kind).fit(train, seed=seed, backend=cfg.backend)
            stage = "save"
            model_path = seed_dir / "models" / f"{kind}.json"
            save_model(model, model_path)
            stage = "evaluate"
            paths = {"model": str(model_path)}
            mine = []
            for name, ds in (("train", train), ("test", test)):
                classes, scores = model.predict(ds)
                rep = evaluate(kind, name, classes, scores, ds.labels)
                rpath = seed_dir / "reports" / f"{kind}_{name}.json"
                rep.write(rpath)
                paths[f"report_{name}"] = str(rpath)
                mine.append(rep)
                if name == "test":
                    for ck, curve in rep.curves.items():
                        cpath = seed_dir / "curves" / f"{kind}_{ck}.csv"
                        curve.to_csv(cpath)
                        paths[f"curve_{ck}"] = str(cpath)
            artifacts[kind] = paths
            reports.extend(mine)
            logger.info("%s %s test accuracy %s", prefix, kind, pct(mine[-1].metrics.accuracy).strip())
        except Exception as exc:  # one model failing must not stop the others
            logger.error("%s %s failed during %s: %s", prefix, kind, stage, exc)
            logger.debug("%s", traceback.format_exc())
            failures.append({"seed": seed, "model": kind, "stage": stage,
                             "error": f"{type(exc).__name__}: {exc}"})
    return part, reports, artifacts, failures


def run_experiment(cfg: ExperimentConfig, extra_manifest=None) -> RunManifest:
    """Run every (seed, model) pair of ``cfg`` and write the artifacts.

    Dataset problems raise :class:`DataError` before anything is trained;
    per-model failures are recorded in ``manifest.failures``.
    """
    started = _now()
    ds = load_inputs(cfg)
    fp = fingerprint(cfg)
    root = cfg.output_path / fp
    root.mkdir(parents=True, exist_ok=True)
    _write_json(root / "config.json", cfg.to_dict())

    report = audit(ds)
    report.to_json(root / "audit.json")
    # tree imputation is deterministic, so one pass serves every seed
    imputed = impute_all(ds, cfg.imputation, include_label=cfg.impute_with_label)
    write_fill_log(fill_log(ds, imputed), root / "imputation_log.json")

    seeds = list(cfg.seeds)
    if cfg.jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda s: _run_seed(cfg, imputed, s, root / str(s)), seeds))
    else:
        results = [_run_seed(cfg, imputed, s, root / str(s)) for s in seeds]

    manifest = RunManifest(fp, root, seeds, list(cfg.models), started=started)
    all_reports = []
    for seed, (part, reports, artifacts, failures) in zip(seeds, results):
        manifest.partitions[str(seed)] = part
        manifest.artifacts[str(seed)] = artifacts
        manifest.failures.extend(failures)
        all_reports.extend(reports)

    agg = aggregate(all_reports)
    ranking = sorted((m for m in agg if "test" in agg[m] and agg[m]["test"]["auc"]["mean"] is not None),
                     key=lambda m: -agg[m]["test"]["auc"]["mean"])
    per_seed = {str(s): [r.to_dict() for r in res[1]] for s, res in zip(seeds, results)}
    manifest.summary = {
        "fingerprint": fp,
        "seeds": seeds,
        "models": list(cfg.models),
        "stratified": cfg.partition.stratified,
        "aggregate": agg,
        "auc_ranking": ranking,
        "per_seed": per_seed,
        "failures": manifest.failures,
        "text": summary_text(agg, ranking),
    }
    _write_json(root / "summary.json", manifest.summary)
    manifest.extra = {
        "dataset": str(cfg.dataset_path),
        "dataset_sha256": _sha256_file(cfg.dataset_path),
        "config_canonical": canonical_json(cfg.to_dict()),
        "stratified": cfg.partition.stratified,
        "backend": cfg.backend or _accel.backend_name(),
        **(extra_manifest or {}),
    }
    manifest.finished = _now()
    _write_json(root / "manifest.json", manifest.to_dict())
    return manifest


def load_reports(paths):
    return [EvalReport.from_dict(json.loads(Path(p).read_text())) for p in paths]
