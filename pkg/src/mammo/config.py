"""Experiment configuration: JSON loading with defaults, validation and fingerprinting.

Every field is optional except ``dataset``. Layout::

    {
      "dataset": "data/mammographic_masses.data",
      "models": ["chaid", "mlp", "svm"],
      "seeds": [0, 1, ..., 9],
      "output_dir": "runs",
      "jobs": 1,
      "backend": null,
      "encoding":   {"include_non_predictive": false},
      "imputation": {"max_depth": 5, "min_leaf": 5, "min_impurity_decrease": 1e-7, "include_label": false},
      "partition":  {"train_fraction": 0.7, "stratified": true},
      "chaid": {"alpha_merge": 0.1, "alpha_split": 0.1, "max_depth": 5, "min_parent": null,
                "min_child": null, "bin_count": 10, ...},
      "mlp":   {"learning_rate": 0.1, "momentum": 0.9, "max_epochs": 2000, "patience": 100,
                "seed": 0, "hidden": [30, 18], "shuffle": true, "init_scale": 0.5,
                "validation_fraction": 0.2,
                "prune": {"prune_fraction": 0.1, "max_rounds": 5, "tolerance": 0.0, "retrain_epochs": 50}},
      "svm":   {"c": 10, "kkt_tolerance": 0.001, "max_passes": 10, "max_updates": 100000000,
                "gamma": 1, "coef_r": 0.1, "degree": 4}
    }

``"prune": null`` disables pruning.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .chaid import ChaidParams
from .classifiers import MODEL_KINDS, ChaidClassifier, MlpClassifier, ModelError, SvmClassifier, check_kind
from .dataset import EncodingConfig
from .imputation import CartParams
from .mlp import MlpTrainConfig, PruneConfig
from .partition import PartitionSpec
from .svm import KernelParams, SvmParams


class ConfigError(ValueError):
    pass


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}; valid keys: {', '.join(sorted(names))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _take(data, keys):
    return {k: data[k] for k in keys if k in data}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    models: tuple = MODEL_KINDS
    seeds: tuple = tuple(range(10))
    output_dir: str = "runs"
    jobs: int = 1
    backend: str | None = None
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    imputation: CartParams = field(default_factory=CartParams)
    impute_with_label: bool = False
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    chaid: ChaidParams = field(default_factory=ChaidParams)
    mlp: MlpTrainConfig = field(default_factory=MlpTrainConfig)
    prune: PruneConfig | None = field(default_factory=PruneConfig)
    validation_fraction: float = 0.2
    svm: SvmParams = field(default_factory=SvmParams)
    kernel: KernelParams = field(default_factory=KernelParams)
    # directory that relative paths resolve against; not part of the config proper
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.models:
            raise ConfigError("at least one model must be selected")
        try:
            for m in self.models:
                check_kind(m)
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc
        if len(set(self.models)) != len(self.models):
            raise ConfigError("models list has duplicates")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seed list has duplicates")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.backend not in (None, "numba", "numpy"):
            raise ConfigError(f"backend must be numba, numpy or null, got {self.backend!r}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("mlp.validation_fraction must lie in (0, 1)")

    # ---------------------------------------------------------------- JSON

    @classmethod
    def from_dict(cls, d, base_dir=None):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        top = {"dataset", "models", "seeds", "output_dir", "jobs", "backend", "encoding", "imputation",
               "partition", "chaid", "mlp", "svm"}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}; valid keys: {', '.join(sorted(top))}")
        if "dataset" not in d:
            raise ConfigError("config needs a 'dataset' path")
        dataset = str(d["dataset"])

        imp = dict(d.get("imputation") or {})
        with_label = bool(imp.pop("include_label", False))
        part = dict(d.get("partition") or {})
        if "seed" in part:
            raise ConfigError("partition: seeds come from the top-level 'seeds' list")
        mlp_d = dict(d.get("mlp") or {})
        val_frac = mlp_d.pop("validation_fraction", 0.2)
        prune_d = mlp_d.pop("prune", {})
        svm_d = dict(d.get("svm") or {})
        kern_keys = [f.name for f in fields(KernelParams)]
        kern = _take(svm_d, kern_keys)
        for k in kern_keys:
            svm_d.pop(k, None)
        kw = {}
        for key in ("models", "seeds"):
            if key in d:
                if not isinstance(d[key], list):
                    raise ConfigError(f"{key} must be a list")
                kw[key] = tuple(d[key])
        for key in ("output_dir", "jobs", "backend"):
            if key in d:
                kw[key] = d[key]
        if base_dir is not None:
            kw["base_dir"] = str(base_dir)
        return cls(
            dataset=dataset,
            encoding=_build(EncodingConfig, d.get("encoding"), "encoding"),
            imputation=_build(CartParams, imp, "imputation"),
            impute_with_label=with_label,
            partition=_build(PartitionSpec, part, "partition"),
            chaid=_build(ChaidParams, d.get("chaid"), "chaid"),
            mlp=_build(MlpTrainConfig, mlp_d, "mlp"),
            prune=None if prune_d is None else _build(PruneConfig, prune_d, "mlp.prune"),
            validation_fraction=val_frac,
            svm=_build(SvmParams, svm_d, "svm"),
            kernel=_build(KernelParams, kern, "svm"),
            **kw,
        )

    def to_dict(self):
        imp = asdict(self.imputation)
        imp["include_label"] = self.impute_with_label
        mlp_d = asdict(self.mlp)
        mlp_d["hidden"] = list(self.mlp.hidden)
        mlp_d["validation_fraction"] = self.validation_fraction
        mlp_d["prune"] = None if self.prune is None else asdict(self.prune)
        part = asdict(self.partition)
        del part["seed"]
        return {
            "dataset": self.dataset,
            "models": list(self.models),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "jobs": self.jobs,
            "backend": self.backend,
            "encoding": asdict(self.encoding),
            "imputation": imp,
            "partition": part,
            "chaid": asdict(self.chaid),
            "mlp": mlp_d,
            "svm": {**asdict(self.svm), **asdict(self.kernel)},
        }

    def with_overrides(self, **kw):
        try:
            return replace(self, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() or self.base_dir is None else Path(self.base_dir) / p

    @property
    def dataset_path(self):
        return self.resolve(self.dataset)

    @property
    def output_path(self):
        return self.resolve(self.output_dir)

    def partition_for(self, seed):
        return replace(self.partition, seed=seed)

    def make_model(self, kind):
        if kind == "chaid":
            return ChaidClassifier(self.chaid, self.encoding.include_non_predictive)
        if kind == "mlp":
            return MlpClassifier(self.mlp, self.prune, self.encoding, self.validation_fraction)
        if kind == "svm":
            return SvmClassifier(self.svm, self.kernel, self.encoding)
        raise ConfigError(f"unknown model {kind!r}; valid names: {', '.join(MODEL_KINDS)}")


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; relative paths inside it resolve against the file's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def _normalize(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ConfigError("non-finite number in config")
        return int(obj) if obj.is_integer() and abs(obj) < 2**53 else obj
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    raise ConfigError(f"cannot canonicalize {type(obj).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(_normalize(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=True)


# settings that never change results are left out of the fingerprint
_UNHASHED = ("output_dir", "jobs", "backend")


def fingerprint(cfg) -> str:
    """sha256 of the canonical JSON of a config (an :class:`ExperimentConfig` or a plain dict)."""
    d = cfg.to_dict() if isinstance(cfg, ExperimentConfig) else dict(cfg)
    for k in _UNHASHED:
        d.pop(k, None)
    return hashlib.sha256(canonical_json(d).encode("ascii")).hexdigest()
