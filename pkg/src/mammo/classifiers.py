"""Uniform fit/predict wrappers around the three classifiers.

Each wrapper takes imputed :class:`Dataset` objects, handles its own
encoding, and returns ``(classes, scores)`` where a higher score means
more likely malignant. Saved models are JSON objects
``{"kind", "encoder", "model", "extra"}``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import chaid, mlp, svm
from .dataset import Dataset, Encoder, EncodingConfig
from .partition import PartitionSpec, split_indices

MODEL_KINDS = ("chaid", "mlp", "svm")


class ModelError(ValueError):
    pass


class _Encoded:
    encoder: Encoder | None = None

    def _fit_encoder(self, ds, cfg):
        self.encoder = Encoder(ds.schema, cfg).fit(ds)
        return self.encoder.transform(ds)

    def _encode(self, ds):
        if self.encoder is None:
            raise ModelError("model is not fitted")
        fm = self.encoder.transform(ds)
        return fm.X


@dataclass
class ChaidClassifier:
    params: chaid.ChaidParams = field(default_factory=chaid.ChaidParams)
    include_non_predictive: bool = False
    tree: chaid.ChaidTree | None = None
    kind = "chaid"

    def fit(self, train: Dataset, seed: int = 0, backend=None):
        del seed, backend  # tree growth is deterministic
        self.tree = chaid.grow_tree(train, self.params, self.include_non_predictive)
        return self

    def predict(self, ds: Dataset):
        if self.tree is None:
            raise ModelError("model is not fitted")
        return self.tree.predict(ds)

    def to_dict(self):
        return {"kind": self.kind, "encoder": None, "model": self.tree.to_dict(),
                "extra": {"include_non_predictive": self.include_non_predictive}}

    @classmethod
    def from_dict(cls, d):
        tree = chaid.ChaidTree.from_dict(d["model"])
        return cls(tree.params, bool(d.get("extra", {}).get("include_non_predictive", False)), tree)


@dataclass
class MlpClassifier(_Encoded):
    train_cfg: mlp.MlpTrainConfig = field(default_factory=mlp.MlpTrainConfig)
    prune_cfg: mlp.PruneConfig | None = field(default_factory=mlp.PruneConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    validation_fraction: float = 0.2
    net: mlp.MlpNetwork | None = None
    encoder: Encoder | None = None
    history: dict = field(default_factory=dict)
    kind = "mlp"

    def fit(self, train: Dataset, seed: int = 0, backend=None):
        # the validation rows come out of the training partition; scaling is fitted on all of it
        fm = self._fit_encoder(train, self.encoding)
        fit_idx, val_idx = split_indices(fm.y, PartitionSpec(1.0 - self.validation_fraction, True, seed))
        cfg = mlp.MlpTrainConfig(**{**asdict(self.train_cfg), "seed": self.train_cfg.seed + seed})
        X, y = fm.X, fm.y
        net, hist = mlp.train(X[fit_idx], y[fit_idx], X[val_idx], y[val_idx], cfg, backend=backend)
        self.history = {"best_epoch": hist["best_epoch"], "best_val_accuracy": hist["best_val_accuracy"],
                        "epochs": len(hist["error"])}
        if self.prune_cfg is not None and self.prune_cfg.max_rounds > 0:
            net, log = mlp.prune(net, X[fit_idx], y[fit_idx], X[val_idx], y[val_idx],
                                 self.prune_cfg, cfg, backend=backend)
            self.history["prune"] = log
        self.net = net
        return self

    def predict(self, ds: Dataset):
        X = self._encode(ds)
        p = self.net.predict_proba(X)
        return (p >= 0.5).astype(np.int64), p

    def to_dict(self):
        return {"kind": self.kind, "encoder": self.encoder.to_dict(), "model": self.net.to_dict(),
                "extra": {"history": self.history}}

    @classmethod
    def from_dict(cls, d):
        enc = Encoder.from_dict(d["encoder"])
        return cls(encoding=enc.cfg, net=mlp.MlpNetwork.from_dict(d["model"]), encoder=enc,
                   history=d.get("extra", {}).get("history", {}))


@dataclass
class SvmClassifier(_Encoded):
    params: svm.SvmParams = field(default_factory=svm.SvmParams)
    kernel: svm.KernelParams = field(default_factory=svm.KernelParams)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    model: svm.SvmModel | None = None
    encoder: Encoder | None = None
    kind = "svm"

    def fit(self, train: Dataset, seed: int = 0, backend=None):
        del seed  # SMO starts from a fixed index and uses no randomness
        fm = self._fit_encoder(train, self.encoding)
        self.model = svm.train_svm(fm.X, fm.y, self.params, self.kernel, backend=backend)
        return self

    def predict(self, ds: Dataset):
        d = self.model.decision_values(self._encode(ds))
        return (d >= 0.0).astype(np.int64), d

    def to_dict(self):
        return {"kind": self.kind, "encoder": self.encoder.to_dict(), "model": self.model.to_dict(),
                "extra": {}}

    @classmethod
    def from_dict(cls, d):
        enc = Encoder.from_dict(d["encoder"])
        model = svm.SvmModel.from_dict(d["model"])
        return cls(svm.SvmParams(c=model.c), model.kernel, enc.cfg, model, enc)


_CLASSES = {"chaid": ChaidClassifier, "mlp": MlpClassifier, "svm": SvmClassifier}


def check_kind(kind):
    if kind not in _CLASSES:
        raise ModelError(f"unknown model {kind!r}; valid names: {', '.join(MODEL_KINDS)}")
    return kind


def model_from_dict(d):
    return _CLASSES[check_kind(d.get("kind"))].from_dict(d)


def save_model(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")


def load_model(path):
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except ModelError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{path}: not a valid model file ({exc})") from exc
