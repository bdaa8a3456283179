"""Soft-margin SVM with a polynomial kernel, trained in dual form by SMO.

Labels are mapped benign -> -1, malignant -> +1. The decision function is
``D(x) = sum_i alpha_i y_i K(x_i, x) + b`` over the stored support vectors.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

FORMAT_VERSION = "mammo.svm/1"


@dataclass(frozen=True)
class KernelParams:
    gamma: float = 1.0
    coef_r: float = 0.1
    degree: int = 4

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("degree must be a positive integer")
        object.__setattr__(self, "degree", int(self.degree))


@dataclass(frozen=True)
class SvmParams:
    c: float = 10.0
    kkt_tolerance: float = 1e-3
    max_passes: int = 10
    max_updates: int = 100_000_000

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("C must be positive")
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


def poly_kernel(a, b, k: KernelParams) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("kernel arguments differ in length")
    return float((k.gamma * np.dot(a, b) + k.coef_r) ** k.degree)


def gram(A, B, k: KernelParams):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"feature widths differ: {A.shape[1]} vs {B.shape[1]}")
    return (k.gamma * (A @ B.T) + k.coef_r) ** k.degree


def to_signed(y):
    y = np.asarray(y)
    vals = set(np.unique(y).tolist())
    if vals <= {0, 1}:
        return np.where(y == 1, 1.0, -1.0)
    if vals <= {-1, 1}:
        return y.astype(np.float64)
    raise ValueError(f"labels must be 0/1 or -1/+1, got {sorted(vals)}")


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    labels: np.ndarray
    alphas: np.ndarray
    b: float
    kernel: KernelParams
    c: float
    support_indices: np.ndarray
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = True
    passes: int = 0
    updates: int = 0

    @property
    def width(self):
        return self.support_vectors.shape[1]

    def decision_values(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.width:
            raise ValueError(f"expected {self.width} features, got {X.shape[1]}")
        return gram(X, self.support_vectors, self.kernel) @ (self.alphas * self.labels) + self.b

    def predict(self, X):
        # D == 0 counts as malignant
        return (self.decision_values(X) >= 0.0).astype(np.int64)

    def w_norm_sq(self):
        ay = self.alphas * self.labels
        return float(ay @ gram(self.support_vectors, self.support_vectors, self.kernel) @ ay)

    def dual_objective(self):
        return float(self.alphas.sum() - 0.5 * self.w_norm_sq())

    def to_dict(self):
        return {
            "format": FORMAT_VERSION,
            "kernel": asdict(self.kernel),
            "c": self.c,
            "b": self.b,
            "support_vectors": self.support_vectors.tolist(),
            "labels": self.labels.tolist(),
            "alphas": self.alphas.tolist(),
            "support_indices": self.support_indices.tolist(),
            "converged": self.converged,
            "passes": self.passes,
            "updates": self.updates,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported SVM model format {d.get('format')!r}")
        sv = np.array(d["support_vectors"], dtype=np.float64)
        return cls(sv.reshape(len(d["alphas"]), -1), np.array(d["labels"], dtype=np.float64),
                   np.array(d["alphas"], dtype=np.float64), float(d["b"]), KernelParams(**d["kernel"]),
                   float(d["c"]), np.array(d["support_indices"], dtype=np.int64),
                   converged=bool(d["converged"]), passes=int(d["passes"]), updates=int(d["updates"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_svm(X, y, p: SvmParams | None = None, k: KernelParams | None = None, backend=None) -> SvmModel:
    p = p or SvmParams()
    k = k or KernelParams()
    X = np.asarray(X, dtype=np.float64)
    ys = to_signed(y)
    if len(np.unique(ys)) < 2:
        raise ValueError("degenerate labels: need at least one sample of each class")
    K = gram(X, X, k)
    alpha, b, trace, converged, passes, updates = kernels.smo(
        K, ys, p.c, p.kkt_tolerance, max_passes=p.max_passes, max_updates=p.max_updates, backend=backend)
    if not converged:
        logger.warning("SMO stopped after %d full passes / %d updates without meeting the KKT tolerance",
                       passes, updates)
    keep = np.flatnonzero(alpha > 0.0)
    return SvmModel(X[keep].copy(), ys[keep], alpha[keep], b, k, p.c, keep, trace, converged, passes, updates)


def decision_value(m: SvmModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("decision_value expects one feature vector")
    return float(m.decision_values(x[None, :])[0])


def margin(m: SvmModel) -> float:
    w2 = m.w_norm_sq()
    if w2 <= 0.0:
        raise ValueError("weight vector has zero norm")
    return 1.0 / np.sqrt(w2)


def slack_values(m: SvmModel, X, y):
    return np.maximum(0.0, 1.0 - to_signed(y) * m.decision_values(X))


def primal_objective(m: SvmModel, X, y) -> float:
    return float(m.c * slack_values(m, X, y).sum() + 0.5 * m.w_norm_sq())


@dataclass
class KktReport:
    residuals: np.ndarray
    max_residual: float
    sum_alpha_y: float
    n_support: int
    n_bounded: int

    def to_dict(self):
        return {"max_residual": self.max_residual, "sum_alpha_y": self.sum_alpha_y,
                "n_support": self.n_support, "n_bounded": self.n_bounded}


def full_alphas(m: SvmModel, n: int):
    alpha = np.zeros(n)
    alpha[m.support_indices] = m.alphas
    return alpha


def kkt_report(m: SvmModel, X, y, p: SvmParams | None = None) -> KktReport:
    """Per-sample KKT violations measured on the training rows the model was fitted on.

    alpha = 0 needs ``y D >= 1``, 0 < alpha < C needs ``y D = 1`` and
    alpha = C needs ``y D <= 1``; a residual is the size of the violation.
    ``p`` is accepted for interface symmetry; the model carries its own C.
    """
    del p
    ys = to_signed(y)
    alpha = full_alphas(m, len(ys))
    f = ys * m.decision_values(X)
    res = np.where(alpha <= 0.0, np.maximum(0.0, 1.0 - f),
                   np.where(alpha >= m.c, np.maximum(0.0, f - 1.0), np.abs(f - 1.0)))
    return KktReport(res, float(res.max()) if len(res) else 0.0, float(np.dot(alpha, ys)),
                     int((alpha > 0).sum()), int((alpha >= m.c).sum()))
