"""Sigmoid multilayer perceptron trained by backpropagation, with neuron pruning.

Training minimises ``0.5 * sum (desired - actual)**2`` by per-sample gradient
descent with momentum. Pruning ranks input and hidden neurons by the summed
magnitude of their outgoing weights, drops the weakest, retrains briefly and
keeps the smaller network only if validation accuracy holds up.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

FORMAT_VERSION = "mammo.mlp/1"


class TrainingError(RuntimeError):
    def __init__(self, message, epoch):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


@dataclass(frozen=True)
class MlpTrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    max_epochs: int = 2000
    patience: int = 100
    seed: int = 0
    hidden: tuple = (30, 18)
    shuffle: bool = True
    init_scale: float = 0.5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layers need at least one neuron")

    def fingerprint(self):
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class PruneConfig:
    prune_fraction: float = 0.1
    max_rounds: int = 5
    tolerance: float = 0.0
    retrain_epochs: int = 50

    def __post_init__(self):
        if not 0 < self.prune_fraction < 1:
            raise ValueError("prune_fraction must lie in (0, 1)")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.retrain_epochs < 0:
            raise ValueError("retrain_epochs must be >= 0")


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -kernels.SIGMOID_CLIP, kernels.SIGMOID_CLIP)))


@dataclass
class MlpNetwork:
    """Feed-forward network with one sigmoid output.

    ``inputs`` lists which columns of the encoded feature vector feed the
    first layer; pruning an input neuron removes its column from that list.
    """

    weights: list
    biases: list
    inputs: np.ndarray
    n_features: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        self.inputs = np.asarray(self.inputs, dtype=np.int64)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        if self.weights[0].shape[0] != len(self.inputs):
            raise ValueError("first weight matrix does not match the input count")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != len(b):
                raise ValueError("bias length does not match weight matrix")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("weight shapes do not chain")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must have exactly one neuron")
        if len(self.inputs) and (self.inputs.min() < 0 or self.inputs.max() >= self.n_features):
            raise ValueError("input index out of range")

    @property
    def sizes(self):
        return [len(self.inputs)] + [w.shape[1] for w in self.weights]

    @property
    def n_hidden(self):
        return int(sum(self.sizes[1:-1]))

    @property
    def n_neurons(self):
        """Input plus hidden neurons, the units pruning can remove."""
        return len(self.inputs) + self.n_hidden

    def copy(self):
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                          self.inputs.copy(), self.n_features, dict(self.meta))

    def flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_flat(self, vec):
        sizes, w_off, b_off, n = kernels.layout(self.sizes)
        if len(vec) != n:
            raise ValueError("flat vector has the wrong length")
        Ws, bs = [], []
        for l in range(len(sizes) - 1):
            nin, nout = int(sizes[l]), int(sizes[l + 1])
            Ws.append(np.array(vec[w_off[l]:w_off[l] + nin * nout]).reshape(nin, nout))
            bs.append(np.array(vec[b_off[l]:b_off[l] + nout]))
        return MlpNetwork(Ws, bs, self.inputs.copy(), self.n_features, dict(self.meta))

    def select(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[-1]}")
        return X[..., self.inputs]

    def activations(self, X):
        acts = [self.select(X)]
        for w, b in zip(self.weights, self.biases):
            acts.append(sigmoid(acts[-1] @ w + b))
        return acts

    def predict_proba(self, X):
        X = np.atleast_2d(X)
        return self.activations(X)[-1][:, 0]

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def to_dict(self):
        return {
            "format": FORMAT_VERSION,
            "sizes": self.sizes,
            "n_features": self.n_features,
            "inputs": self.inputs.tolist(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported MLP model format {d.get('format')!r}")
        return cls([np.array(w, dtype=np.float64).reshape(-1, len(b)) for w, b in zip(d["weights"], d["biases"])],
                   d["biases"], d["inputs"], int(d["n_features"]), dict(d.get("meta", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_network(n_features, hidden, rng, scale=0.5) -> MlpNetwork:
    sizes = [n_features, *hidden, 1]
    Ws = [rng.uniform(-scale, scale, size=(a, b)) for a, b in zip(sizes, sizes[1:])]
    bs = [rng.uniform(-scale, scale, size=b) for b in sizes[1:]]
    return MlpNetwork(Ws, bs, np.arange(n_features), n_features)


def forward(net: MlpNetwork, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a single feature vector")
    return float(net.predict_proba(x[None, :])[0])


def mlp_score(net: MlpNetwork, x) -> float:
    return forward(net, x)


def sse(desired, actual) -> float:
    d = np.asarray(desired, dtype=np.float64).reshape(-1)
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    if d.shape != a.shape:
        raise ValueError("desired and actual lengths differ")
    return float(0.5 * np.sum((d - a) ** 2))


def loss_gradient(net: MlpNetwork, x, target):
    """Analytic gradient of ``0.5 * (forward(x) - target)**2`` as a flat vector."""
    acts = net.activations(np.asarray(x, dtype=np.float64)[None, :])
    out = acts[-1][0, 0]
    delta = np.array([(out - target) * out * (1.0 - out)])
    grads = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        a = acts[l][0]
        grads[l] = (np.outer(a, delta), delta.copy())
        if l > 0:
            delta = (net.weights[l] @ delta) * a * (1.0 - a)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def backprop_epoch(net: MlpNetwork, X, y, cfg: MlpTrainConfig, rng=None, velocity=None, backend=None):
    """Run one epoch and return ``(new network, summed error, velocity)``.

    The input network is left untouched. Samples are visited in a fresh
    permutation drawn from ``rng`` when ``cfg.shuffle`` is set.
    """
    X = net.select(X)
    y = np.asarray(y, dtype=np.float64)
    params = net.flat()
    velocity = np.zeros_like(params) if velocity is None else np.array(velocity, dtype=np.float64)
    if cfg.shuffle:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        order = rng.permutation(len(y))
    else:
        order = np.arange(len(y))
    err = kernels.sgd_epoch(params, velocity, net.sizes, X, y, order, cfg.learning_rate, cfg.momentum, backend)
    if not np.isfinite(err) or not np.isfinite(params).all():
        raise TrainingError("non-finite error or weights", 1)
    return net.with_flat(params), err, velocity


def accuracy(net, X, y):
    return float(np.mean(net.predict(X) == np.asarray(y))) if len(y) else 0.0


def train(X_train, y_train, X_val, y_val, cfg: MlpTrainConfig | None = None,
          init: MlpNetwork | None = None, backend=None):
    """Train from ``init`` (or a fresh uniform initialisation) and return the best-validation snapshot.

    Returns ``(network, history)`` with per-epoch ``error`` and ``val_accuracy`` lists.
    """
    cfg = cfg or MlpTrainConfig()
    X_train = np.asarray(X_train, dtype=np.float64)
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValueError("training and validation partitions must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    net = init.copy() if init is not None else init_network(X_train.shape[1], cfg.hidden, rng, cfg.init_scale)
    Xs = net.select(X_train)
    t = np.asarray(y_train, dtype=np.float64)
    params = net.flat()
    velocity = np.zeros_like(params)

    best_acc = accuracy(net, X_val, y_val)
    best_params = params.copy()
    best_epoch = 0
    history = {"error": [], "val_accuracy": [best_acc]}
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(t)) if cfg.shuffle else np.arange(len(t))
        err = kernels.sgd_epoch(params, velocity, net.sizes, Xs, t, order,
                                cfg.learning_rate, cfg.momentum, backend)
        if not np.isfinite(err) or not np.isfinite(params).all():
            raise TrainingError("non-finite error or weights", epoch)
        acc = accuracy(net.with_flat(params), X_val, y_val)
        history["error"].append(err)
        history["val_accuracy"].append(acc)
        if acc > best_acc:
            best_acc, best_params, best_epoch, stale = acc, params.copy(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    history["best_epoch"] = best_epoch
    history["best_val_accuracy"] = best_acc
    out = net.with_flat(best_params)
    out.meta = {"config": cfg.fingerprint(), "best_epoch": best_epoch}
    return out, history


# ------------------------------------------------------------------ pruning

def neuron_strengths(net: MlpNetwork):
    """``[(strength, layer, index)]`` for every input (layer 0) and hidden neuron."""
    # rows of weights[l] are the outgoing connections of layer l's neurons
    out = []
    for l, w in enumerate(net.weights):
        out.extend((float(s), l, i) for i, s in enumerate(np.abs(w).sum(axis=1)))
    return out


def remove_neurons(net: MlpNetwork, doomed) -> MlpNetwork:
    """Drop ``(layer, index)`` neurons; layer 0 is the input layer."""
    Ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    inputs = net.inputs.copy()
    by_layer = {}
    for l, i in doomed:
        by_layer.setdefault(l, set()).add(i)
    for l, idx in by_layer.items():
        keep = np.array([i for i in range(Ws[l].shape[0]) if i not in idx], dtype=np.int64)
        Ws[l] = Ws[l][keep]
        if l == 0:
            inputs = inputs[keep]
        else:
            Ws[l - 1] = Ws[l - 1][:, keep]
            bs[l - 1] = bs[l - 1][keep]
    return MlpNetwork(Ws, bs, inputs, net.n_features, dict(net.meta))


def _pick_weakest(net, fraction):
    ranked = sorted(neuron_strengths(net))
    k = max(1, int(fraction * len(ranked)))
    remaining = {l: s for l, s in enumerate(net.sizes[:-1])}
    chosen = []
    for _, l, i in ranked:
        if len(chosen) == k:
            break
        if remaining[l] > 1:
            chosen.append((l, i))
            remaining[l] -= 1
    return chosen


def prune(net: MlpNetwork, X_train, y_train, X_val, y_val, pcfg: PruneConfig | None = None,
          cfg: MlpTrainConfig | None = None, backend=None):
    """Iteratively remove the weakest neurons while validation accuracy holds.

    A round is accepted when its validation accuracy is at least the previous
    accepted accuracy minus ``pcfg.tolerance``; the first rejected round is
    rolled back and pruning stops. Returns ``(network, log)``.
    """
    pcfg = pcfg or PruneConfig()
    cfg = cfg or MlpTrainConfig()
    current = net.copy()
    acc = accuracy(current, X_val, y_val)
    log = [{"round": 0, "neurons": current.n_neurons, "sizes": current.sizes, "val_accuracy": acc}]
    for r in range(1, pcfg.max_rounds + 1):
        doomed = _pick_weakest(current, pcfg.prune_fraction)
        if not doomed:
            break
        candidate = remove_neurons(current, doomed)
        if pcfg.retrain_epochs > 0:
            rcfg = replace(cfg, max_epochs=pcfg.retrain_epochs,
                           patience=min(cfg.patience, pcfg.retrain_epochs), seed=cfg.seed + r)
            candidate, _ = train(X_train, y_train, X_val, y_val, rcfg, init=candidate, backend=backend)
        new_acc = accuracy(candidate, X_val, y_val)
        accepted = new_acc >= acc - pcfg.tolerance
        log.append({"round": r, "removed": [list(d) for d in doomed], "neurons": candidate.n_neurons,
                    "sizes": candidate.sizes, "val_accuracy": new_acc, "accepted": accepted})
        if not accepted:
            break
        current, acc = candidate, new_acc
    current.meta = dict(current.meta, pruned_sizes=current.sizes)
    return current, log
