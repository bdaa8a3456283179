"""Missing-value imputation with one C&RT tree per incomplete attribute.

Each tree is fitted on the original (pre-imputation) data, so the order in
which attributes are filled does not matter. A filler then writes the tree's
prediction into the MISSING cells only.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .dataset import CONTINUOUS, NOMINAL, Dataset, Record

logger = logging.getLogger(__name__)

LABEL_PREDICTOR = "__label__"


@dataclass(frozen=True)
class CartParams:
    max_depth: int = 5
    min_leaf: int = 5
    min_impurity_decrease: float = 1e-7

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.min_impurity_decrease < 0:
            raise ValueError("min_impurity_decrease must be >= 0")


def gini_impurity(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any():
        raise ValueError("counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini impurity of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _variance(y):
    return float(np.var(y)) if len(y) else 0.0


@dataclass
class CartNode:
    value: float
    n: int
    predictor: str | None = None
    column: int | None = None
    # categorical split: codes routed left; ordered split: value <= threshold routed left
    left_codes: tuple | None = None
    threshold: float | None = None
    missing_left: bool = True
    gain: float = 0.0
    left: "CartNode | None" = None
    right: "CartNode | None" = None

    @property
    def is_leaf(self):
        return self.left is None

    def goes_left(self, v):
        if np.isnan(v):
            return self.missing_left
        if self.left_codes is not None:
            return v in self.left_codes
        return v <= self.threshold

    def depth(self):
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self):
        d = {"value": self.value, "n": self.n}
        if not self.is_leaf:
            d.update(predictor=self.predictor, column=self.column,
                     left_codes=None if self.left_codes is None else list(self.left_codes),
                     threshold=self.threshold, missing_left=self.missing_left, gain=self.gain,
                     left=self.left.to_dict(), right=self.right.to_dict())
        return d


@dataclass
class CartTree:
    target: str
    categorical: bool
    predictors: tuple
    root: CartNode
    include_label: bool = False

    def predict_row(self, row, label=None):
        node = self.root
        while not node.is_leaf:
            v = label if node.predictor == LABEL_PREDICTOR else row[node.column]
            node = node.left if node.goes_left(float(v)) else node.right
        return node.value

    def predict(self, values, labels=None):
        labels = np.zeros(len(values)) if labels is None else labels
        return np.array([self.predict_row(values[i], labels[i]) for i in range(len(values))])

    @property
    def depth(self):
        return self.root.depth()


def _predictor_table(ds: Dataset, target: str, include_label: bool):
    """Return [(name, kind, column index or None)] and the matching matrix."""
    specs = []
    cols = []
    for j, attr in enumerate(ds.schema):
        if attr.name == target or not attr.predictive:
            continue
        specs.append((attr.name, attr.kind, j))
        cols.append(ds.values[:, j])
    if include_label:
        specs.append((LABEL_PREDICTOR, NOMINAL, None))
        cols.append(ds.labels.astype(np.float64))
    X = np.column_stack(cols) if cols else np.zeros((len(ds), 0))
    return specs, X


class _Impurity:
    def __init__(self, categorical, codes):
        self.categorical = categorical
        self.codes = codes

    def __call__(self, y):
        if len(y) == 0:
            return 0.0
        if self.categorical:
            counts = (y[:, None] == self.codes[None, :]).sum(axis=0)
            return gini_impurity(counts)
        return _variance(y)

    def leaf_value(self, y):
        if self.categorical:
            counts = (y[:, None] == self.codes[None, :]).sum(axis=0)
            return float(self.codes[int(np.argmax(counts))])  # argmax takes the smallest code on ties
        return float(np.mean(y))


def split_candidates(x, kind):
    """Yield ``(left_codes, threshold)`` for every binary split of the observed values of ``x``.

    Nominal predictors give every two-way partition of the observed codes, with
    the smallest code always on the left, in lexicographic order of the left
    subset. Ordered predictors give midpoints between consecutive distinct values.
    """
    observed = np.unique(x[~np.isnan(x)])
    if len(observed) < 2:
        return []
    if kind == NOMINAL:
        first, rest = observed[0], list(observed[1:])
        out = []
        for size in range(0, len(rest)):
            for combo in combinations(rest, size):
                out.append((tuple(float(c) for c in (first, *combo)), None))
        out.sort(key=lambda c: c[0])
        return out
    return [(None, float(t)) for t in (observed[:-1] + observed[1:]) / 2.0]


def _route(x, left_codes, threshold):
    present = ~np.isnan(x)
    if left_codes is not None:
        left = np.isin(x, np.asarray(left_codes))
    else:
        with np.errstate(invalid="ignore"):
            left = x <= threshold
    left &= present
    right = present & ~left
    missing_left = left.sum() >= right.sum()
    if missing_left:
        left |= ~present
    else:
        right |= ~present
    return left, right, bool(missing_left)


def best_split(X, y, specs, impurity, min_leaf):
    """Exhaustive search for the split with the largest impurity decrease.

    Ties keep the earliest candidate: lowest predictor index, then the
    lexicographically smallest left subset or the smallest threshold.
    Returns ``None`` or ``(gain, spec index, left_codes, threshold, missing_left, left mask)``.
    """
    n = len(y)
    parent = impurity(y)
    best = None
    for k, (_, kind, _) in enumerate(specs):
        x = X[:, k]
        for left_codes, threshold in split_candidates(x, kind):
            left, right, missing_left = _route(x, left_codes, threshold)
            nl, nr = int(left.sum()), int(right.sum())
            if nl < min_leaf or nr < min_leaf:
                continue
            gain = parent - (nl * impurity(y[left]) + nr * impurity(y[right])) / n
            if best is None or gain > best[0]:
                best = (gain, k, left_codes, threshold, missing_left, left)
    return best


def train_cart(ds: Dataset, target: str, params: CartParams | None = None,
               include_label: bool = False) -> CartTree:
    params = params or CartParams()
    t = ds.index(target)
    attr = ds.schema[t]
    observed = ~np.isnan(ds.values[:, t])
    if not observed.any():
        raise ValueError(f"attribute {target!r} has no observed values to learn from")
    if observed.sum() < params.min_leaf:
        logger.warning("only %d observed values for %s; fitting a single leaf", observed.sum(), target)

    specs, X_all = _predictor_table(ds, target, include_label)
    X = X_all[observed]
    y = ds.values[observed, t]
    categorical = attr.kind != CONTINUOUS
    impurity = _Impurity(categorical, np.asarray(attr.domain, dtype=float) if categorical else None)

    def grow(rows, depth):
        ys = y[rows]
        node = CartNode(value=impurity.leaf_value(ys), n=len(rows))
        if depth >= params.max_depth or len(rows) < 2 * params.min_leaf or impurity(ys) == 0.0:
            return node
        found = best_split(X[rows], ys, specs, impurity, params.min_leaf)
        if found is None:
            return node
        gain, k, left_codes, threshold, missing_left, left = found
        if gain <= 0.0 or gain < params.min_impurity_decrease:
            return node
        node.predictor, _, node.column = specs[k]
        node.left_codes, node.threshold, node.missing_left, node.gain = left_codes, threshold, missing_left, gain
        node.left = grow(rows[left], depth + 1)
        node.right = grow(rows[~left], depth + 1)
        return node

    root = grow(np.arange(len(y)), 0)
    return CartTree(target, categorical, tuple(s[0] for s in specs), root, include_label)


def cart_predict(tree: CartTree, rec: Record):
    row = np.array([np.nan if v is None else float(v) for v in rec.values])
    value = tree.predict_row(row, rec.label)
    return int(value) if tree.categorical else value


def impute_all(ds: Dataset, params: CartParams | None = None, seed: int = 0,
               include_label: bool = False) -> Dataset:
    """Fill every MISSING cell with its attribute's C&RT prediction.

    Tree induction is deterministic; ``seed`` is accepted so that callers can
    thread one seed through every pipeline stage, and is otherwise unused.
    """
    del seed
    params = params or CartParams()
    values = ds.values.copy()
    missing = ds.missing_mask()
    for j, attr in enumerate(ds.schema):
        rows = np.flatnonzero(missing[:, j])
        if len(rows) == 0:
            continue
        tree = train_cart(ds, attr.name, params, include_label)
        values[rows, j] = tree.predict(ds.values[rows], ds.labels[rows])
        logger.debug("imputed %d cells of %s (tree depth %d)", len(rows), attr.name, tree.depth)
    return ds.replace_values(values)


def fill_log(before: Dataset, after: Dataset):
    """List ``{"attribute", "record", "value"}`` for each cell filled between two datasets."""
    entries = []
    filled = before.missing_mask() & ~after.missing_mask()
    for i, j in zip(*np.nonzero(filled)):
        attr = before.schema[j]
        v = after.values[i, j]
        entries.append({"attribute": attr.name, "record": int(i),
                        "value": int(v) if attr.categorical else float(v)})
    return entries


def write_fill_log(entries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(entries, indent=1) + "\n")
