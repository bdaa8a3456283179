"""CHAID decision trees with likelihood-ratio tests and Bonferroni-adjusted splits.

Continuous predictors are cut into equal-frequency bins once, at the root,
and handled as ordinal afterwards. At every node the categories of each
predictor are merged while some mergeable pair looks homogeneous
(p > ``alpha_merge``); the predictor with the smallest adjusted p-value then
splits the node if that p-value is at most ``alpha_split``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import BENIGN, CLASS_NAMES, CONTINUOUS, MALIGNANT, NOMINAL, ORDINAL, Dataset, Record
from .stats import DegenerateTable, bonferroni_multiplier, g2_test

FORMAT_VERSION = "mammo.chaid/1"
N_CLASSES = 2


@dataclass(frozen=True)
class ChaidParams:
    alpha_merge: float = 0.1
    alpha_split: float = 0.1
    max_depth: int = 5
    # absolute sizes; when None they are derived from the training-set size
    min_parent: int | None = None
    min_child: int | None = None
    bin_count: int = 10
    min_parent_fraction: float = 0.02
    min_child_fraction: float = 0.01

    def __post_init__(self):
        if not 0 < self.alpha_merge <= 1:
            raise ValueError("alpha_merge must lie in (0, 1]")
        if not 0 < self.alpha_split <= 1:
            raise ValueError("alpha_split must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_child is not None and self.min_child < 1:
            raise ValueError("min_child must be >= 1")
        if self.min_parent is not None and self.min_parent < 1:
            raise ValueError("min_parent must be >= 1")
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")

    def resolve(self, n_train: int) -> "ChaidParams":
        """Fill in the size thresholds for a training set of ``n_train`` records."""
        min_parent = self.min_parent
        if min_parent is None:
            min_parent = max(2, math.ceil(self.min_parent_fraction * n_train))
        min_child = self.min_child
        if min_child is None:
            min_child = max(2, math.ceil(self.min_child_fraction * n_train))
        return ChaidParams(self.alpha_merge, self.alpha_split, self.max_depth, min_parent, min_child,
                           self.bin_count, self.min_parent_fraction, self.min_child_fraction)


# ------------------------------------------------------------------ binning

def bin_continuous(values, bin_count: int):
    """Equal-frequency binning.

    Returns ``(bins, boundaries)``: a value ``v`` falls in bin
    ``#{b in boundaries : b < v}``, so values equal to a boundary go to the
    lower bin.
    """
    if bin_count < 1:
        raise ValueError("bin_count must be positive")
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if len(v) == 0:
        raise ValueError("cannot bin an empty column")
    s = np.sort(v)
    distinct = np.unique(s)
    if len(distinct) <= bin_count:
        boundaries = distinct[:-1]
    else:
        n = len(s)
        cuts = [s[math.ceil(k * n / bin_count) - 1] for k in range(1, bin_count)]
        boundaries = np.unique(np.asarray(cuts))
        boundaries = boundaries[boundaries < s[-1]]
    return apply_bins(values, boundaries), boundaries


def apply_bins(values, boundaries):
    return np.searchsorted(np.asarray(boundaries, dtype=np.float64),
                           np.asarray(values, dtype=np.float64), side="left")


# ------------------------------------------------------------------ merging

def _pair_pvalue(a, b):
    try:
        return g2_test(np.vstack([a, b]))[2]
    except DegenerateTable:
        # both rows concentrate on the same single class: indistinguishable
        return 1.0


def merge_categories(counts, kind: str, alpha_merge: float):
    """Merge the rows of a category x class count table.

    Returns a list of groups, each a sorted list of row indices. Nominal
    categories may merge with any group, ordinal ones only with a neighbour.
    Ties between equally homogeneous pairs go to the first pair in
    (left index, right index) order.
    """
    counts = np.asarray(counts, dtype=np.float64)
    groups = [[i] for i in range(len(counts))]
    sums = [counts[i].copy() for i in range(len(counts))]
    while len(groups) > 1:
        if kind == ORDINAL:
            pairs = [(a, a + 1) for a in range(len(groups) - 1)]
        else:
            pairs = [(a, b) for a in range(len(groups)) for b in range(a + 1, len(groups))]
        best_p, best_pair = -1.0, None
        for a, b in pairs:
            p = _pair_pvalue(sums[a], sums[b])
            if p > best_p:
                best_p, best_pair = p, (a, b)
        if best_p <= alpha_merge:
            break
        a, b = best_pair
        groups[a] = sorted(groups[a] + groups[b])
        sums[a] = sums[a] + sums[b]
        del groups[b], sums[b]
    return groups


# --------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitChoice:
    attribute: str
    column: int
    kind: str
    groups: tuple
    g2: float
    dof: int
    p: float
    adjusted_p: float
    child_sizes: tuple


def class_table(x, y, categories):
    table = np.zeros((len(categories), N_CLASSES))
    for r, c in enumerate(categories):
        sel = x == c
        for k in range(N_CLASSES):
            table[r, k] = np.count_nonzero(sel & (y == k))
    return table


def evaluate_attribute(x, y, kind, params: ChaidParams):
    """Merge, test and Bonferroni-adjust one predictor at a node.

    Returns ``(groups of codes, g2, dof, p, adjusted_p, child sizes)`` or
    ``None`` when the predictor cannot split the node.
    """
    cats = np.unique(x)
    if len(cats) < 2:
        return None
    table = class_table(x, y, cats)
    groups = merge_categories(table, kind, params.alpha_merge)
    if len(groups) < 2:
        return None
    merged = np.array([table[g].sum(axis=0) for g in groups])
    try:
        g2, dof, p = g2_test(merged)
    except DegenerateTable:
        return None
    adjusted = min(1.0, p * bonferroni_multiplier(len(cats), len(groups), kind))
    code_groups = tuple(tuple(float(cats[i]) for i in g) for g in groups)
    sizes = tuple(int(s) for s in merged.sum(axis=1))
    return code_groups, g2, dof, p, adjusted, sizes


def select_split(X, y, candidates, params: ChaidParams):
    """Pick the predictor with the smallest adjusted p-value.

    ``candidates`` lists ``(name, kind)`` per column of ``X``. Predictors that
    would produce a child smaller than ``params.min_child`` are not eligible.
    Equal adjusted p-values keep the lower column. Returns ``None`` when the
    winner's adjusted p-value exceeds ``alpha_split``.
    """
    best = None
    for k, (name, kind) in enumerate(candidates):
        res = evaluate_attribute(X[:, k], y, kind, params)
        if res is None:
            continue
        groups, g2, dof, p, adjusted, sizes = res
        if params.min_child is not None and min(sizes) < params.min_child:
            continue
        if best is None or adjusted < best.adjusted_p:
            best = SplitChoice(name, k, kind, groups, g2, dof, p, adjusted, sizes)
    if best is None or best.adjusted_p > params.alpha_split:
        return None
    return best


# -------------------------------------------------------------------- tree

@dataclass
class ChaidNode:
    counts: tuple
    attribute: str | None = None
    column: int | None = None
    kind: str | None = None
    groups: tuple = ()
    adjusted_p: float | None = None
    children: list = field(default_factory=list)

    @property
    def is_leaf(self):
        return not self.children

    @property
    def n(self):
        return int(sum(self.counts))

    @property
    def prediction(self):
        # ties go to benign
        return MALIGNANT if self.counts[MALIGNANT] > self.counts[BENIGN] else BENIGN

    @property
    def score(self):
        return self.counts[MALIGNANT] / self.n if self.n else 0.0

    def child_for(self, code):
        for g, child in zip(self.groups, self.children):
            if code in g:
                return child
        sizes = [c.n for c in self.children]
        return self.children[int(np.argmax(sizes))]

    def depth(self):
        return 0 if self.is_leaf else 1 + max(c.depth() for c in self.children)

    def count_nodes(self):
        return 1 + sum(c.count_nodes() for c in self.children)

    def to_dict(self):
        d = {"counts": list(self.counts)}
        if not self.is_leaf:
            d.update(attribute=self.attribute, column=self.column, kind=self.kind,
                     groups=[list(g) for g in self.groups], adjusted_p=self.adjusted_p,
                     children=[c.to_dict() for c in self.children])
        return d

    @classmethod
    def from_dict(cls, d):
        node = cls(tuple(int(c) for c in d["counts"]))
        if "children" in d:
            node.attribute = d["attribute"]
            node.column = int(d["column"])
            node.kind = d["kind"]
            node.groups = tuple(tuple(float(c) for c in g) for g in d["groups"])
            node.adjusted_p = float(d["adjusted_p"])
            node.children = [cls.from_dict(c) for c in d["children"]]
        return node


@dataclass
class ChaidTree:
    root: ChaidNode
    params: ChaidParams
    # (name, kind used by the tree, schema column) per predictor
    predictors: tuple
    bins: dict

    @property
    def depth(self):
        return self.root.depth()

    @property
    def n_nodes(self):
        return self.root.count_nodes()

    def _codes(self, values):
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        out = np.empty((len(values), len(self.predictors)))
        for k, (name, _, col) in enumerate(self.predictors):
            x = values[:, col]
            if np.isnan(x).any():
                raise ValueError(f"attribute {name!r} is MISSING; CHAID expects imputed data")
            out[:, k] = apply_bins(x, self.bins[name]) if name in self.bins else x
        return out

    def leaf_for(self, codes):
        node = self.root
        while not node.is_leaf:
            node = node.child_for(float(codes[node.column]))
        return node

    def predict_values(self, values):
        """Return ``(classes, scores)`` for a matrix of raw schema values."""
        codes = self._codes(values)
        leaves = [self.leaf_for(row) for row in codes]
        return (np.array([lf.prediction for lf in leaves], dtype=np.int64),
                np.array([lf.score for lf in leaves], dtype=np.float64))

    def predict(self, ds: Dataset):
        return self.predict_values(ds.values)

    def check_invariants(self):
        """Raise AssertionError if the tree breaks a structural guarantee of the learner."""
        p = self.params
        assert self.depth <= p.max_depth, f"depth {self.depth} > max_depth {p.max_depth}"

        def visit(node):
            if node.is_leaf:
                return
            assert node.adjusted_p is not None and node.adjusted_p <= p.alpha_split, \
                f"adjusted p {node.adjusted_p} above alpha_split"
            assert len(node.groups) >= 2
            flat = [c for g in node.groups for c in g]
            assert len(flat) == len(set(flat)), "groups overlap"
            assert sum(c.n for c in node.children) == node.n, "children do not partition the node"
            if node.kind == ORDINAL:
                order = sorted(flat)
                for g in node.groups:
                    pos = sorted(order.index(c) for c in g)
                    assert pos == list(range(pos[0], pos[-1] + 1)), f"ordinal group {g} not contiguous"
            for child in node.children:
                if p.min_child is not None:
                    assert child.n >= p.min_child, f"child of size {child.n} < min_child {p.min_child}"
                visit(child)

        visit(self.root)

    def to_dict(self):
        return {
            "format": FORMAT_VERSION,
            "params": asdict(self.params),
            "predictors": [list(p) for p in self.predictors],
            "bins": {k: [float(b) for b in v] for k, v in sorted(self.bins.items())},
            "root": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported CHAID model format {d.get('format')!r}")
        return cls(ChaidNode.from_dict(d["root"]), ChaidParams(**d["params"]),
                   tuple((n, k, int(c)) for n, k, c in d["predictors"]),
                   {k: np.asarray(v, dtype=np.float64) for k, v in d["bins"].items()})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def render(self) -> str:
        lines = []

        def label(name, group):
            if name in self.bins:
                edges = self.bins[name]
                parts = []
                for b in group:
                    b = int(b)
                    lo = "-inf" if b == 0 else f"{edges[b - 1]:g}"
                    hi = "inf" if b == len(edges) else f"{edges[b]:g}"
                    parts.append(f"({lo}, {hi}]")
                return " | ".join(parts)
            return "{" + ", ".join(f"{int(c)}" for c in group) + "}"

        def visit(node, prefix, indent):
            b, m = node.counts
            tail = f"n={node.n} benign={b} malignant={m} -> {CLASS_NAMES[node.prediction]} ({node.score:.3f})"
            lines.append(f"{'  ' * indent}{prefix}{tail}")
            for g, child in zip(node.groups, node.children):
                visit(child, f"{node.attribute} in {label(node.attribute, g)}: ", indent + 1)

        visit(self.root, "[root] ", 0)
        return "\n".join(lines)


def _checking():
    return os.environ.get("MAMMO_CHECK_TREES", "").lower() in ("1", "true", "yes")


def grow_tree(train: Dataset, params: ChaidParams | None = None,
              include_non_predictive: bool = False) -> ChaidTree:
    """Grow a CHAID tree on an imputed training set."""
    if len(train) == 0:
        raise ValueError("cannot grow a tree on an empty training set")
    params = (params or ChaidParams()).resolve(len(train))
    attrs = [(j, a) for j, a in enumerate(train.schema) if a.predictive or include_non_predictive]
    predictors = []
    bins = {}
    cols = []
    for j, attr in attrs:
        x = train.values[:, j]
        if np.isnan(x).any():
            raise ValueError(f"attribute {attr.name!r} has MISSING cells; impute before growing a tree")
        if attr.kind == CONTINUOUS:
            codes, edges = bin_continuous(x, params.bin_count)
            bins[attr.name] = edges
            cols.append(codes.astype(np.float64))
            predictors.append((attr.name, ORDINAL, j))
        else:
            cols.append(x)
            predictors.append((attr.name, attr.kind, j))
    X = np.column_stack(cols) if cols else np.zeros((len(train), 0))
    y = train.labels
    candidates = [(name, kind) for name, kind, _ in predictors]

    def grow(rows, depth):
        yr = y[rows]
        counts = (int(np.count_nonzero(yr == BENIGN)), int(np.count_nonzero(yr == MALIGNANT)))
        node = ChaidNode(counts)
        if depth >= params.max_depth or min(counts) == 0 or len(rows) < params.min_parent:
            return node
        choice = select_split(X[rows], yr, candidates, params)
        if choice is None:
            return node
        node.attribute, node.column, node.kind = choice.attribute, choice.column, choice.kind
        node.groups, node.adjusted_p = choice.groups, choice.adjusted_p
        xr = X[rows, choice.column]
        for g in choice.groups:
            node.children.append(grow(rows[np.isin(xr, g)], depth + 1))
        return node

    tree = ChaidTree(grow(np.arange(len(y)), 0), params, tuple(predictors), bins)
    if _checking():
        tree.check_invariants()
    return tree


def chaid_predict(tree: ChaidTree, rec: Record):
    """Return ``(class, malignant score)`` for one record."""
    if any(rec.values[col] is None for _, _, col in tree.predictors):
        raise ValueError("record has MISSING predictive cells")
    row = [np.nan if v is None else float(v) for v in rec.values]
    leaf = tree.leaf_for(tree._codes(row)[0])
    return leaf.prediction, leaf.score
