"""Seeded train/test partitioning with largest-remainder rounding."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dataset import Dataset


@dataclass(frozen=True)
class PartitionSpec:
    train_fraction: float = 0.7
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def allocate(sizes, fraction):
    """Integer train counts per group summing to round(fraction * total) by largest remainder.

    Leftover units go to the groups with the largest fractional parts, lower
    group index first on ties.
    """
    sizes = [int(n) for n in sizes]
    # exact rational arithmetic on the float's binary value, so no quota is misrounded
    f = Fraction(fraction)
    quotas = [n * f for n in sizes]
    base = [math.floor(q) for q in quotas]
    total = math.floor(sum(sizes) * f + Fraction(1, 2))
    extra = total - sum(base)
    order = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:max(extra, 0)]:
        base[i] += 1
    base = np.asarray(base, dtype=np.int64)
    return base


def split_indices(labels, spec: PartitionSpec):
    """Return sorted ``(train_idx, test_idx)`` for a label vector."""
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        classes = np.unique(labels)
        groups = [np.flatnonzero(labels == c) for c in classes]
        for c, g in zip(classes, groups):
            if len(g) < 2:
                raise ValueError(f"class {c} has {len(g)} record(s); stratification needs at least 2")
        counts = allocate([len(g) for g in groups], spec.train_fraction)
    else:
        groups = [np.arange(n)]
        counts = allocate([n], spec.train_fraction)
    train, test = [], []
    for g, k in zip(groups, counts):
        perm = rng.permutation(g)
        train.append(perm[:k])
        test.append(perm[k:])
    train = np.sort(np.concatenate(train))
    test = np.sort(np.concatenate(test))
    if len(train) == 0 or len(test) == 0:
        raise ValueError(f"train_fraction {spec.train_fraction} leaves one side of the split empty")
    return train, test


def split(ds: Dataset, spec: PartitionSpec):
    train, test = split_indices(ds.labels, spec)
    return ds.subset(train), ds.subset(test)
