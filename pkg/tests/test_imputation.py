from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from mammo.dataset import MAMMO_SCHEMA, Dataset, Record, audit
from mammo.imputation import (CartParams, cart_predict, fill_log, gini_impurity, impute_all, train_cart,
                              write_fill_log)

PREDICTORS = {"age": "continuous", "shape": "nominal", "margin": "nominal", "density": "ordinal"}


def test_gini_examples():
    assert gini_impurity([10, 0]) == 0.0
    assert gini_impurity([5, 5]) == 0.5
    assert gini_impurity([3, 1]) == pytest.approx(0.375)
    with pytest.raises(ValueError):
        gini_impurity([0, 0])


def test_toy_tree_splits_on_shape():
    # age also separates the toy set; pin it so shape is the only informative predictor
    ds = Dataset(MAMMO_SCHEMA, [[4, 50, 1, 1, 1], [4, 50, 1, 1, 1], [4, 50, 4, 1, 3], [4, 50, 4, 1, 3]],
                 [0, 0, 1, 1])
    tree = train_cart(ds, "density", CartParams(min_leaf=1))
    assert tree.root.predictor == "shape"
    assert tree.root.left.value == 1 and tree.root.right.value == 3
    assert cart_predict(tree, Record((4, 50, 4, 1, None), 1)) == 3
    # a MISSING split attribute follows the majority branch (2 vs 2 ties go left)
    assert cart_predict(tree, Record((4, 50, None, 1, None), 1)) == 1


def test_single_observed_value_gives_single_leaf():
    ds = Dataset(MAMMO_SCHEMA, [[4, 50, 1, 1, 2], [4, 60, 2, 3, 2], [4, 70, 3, 1, np.nan]], [0, 1, 1])
    tree = train_cart(ds, "density", CartParams(min_leaf=1))
    assert tree.root.is_leaf and tree.root.value == 2
    assert cart_predict(tree, Record((1, 1, 1, 1, None), 0)) == 2


def test_constant_predictors_degenerate_leaf():
    ds = Dataset(MAMMO_SCHEMA, [[4, 50, 1, 1, 2], [4, 50, 1, 1, 3], [4, 50, 1, 1, 3]], [0, 1, 1])
    tree = train_cart(ds, "density", CartParams(min_leaf=1))
    assert tree.root.is_leaf and tree.root.value == 3


# --------------------------------------------------- brute-force root split

def _exact_impurity(values, categorical):
    n = len(values)
    if n == 0:
        return Fraction(0)
    if categorical:
        _, counts = np.unique(values, return_counts=True)
        return 1 - sum(Fraction(int(c), n) ** 2 for c in counts)
    vals = [Fraction(v).limit_denominator(1000) for v in values]
    mean = sum(vals) / n
    return sum((v - mean) ** 2 for v in vals) / n


def brute_force_root(ds, target, min_leaf):
    """All (attribute, binary split) candidates with exact gains; returns (best gain, [winners])."""
    t = ds.index(target)
    obs = ~np.isnan(ds.values[:, t])
    y = ds.values[obs, t]
    categorical = ds.schema[t].kind != "continuous"
    parent = _exact_impurity(y, categorical)
    n = len(y)
    cands = []
    for name, kind in PREDICTORS.items():
        if name == target:
            continue
        x = ds.values[obs, ds.index(name)]
        present = ~np.isnan(x)
        codes = sorted(set(x[present].tolist()))
        if kind == "nominal":
            splits = []
            for size in range(1, len(codes)):
                for left in combinations(codes, size):
                    if codes[0] in left:  # canonical orientation
                        splits.append((left, np.isin(x, left) & present))
        else:
            splits = [(v, (x <= v) & present) for v in codes[:-1]]
        for key, left in splits:
            right = present & ~left
            if left.sum() >= right.sum():
                left = left | ~present
            else:
                right = right | ~present
            if left.sum() < min_leaf or right.sum() < min_leaf:
                continue
            gain = parent - (left.sum() * _exact_impurity(y[left], categorical)
                             + right.sum() * _exact_impurity(y[right], categorical)) / n
            cands.append((gain, name, key, left))
    if not cands:
        return None, []
    best = max(c[0] for c in cands)
    return best, [c for c in cands if c[0] == best]


def _root_left_mask(tree, ds, target):
    t = ds.index(target)
    obs = ~np.isnan(ds.values[:, t])
    node = tree.root
    return np.array([node.goes_left(v) for v in ds.values[obs, node.column]])


small_rows = st.lists(
    st.tuples(
        st.one_of(st.just(np.nan), st.sampled_from([30.0, 40.0, 45.0, 60.0, 70.0])),
        st.one_of(st.just(np.nan), st.integers(1, 4).map(float)),
        st.one_of(st.just(np.nan), st.integers(1, 5).map(float)),
        st.one_of(st.just(np.nan), st.integers(1, 4).map(float)),
        st.integers(0, 1),
    ),
    min_size=4, max_size=12,
)


@pytest.mark.parametrize("target", ["density", "shape", "age"])
@given(rows=small_rows)
@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_root_split_matches_brute_force(target, rows):
    values = np.array([[4.0, a, s, m, d] for a, s, m, d, _ in rows])
    ds = Dataset(MAMMO_SCHEMA, values, [r[-1] for r in rows])
    if np.isnan(ds.values[:, ds.index(target)]).all():
        return
    tree = train_cart(ds, target, CartParams(max_depth=1, min_leaf=1, min_impurity_decrease=0.0))
    best, winners = brute_force_root(ds, target, 1)
    if best is None or best <= 0:
        assert tree.root.is_leaf
        return
    assert not tree.root.is_leaf
    assert tree.root.gain == pytest.approx(float(best), abs=1e-9)
    mask = _root_left_mask(tree, ds, target)
    assert any(np.array_equal(mask, w[3]) and w[1] == tree.root.predictor for w in winners)


def test_tie_break_lowest_attribute_then_smallest_subset():
    # age and shape separate the target equally well; age comes first in the schema
    rows = [[4, 30, 1, 1, 1], [4, 30, 1, 1, 1], [4, 70, 2, 1, 4], [4, 70, 2, 1, 4]]
    ds = Dataset(MAMMO_SCHEMA, rows, [0, 0, 0, 0])
    tree = train_cart(ds, "density", CartParams(max_depth=1, min_leaf=1))
    assert tree.root.predictor == "age" and tree.root.threshold == 50.0
    # margin with three codes: {1} | {2,3} and {1,2} | {3} tie; the smaller left subset (1,) wins
    rows = [[4, 50, 1, 1, 1], [4, 50, 1, 2, 2], [4, 50, 1, 3, 2], [4, 50, 1, 1, 1]]
    ds = Dataset(MAMMO_SCHEMA, rows, [0, 0, 0, 0])
    tree = train_cart(ds, "density", CartParams(max_depth=1, min_leaf=1))
    assert tree.root.predictor == "margin" and tree.root.left_codes == (1.0,)


# ---------------------------------------------------------------- impute_all

def test_impute_all_fills_and_preserves(synth):
    out = impute_all(synth)
    assert out.n_missing() == 0
    keep = ~synth.missing_mask()
    assert np.array_equal(out.values[keep].view(np.int64), synth.values[keep].view(np.int64))
    for j, attr in enumerate(out.schema):
        if attr.categorical:
            assert np.isin(out.values[:, j], attr.domain).all()
    assert audit(out).total_missing == 0


def test_impute_all_noop_on_complete(synth):
    complete = synth.subset(np.flatnonzero(~synth.missing_mask().any(axis=1)))
    out = impute_all(complete)
    np.testing.assert_array_equal(out.values, complete.values)


def test_impute_deterministic_and_seed_free(synth):
    a = impute_all(synth, seed=0)
    b = impute_all(synth, seed=123)
    np.testing.assert_array_equal(a.values, b.values)


def test_impute_with_label_predictor(synth):
    out = impute_all(synth, include_label=True)
    assert out.n_missing() == 0


def test_fill_log(tmp_path, synth):
    out = impute_all(synth)
    entries = fill_log(synth, out)
    assert len(entries) == synth.n_missing()
    e = entries[0]
    assert out.values[e["record"], synth.index(e["attribute"])] == e["value"]
    write_fill_log(entries, tmp_path / "log" / "fill.json")
    assert (tmp_path / "log" / "fill.json").is_file()


def test_proxy_imputation_fills_coerced_codes(proxy_file):
    from mammo.dataset import load_dataset
    ds = load_dataset(proxy_file)
    rep = audit(ds)
    # the complete-case file still carries BI-RADS codes outside 0..5 (6 and 55)
    assert rep.total_missing == 0 and rep.total_out_of_domain == 10
    out = impute_all(ds)
    assert out.n_missing() == 0
