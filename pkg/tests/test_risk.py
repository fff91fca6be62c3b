import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodrisknet.risk import (ClusterFeatureSummary, aggregate_risk_components,
                               assign_risk_levels, cluster_feature_means, compute_risk_values,
                               minmax_scale, rate_clusters)
from oracles import naive_risk_rating


def random_instance(rng, m_max=200, k_max=6):
    k = int(rng.integers(1, k_max + 1))
    m = int(rng.integers(k, m_max + 1))
    labels = np.concatenate([np.arange(k), rng.integers(0, k, m - k)])
    rng.shuffle(labels)
    fr = rng.lognormal(0.0, 1.5, size=(m, 10)) * rng.choice([1.0, 100.0, 1e4], size=10)
    return fr, labels


# ---------------------------------------------------------------- minmax_scale

def test_minmax_example():
    out = minmax_scale(np.array([[2.0], [4.0], [6.0]]))
    assert out[:, 0].tolist() == [0.0, 0.5, 1.0]


def test_minmax_constant_column_warns():
    x = np.array([[1.0, 3.0], [2.0, 3.0]])
    with pytest.warns(RuntimeWarning):
        out = minmax_scale(x)
    assert out[:, 1].tolist() == [0.0, 0.0]
    assert out[:, 0].tolist() == [0.0, 1.0]


def test_minmax_bounded(rng):
    out = minmax_scale(rng.normal(size=(40, 10)) * 1e3)
    assert out.min() == 0.0 and out.max() == 1.0


# ---------------------------------------------------------------- cluster means

def test_single_cluster_means_are_column_means(rng):
    x = rng.random((12, 10))
    s = cluster_feature_means(x, np.zeros(12, dtype=int))
    assert np.allclose(s.means[0], x.mean(axis=0), atol=1e-15)
    assert s.counts.tolist() == [12]


def test_two_point_average():
    x = np.zeros((3, 10))
    x[:, 0] = [0.2, 0.4, 0.9]
    s = cluster_feature_means(x, [0, 0, 1])
    assert abs(s.means[0, 0] - 0.3) < 1e-15
    assert s.means[1, 0] == 0.9


def test_means_permutation_invariant(rng):
    x = rng.random((30, 10))
    labels = rng.integers(0, 4, 30)
    labels[:4] = np.arange(4)
    perm = rng.permutation(30)
    a = cluster_feature_means(x, labels).means
    b = cluster_feature_means(x[perm], labels[perm]).means
    assert np.allclose(a, b, atol=1e-15)


def test_empty_cluster_rejected():
    with pytest.raises(ValueError):
        cluster_feature_means(np.zeros((3, 10)), [0, 2, 2])


# ---------------------------------------------------------------- components, values, levels

def _summary(means):
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    return ClusterFeatureSummary(means, np.ones(len(means), dtype=int))


def test_hazard_example():
    means = np.zeros(10)
    means[:2] = [0.5, 0.3]
    fh, fe, fv = aggregate_risk_components(_summary(means))
    assert abs(fh[0] - 0.8) < 1e-15 and fe[0] == 0 and fv[0] == 0


@pytest.mark.parametrize("fill, expected", [(0.0, (0, 0, 0)), (1.0, (2, 2, 6))])
def test_component_bounds(fill, expected):
    fh, fe, fv = aggregate_risk_components(_summary(np.full(10, fill)))
    assert (fh[0], fe[0], fv[0]) == expected


def test_risk_value_examples():
    assert abs(compute_risk_values([0.8], [0.5], [1.2])[0] - 0.48) < 1e-15
    assert compute_risk_values([0.0], [1.5], [3.0])[0] == 0.0
    assert abs(compute_risk_values([2.4], [0.5], [1.2])[0] - 3 * 0.48) < 1e-14


@pytest.mark.parametrize("values, expected", [
    ([0.48, 0.1, 0.9], [2, 1, 3]),
    ([0.5, 0.5], [1, 2]),
    ([7.0], [1]),
    ([0.2, 0.1, 0.2, 0.1], [3, 1, 4, 2]),
])
def test_level_examples(values, expected):
    assert assign_risk_levels(values).tolist() == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=8))
def test_levels_rank_invariant(ints):
    # quarter steps keep the transforms below strictly increasing in floating point
    values = [i / 4 for i in ints]
    levels = assign_risk_levels(values)
    assert sorted(levels.tolist()) == list(range(1, len(values) + 1))
    # strictly increasing maps keep the ranks (ties stay ties)
    for f in (np.sqrt, np.log1p, lambda v: 3.0 * v + 1.0):
        assert np.array_equal(assign_risk_levels(f(np.asarray(values))), levels)


# ---------------------------------------------------------------- end to end

@pytest.mark.parametrize("seed", range(25))
def test_matches_naive_oracle_bitwise(seed):
    rng = np.random.default_rng(seed)
    fr, labels = random_instance(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        table = rate_clusters(fr, labels)
    fh, fe, fv, value, level = naive_risk_rating(fr.tolist(), labels.tolist())
    assert table.fh.tolist() == fh
    assert table.fe.tolist() == fe
    assert table.fv.tolist() == fv
    assert table.fr_value.tolist() == value
    assert table.level.tolist() == level
    assert table.cell_level.tolist() == [level[c] for c in labels]


def test_table_invariants(rng):
    fr, labels = random_instance(rng, 150, 6)
    t = rate_clusters(fr, labels)
    assert sorted(t.level.tolist()) == list(range(1, t.n_clusters + 1))
    assert np.all(np.diff(t.fr_value[np.argsort(t.level)]) >= 0)
    assert np.all((t.fh >= 0) & (t.fh <= 2) & (t.fe >= 0) & (t.fe <= 2) & (t.fv >= 0) & (t.fv <= 6))
    rows = list(t.cluster_rows())
    assert [r[0] for r in rows] == list(range(t.n_clusters))
    assert len(list(t.cell_rows())) == len(labels)


def test_adding_a_cell_only_moves_its_cluster(rng):
    fr, labels = random_instance(rng, 80, 4)
    while np.unique(labels).size < 2:
        fr, labels = random_instance(rng, 80, 4)
    # new cell strictly inside the observed range, so the common scale is unchanged
    lo, hi = fr.min(axis=0), fr.max(axis=0)
    new = lo + (hi - lo) * rng.uniform(0.2, 0.8, size=10)
    target = int(labels[0])
    before = rate_clusters(fr, labels)
    after = rate_clusters(np.vstack([fr, new]), np.append(labels, target))
    others = np.arange(before.n_clusters) != target
    for name in ("fh", "fe", "fv"):
        assert np.array_equal(getattr(before, name)[others], getattr(after, name)[others])
