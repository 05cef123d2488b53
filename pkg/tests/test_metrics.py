import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon

from gfnkit import rng
from gfnkit.metrics import (EmpiricalDistribution, ExactDistribution, edit_distance, feature_marginals, jsd,
                            pearson, perfect_sampler, topk_reward_diversity, tv, tv_distance)


def half_half():
    return ExactDistribution([b"a", b"b"], [0.5, 0.5])


def test_tv_examples():
    exact = half_half()
    assert tv_distance(EmpiricalDistribution.from_keys([b"a", b"b"]), exact) == 0.0
    assert tv_distance(EmpiricalDistribution.from_keys([b"a"] * 3 + [b"b"]), exact) == 0.25
    point = ExactDistribution([b"a", b"b"], [1.0, 0.0])
    assert tv_distance(EmpiricalDistribution.from_keys([b"b"]), point) == 1.0
    # mass outside the enumerated support counts fully
    assert tv_distance(EmpiricalDistribution.from_keys([b"z"]), point) == 1.0
    with pytest.raises(ValueError):
        tv_distance(EmpiricalDistribution(), exact)


def test_jsd_examples():
    assert jsd([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert np.isclose(jsd([1, 0], [0, 1]), np.log(2))
    # the averaged-KL formula gives 0.2158 here, not log 2 - 0.5 log 2
    assert np.isclose(jsd([0.5, 0.5], [1.0, 0.0]), jensenshannon([0.5, 0.5], [1, 0]) ** 2, atol=1e-12)
    assert np.isclose(jsd([0.5, 0.5], [1.0, 0.0]), 0.21576, atol=1e-5)


mass = st.one_of(st.just(0.0), st.floats(1e-6, 1.0))
def test_jsd_tiny_mass_stays_finite():
    assert 0.0 <= jsd([0.0, 1.0, 5e-324], [0.0, 1.0, 0.0]) < 1e-300


probs = st.lists(mass, min_size=2, max_size=6).filter(lambda v: sum(v) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(probs, st.data())
def test_divergences_symmetric_and_bounded(p, data):
    q = data.draw(st.lists(mass, min_size=len(p), max_size=len(p)).filter(lambda v: sum(v) > 1e-3))
    p = np.array(p) / sum(p)
    q = np.array(q) / sum(q)
    assert np.isclose(jsd(p, q), jsd(q, p), atol=1e-12)
    assert -1e-12 <= jsd(p, q) <= np.log(2) + 1e-12
    assert np.isclose(jsd(p, q), jensenshannon(p, q) ** 2, atol=1e-9)
    assert 0 <= tv(p, q) <= 1 + 1e-12 and tv(p, q) == tv(q, p)


def test_pearson_examples():
    x = np.array([1.0, 4.0, 2.0, 8.0])
    assert np.isclose(pearson(x, x), 1.0)
    assert np.isclose(pearson(x, -x), -1.0)
    assert np.isclose(pearson([1, 2, 3], [1, 2, 4]), 0.9820, atol=1e-4)
    assert np.isclose(pearson([1, 2, 3], [1, 2, 4]), np.corrcoef([1, 2, 3], [1, 2, 4])[0, 1])
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


def point_mass(d, edges):
    g = np.zeros((1, d, d), int)
    for i, j in edges:
        g[0, i, j] = 1
    return g


def test_feature_marginal_examples():
    e = feature_marginals(point_mass(3, [(0, 1)]), [1.0], "edge")
    assert e[0, 1] == 1 and e[1, 0] == 0
    p = feature_marginals(point_mass(3, [(0, 1), (1, 2)]), [1.0], "path")
    assert p[0, 2] == 1 and p[2, 0] == 0
    mb = feature_marginals(point_mass(3, [(0, 2), (1, 2)]), [1.0], "markov-blanket")
    assert mb[0, 1] == 1 and mb[1, 0] == 1 and np.all(np.diag(mb) == 0)
    with pytest.raises(ValueError):
        feature_marginals(point_mass(2, []), [1.0], "bogus")


def test_feature_marginals_mix_graphs():
    graphs = np.concatenate([point_mass(2, [(0, 1)]), point_mass(2, [(1, 0)]), point_mass(2, [])])
    e = feature_marginals(graphs, [0.2, 0.3, 0.5], "edge")
    assert np.allclose(e, [[0, 0.2], [0.3, 0]])


def test_topk_examples():
    same = [(0, 1, 2)] * 4
    assert topk_reward_diversity(same, [1, 2, 3, 4], 3) == (3.0, 0.0)
    r, div = topk_reward_diversity([(0, 0, 0, 0), (1, 1, 1, 0), (0, 1, 0, 1)], [5.0, 4.0, 0.0], 2)
    assert r == 4.5 and div == 3.0
    assert topk_reward_diversity([(0,), (1,), (2,)], [7.0, 7.0, 7.0], 3)[0] == 7.0
    with pytest.raises(ValueError):
        topk_reward_diversity([(0,)], [1.0], 2)


def test_topk_variable_length_uses_edit_distance():
    assert edit_distance("kitten", "sitting") == 3
    _, div = topk_reward_diversity([(1, 2, 3), (1, 3)], [1.0, 1.0], 2)
    assert div == 1.0


def test_perfect_sampler_baseline_shrinks():
    exact = ExactDistribution.from_log_weights([bytes([i]) for i in range(20)], np.linspace(0, 2, 20))
    small = tv_distance(EmpiricalDistribution.from_keys(perfect_sampler(exact, rng.key(0), 500)), exact)
    big = tv_distance(EmpiricalDistribution.from_keys(perfect_sampler(exact, rng.key(1), 50_000)), exact)
    assert big < small and big < 0.02
