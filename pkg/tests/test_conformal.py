import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cartbias.cart import HyperParams, fit
from cartbias.conformal import (ALPHA_GRID, NodeInterval, alpha_sweep, detect_bias_at_alpha,
                                empirical_quantile, leaf_intervals, node_interval, node_intervals,
                                run_bias_detection)
from cartbias.errors import DomainError
from cartbias.synthgen import default_half_width, draw_center, gen_planted_region

from conftest import make_dataset
from oracles import scan_quantile


def test_quantile_examples():
    assert empirical_quantile([1, 2, 3, 4], 0.5) == 2
    assert empirical_quantile([3, 9, 1], 1.0) == 9
    assert empirical_quantile([3, 9, 1], 0.0) == 1
    for q in (0.0, 0.3, 1.0):
        assert empirical_quantile([5], q) == 5


def test_quantile_index_arithmetic():
    v = np.arange(1, 21)
    assert empirical_quantile(v, 0.95) == 19
    assert empirical_quantile(v, 0.05) == 1
    assert empirical_quantile(np.arange(1, 11), 0.9) == 9


@pytest.mark.parametrize("values, q", [([], 0.5), ([1.0], -0.1), ([1.0], 1.5)])
def test_quantile_domain(values, q):
    with pytest.raises(DomainError):
        empirical_quantile(values, q)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0, 1))
def test_quantile_matches_scan(values, q):
    assert empirical_quantile(values, q) == scan_quantile(values, q)


def test_interval_constant_node():
    iv = node_interval([0.4] * 5, 0.4, 0.2)
    assert iv.lower == iv.upper == pytest.approx(0.4)


def test_interval_alpha_one_collapses():
    # q = 0.5 on residuals [-0.1, 0.1] picks the first order statistic twice
    iv = node_interval([0.4, 0.6], 0.5, 1.0)
    assert iv.lower == pytest.approx(0.4) and iv.upper == pytest.approx(0.4)


def test_interval_ten_points():
    y = np.linspace(0, 1, 10)
    iv = node_interval(y, y.mean(), 0.2)
    assert iv.lower == pytest.approx(0.0, abs=1e-15)
    assert iv.upper == pytest.approx(8 / 9)


def test_node_intervals_cover_all_nodes(step_data):
    tree = fit(step_data, HyperParams(max_depth=1))
    ivs = node_intervals(tree, step_data, 0.2)
    assert [iv.node_id for iv in ivs] == [0, 1, 2]
    assert [iv.is_leaf for iv in ivs] == [False, True, True]
    with pytest.raises(DomainError):
        node_intervals(tree, step_data, 0.0)


def iv(i, lo, hi):
    return NodeInterval(i, lo, hi, 0.2)


def test_detect_examples():
    assert detect_bias_at_alpha([iv(1, 0.2, 0.3), iv(2, 0.5, 0.8)]) == {1}
    assert detect_bias_at_alpha([iv(1, 0.2, 0.3), iv(2, 0.2, 0.3)]) == set()
    three = [iv(1, 0.1, 0.2), iv(2, 0.25, 0.5), iv(3, 0.3, 0.6)]
    assert detect_bias_at_alpha(three) == {1}
    assert detect_bias_at_alpha([iv(1, 0.1, 0.2)]) == set()


def test_detect_equality_counts():
    assert detect_bias_at_alpha([iv(1, 0.2, 0.5), iv(2, 0.5, 0.8)]) == {1}


def test_detect_residual_orientation():
    assert detect_bias_at_alpha([iv(1, 0.2, 0.3), iv(2, 0.5, 0.8)], "residual") == {2}


def test_detect_can_flag_several():
    # degenerate intervals can separate pairwise in both directions
    assert detect_bias_at_alpha([iv(1, 0.5, 0.5), iv(2, 0.5, 0.5)]) == {1, 2}


intervals = st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 3)), min_size=1, max_size=8).map(
    lambda pairs: [iv(i, lo, lo + w) for i, (lo, w) in enumerate(pairs)])


@settings(max_examples=200, deadline=None)
@given(intervals)
def test_orientation_duality_on_intervals(ivs):
    mirrored = [NodeInterval(x.node_id, -x.upper, -x.lower, x.alpha) for x in ivs]
    assert detect_bias_at_alpha(ivs, "performance") == detect_bias_at_alpha(mirrored, "residual")


def test_orientation_duality_on_tree():
    # leaf sizes 7 and 13: alpha/2 * n is never an integer on the sweep grid,
    # so the left-continuous quantile mirrors exactly under negation
    rng = np.random.default_rng(0)
    x = np.arange(20.0)
    y = np.where(x < 7, rng.uniform(0.1, 0.3, 20), rng.uniform(0.6, 0.9, 20))
    perf = make_dataset(x, y)
    resid = make_dataset(x, -y, "residual")
    params = HyperParams(max_depth=1)
    t1, t2 = fit(perf, params), fit(resid, params)
    assert sorted(l.n_samples for l in t1.leaves()) == [7, 13]
    assert alpha_sweep(t1, perf, "performance") == alpha_sweep(t2, resid, "residual")


def random_tree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(30, 400))
    X = rng.uniform(-10, 10, size=(n, 2))
    y = rng.uniform(size=n)
    data = make_dataset(X, y)
    return fit(data, HyperParams(max_depth=3, min_samples_leaf=int(rng.integers(1, 15)))), data


@pytest.mark.parametrize("seed", range(10))
def test_interval_nesting_and_coverage(seed):
    tree, data = random_tree(seed)
    prev = None
    for alpha in ALPHA_GRID:
        ivs = node_intervals(tree, data, alpha)
        for x, node in zip(ivs, tree.nodes):
            assert x.lower <= x.upper
            ys = data.scores[node.sample_indices]
            inside = np.mean((ys >= x.lower - 1e-12) & (ys <= x.upper + 1e-12))
            assert inside >= 1 - alpha - 1 / node.n_samples - 1e-12
        if prev is not None:
            for a, b in zip(prev, ivs):
                assert a.lower <= b.lower + 1e-15 and a.upper >= b.upper - 1e-15
        prev = ivs


@pytest.mark.parametrize("seed", range(10))
def test_flag_monotone_in_alpha(seed):
    tree, data = random_tree(seed)
    flagged = [detect_bias_at_alpha(leaf_intervals(tree, data, a)) for a in ALPHA_GRID]
    for small, large in zip(flagged, flagged[1:]):
        assert small <= large


def test_sweep_single_leaf():
    data = make_dataset(np.arange(5.0), np.full(5, 0.5))
    tree = fit(data, HyperParams())
    assert alpha_sweep(tree, data) == {0: None}


def test_sweep_separated_leaves():
    x = np.arange(40.0)
    y = np.where(x < 20, 0.2, 0.9) + np.tile([0.0, 0.01], 20)
    data = make_dataset(x, y)
    tree = fit(data, HyperParams(max_depth=1))
    assert alpha_sweep(tree, data) == {1: 0.1, 2: None}


def test_detection_constant_scores():
    data = make_dataset(np.arange(50.0), np.full(50, 0.8))
    report = run_bias_detection(data, [HyperParams()], 0.2, epochs=2, bag_size=3, seed=1)
    assert not report.global_detected
    assert report.epoch_votes == (0, 0)


def planted(seed, n=2000):
    rng = np.random.default_rng(seed)
    h = default_half_width(2)
    return gen_planted_region(n, 2, draw_center(2, h, rng), h, rng)


def test_detection_finds_planted_region():
    from cartbias.regions import intersect, region_from_path
    from cartbias.synthgen import ambient, experiment_grid
    data, truth = planted(4)
    report = run_bias_detection(data, experiment_grid(), 0.2, seed=4)
    assert report.global_detected
    hits = [v for v in report.flagged()
            if intersect(region_from_path(report.tree, v.node_id, ambient(2)), truth) is not None]
    assert hits and all(v.optimized_alpha <= 0.2 for v in hits)


def test_detection_bagging_votes():
    data, _ = planted(5, 1500)
    from cartbias.synthgen import experiment_grid
    report = run_bias_detection(data, experiment_grid(), 0.2, epochs=2, bag_size=5, seed=2)
    assert len(report.epoch_votes) == 2
    assert report.global_detected == any(v * 2 > 5 for v in report.epoch_votes)
    assert report.data.n == data.n


def test_detection_deterministic():
    data, _ = planted(6, 600)
    grid = [HyperParams(max_depth=3, min_samples_leaf=10), HyperParams(max_depth=4, min_samples_leaf=20)]
    a = run_bias_detection(data, grid, 0.2, epochs=2, bag_size=3, seed=9)
    b = run_bias_detection(data, grid, 0.2, epochs=2, bag_size=3, seed=9)
    assert a.verdicts == b.verdicts and a.epoch_votes == b.epoch_votes
    assert a.tree.structure() == b.tree.structure()


@pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(bag_size=0), dict(alpha_star=1.0)])
def test_detection_argument_checks(kwargs):
    data = make_dataset(np.arange(10.0), np.linspace(0, 1, 10))
    with pytest.raises(DomainError):
        run_bias_detection(data, [HyperParams()], **kwargs)
