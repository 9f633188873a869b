import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dvdn.stats import (
    MetricsRecord,
    aggregate_checkpoints,
    bootstrap_ci,
    max_average_return,
    pool_best_neighborhood,
    rank_compare,
)


def rec(i, mean):
    return MetricsRecord(i, i * 10, (mean,), mean, mean, mean)


def test_bootstrap_degenerate_and_errors():
    assert bootstrap_ci([2.5] * 7) == (2.5, 2.5)
    with pytest.raises(ValueError):
        bootstrap_ci([1.0])


def test_bootstrap_bounds_inside_range():
    lo, hi = bootstrap_ci([0.0, 10.0], resamples=50_000, rng=0)
    assert 0.0 <= lo <= hi <= 10.0


def test_bootstrap_is_seeded():
    x = np.random.default_rng(0).normal(size=30)
    assert bootstrap_ci(x, rng=5) == bootstrap_ci(x, rng=5)
    assert bootstrap_ci(x, rng=np.random.default_rng(5)) == bootstrap_ci(x, rng=5)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40), st.integers(0, 2**16))
def test_bootstrap_brackets_mean(xs, seed):
    lo, hi = bootstrap_ci(xs, resamples=2000, rng=seed)
    assert min(xs) - 1e-9 <= lo <= hi <= max(xs) + 1e-9


def test_rank_compare_examples():
    b = np.random.default_rng(0).normal(size=20)
    assert rank_compare(b, b, rng=0) == "matches"
    assert rank_compare(b + 100, b, rng=0) == "outperforms"
    assert rank_compare(b, b + 100, rng=0) == "underperforms"
    with pytest.raises(ValueError):
        rank_compare([], [1.0])


def test_max_average_return():
    assert max_average_return([rec(0, 0.4)]).index == 0
    assert max_average_return([rec(0, 0.2), rec(1, 0.9), rec(2, 0.5)]).mean == 0.9
    assert max_average_return([rec(0, 0.2), rec(1, 0.9), rec(2, 0.9)]).index == 1
    with pytest.raises(ValueError):
        max_average_return([])


def test_aggregate_checkpoints_ci_brackets_mean():
    per_seed = np.random.default_rng(1).normal(size=(5, 4))
    recs = aggregate_checkpoints(per_seed, [0, 10, 20, 30], resamples=2000, rng=0)
    for r, col in zip(recs, per_seed.T):
        assert r.ci_low <= r.mean <= r.ci_high
        assert r.mean == pytest.approx(col.mean())
    single = aggregate_checkpoints(np.array([[1.0, 2.0]]), [0, 1])
    assert single[1].ci_low == single[1].ci_high == 2.0


def test_pooling_five_by_five():
    per_seed = np.tile(np.array([0, 1, 2, 3, 9, 3, 2, 1, 0], float), (5, 1))
    pg = pool_best_neighborhood(per_seed)
    assert pg.best_index == 4 and pg.indices == (2, 3, 4, 5, 6)
    assert len(pg.samples) == 25 and not pg.flagged


def test_pooling_clipped_and_flagged():
    pg = pool_best_neighborhood(np.array([[5.0, 1.0, 0.0], [5.0, 1.0, 0.0]]))
    assert pg.indices == (0, 1, 2) and pg.flagged and len(pg.samples) == 6
