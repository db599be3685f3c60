import numpy as np
import pytest
from scipy import stats

from heraldsim import rng


def test_uniform_open_interval_and_deterministic():
    key = rng.stream_key(7, rng.PAIRS)
    u = rng.uniform(key, np.arange(200_000, dtype=np.uint64))
    assert np.all((u > 0) & (u < 1))
    assert np.array_equal(u, rng.uniform(key, np.arange(200_000, dtype=np.uint64)))


def test_uniform_independent_of_batching():
    key = rng.stream_key(3, rng.SIGNAL)
    idx = np.arange(10_000, dtype=np.uint64)
    whole = rng.uniform(key, idx)
    parts = np.concatenate([rng.uniform(key, idx[a:a + 777]) for a in range(0, idx.size, 777)])
    assert np.array_equal(whole, parts)


def test_uniform_chi_square():
    u = rng.uniform(rng.stream_key(11, rng.IDLER), np.arange(400_000, dtype=np.uint64))
    counts, _ = np.histogram(u, bins=100, range=(0, 1))
    p = stats.chisquare(counts).pvalue
    assert p > 1e-4


@pytest.mark.parametrize("a,b", [((1, rng.PAIRS), (2, rng.PAIRS)), ((1, rng.PAIRS), (1, rng.IDLER)),
                                 ((1, rng.JITTER, 0), (1, rng.JITTER, 1))])
def test_distinct_keys_give_uncorrelated_streams(a, b):
    idx = np.arange(100_000, dtype=np.uint64)
    ua = rng.uniform(rng.stream_key(*a), idx)
    ub = rng.uniform(rng.stream_key(*b), idx)
    assert abs(np.corrcoef(ua, ub)[0, 1]) < 0.02


def test_second_counter_changes_draws():
    key = rng.stream_key(5, rng.SIGNAL)
    idx = np.arange(1000, dtype=np.uint64)
    assert not np.allclose(rng.uniform(key, idx, np.uint64(0)), rng.uniform(key, idx, np.uint64(1)))


def test_normal_moments():
    z = rng.normal(rng.stream_key(9, rng.JITTER), np.arange(300_000, dtype=np.uint64))
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1) < 0.01
    assert stats.kstest(z, "norm").pvalue > 1e-4
