# tests/test_shuffle.py
import numpy as np
import pytest

from rmat import SHUFFLE_STREAM, RngStream
from shuffle import distributed_shuffle, local_shuffle, replay_shuffle, shuffle_rounds
from validate import verify_permutation


def _chi2_critical(df, z=3.090):
    """Wilson-Hilferty approximation of the chi-square quantile (z = 3.090 for p = 0.001)."""
    h = 2.0 / (9.0 * df)
    return df * (1.0 - h + z * np.sqrt(h)) ** 3


@pytest.mark.parametrize("n,nb,rounds", [(1 << 10, 1, 1), (1 << 10, 2, 10), (1 << 10, 4, 5),
                                         (1 << 10, 8, 4), (1 << 9, 8, 3), (16, 4, 2)])
def test_round_count(n, nb, rounds):
    assert shuffle_rounds(n, nb) == rounds


def test_local_shuffle_is_a_deterministic_permutation():
    a = np.arange(100, dtype=np.uint64)
    b = np.arange(100, dtype=np.uint64)
    local_shuffle(a, RngStream(3, purpose=SHUFFLE_STREAM))
    local_shuffle(b, RngStream(3, purpose=SHUFFLE_STREAM))
    assert a.tolist() == b.tolist()
    assert sorted(a.tolist()) == list(range(100))
    assert a.tolist() != list(range(100))


def test_single_node_is_one_local_shuffle(make_config, cluster):
    cfg = make_config(scale=8, nodes=1, seed=5)
    pv = cluster(cfg, lambda ctx: distributed_shuffle(ctx, cfg.seed))[0]
    expected = np.arange(256, dtype=np.uint64)
    local_shuffle(expected, RngStream(5, 0, 0, SHUFFLE_STREAM, 0))
    assert pv.tolist() == expected.tolist()


@pytest.mark.parametrize("scale,nodes", [(4, 2), (10, 4), (9, 8)])
def test_distributed_shuffle_is_bijective_and_replayable(make_config, cluster, scale, nodes):
    cfg = make_config(scale=scale, nodes=nodes, seed=17)
    slices = cluster(cfg, lambda ctx: distributed_shuffle(ctx, cfg.seed))
    pv = np.concatenate(slices)
    assert verify_permutation(pv, cfg.n).bijective
    assert [s.tolist() for s in slices] == [s.tolist() for s in replay_shuffle(cfg.n, nodes, 17)]


def test_jitter_does_not_change_the_permutation(make_config, cluster):
    calm = make_config(scale=8, nodes=4, seed=2)
    jittery = make_config(scale=8, nodes=4, seed=2, jitter_ms=2.0)
    a = np.concatenate(cluster(calm, lambda ctx: distributed_shuffle(ctx, calm.seed)))
    b = np.concatenate(cluster(jittery, lambda ctx: distributed_shuffle(ctx, jittery.seed)))
    assert a.tolist() == b.tolist()


def test_position_value_mixing_is_uniform():
    n, nb, seeds = 16, 4, 10000
    counts = np.zeros((n, n), dtype=np.int64)
    positions = np.arange(n)
    for seed in range(seeds):
        pv = np.concatenate(replay_shuffle(n, nb, seed)).astype(np.int64)
        counts[positions, pv] += 1
    expected = seeds / n
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # each cell has variance seeds*(1/n)(1-1/n), so the statistic centres on n*(n-1)
    assert chi2 < _chi2_critical(n * (n - 1))


@pytest.mark.slow
@pytest.mark.parametrize('nodes', [1, 2, 4])
@pytest.mark.parametrize('scale', [8, 12, 16])
def test_distributed_shuffle_is_bijective_across_seeds(make_config, cluster, scale, nodes):
    for seed in range(50):
        cfg = make_config(scale=scale, nodes=nodes, seed=seed)
        pv = np.concatenate(cluster(cfg, lambda ctx: distributed_shuffle(ctx, cfg.seed)))
        report = verify_permutation(pv, cfg.n)
        assert report.bijective, (seed, report)
