# tests/test_rmat.py
import math

import numpy as np
import pytest

from emstore import ExtEdgeList, io_counters
from rmat import (EDGE_STREAM, GRAPH500_PARAMS, SHUFFLE_STREAM, RngStream, gen_rmat_edge, generate_edgelist,
                  generate_edges)

# chi-square critical values at p = 0.001
CHI2_CRITICAL_DF3 = 16.266


@pytest.mark.parametrize("p,expected", [
    ((1.0, 0.0, 0.0, 0.0), (0, 0)),
    ((0.0, 1.0, 0.0, 0.0), (0, 31)),
    ((0.0, 0.0, 1.0, 0.0), (31, 0)),
    ((0.0, 0.0, 0.0, 1.0), (31, 31)),
])
def test_degenerate_quadrants(p, expected):
    assert gen_rmat_edge(RngStream(3), 5, p) == expected


def test_one_edge_consumes_scale_draws():
    rng = RngStream(11, node=1, core=2)
    src, des = gen_rmat_edge(rng, 9)
    assert rng.draws == 9
    assert 0 <= src < 512 and 0 <= des < 512


def test_invalid_arguments():
    with pytest.raises(ValueError):
        gen_rmat_edge(RngStream(1), 0)
    with pytest.raises(ValueError):
        gen_rmat_edge(RngStream(1), 4, (0.5, 0.5, 0.5, 0.0))


def test_streams_are_deterministic_and_distinct():
    a = generate_edges(200, RngStream(42, node=0, core=1), 10)
    b = generate_edges(200, RngStream(42, node=0, core=1), 10)
    c = generate_edges(200, RngStream(42, node=1, core=0), 10)
    d = generate_edges(200, RngStream(42, node=0, core=1, purpose=SHUFFLE_STREAM), 10)
    assert a.tolist() == b.tolist()
    assert a.tolist() != c.tolist()
    assert a.tolist() != d.tolist()


def test_batched_generation_replays_one_edge_at_a_time():
    batched = generate_edges(300, RngStream(7, 0, 0, EDGE_STREAM), 6)
    scalar_rng = RngStream(7, 0, 0, EDGE_STREAM)
    scalar = [gen_rmat_edge(scalar_rng, 6) for _ in range(300)]
    assert batched.tolist() == scalar


def test_vertices_stay_in_range():
    edges = generate_edges(5000, RngStream(1), 13)
    assert int(edges['src'].max()) < 1 << 13
    assert int(edges['des'].max()) < 1 << 13


def test_quadrant_frequencies_chi_square():
    # at scale 1 every edge is exactly one quadrant choice
    draws = 10 ** 6
    edges = generate_edges(draws, RngStream(2024), 1)
    quad = (edges['src'] * 2 + edges['des']).astype(np.int64)
    observed = np.bincount(quad, minlength=4)
    expected = np.array(GRAPH500_PARAMS) * draws
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    assert chi2 < CHI2_CRITICAL_DF3


def test_every_depth_follows_the_same_distribution():
    scale, draws = 8, 100000
    edges = generate_edges(draws, RngStream(99), scale)
    p = np.array(GRAPH500_PARAMS)
    for depth in range(scale):
        shift = np.uint64(scale - 1 - depth)
        quad = (((edges['src'] >> shift) & np.uint64(1)) * np.uint64(2)
                + ((edges['des'] >> shift) & np.uint64(1))).astype(np.int64)
        freq = np.bincount(quad, minlength=4) / draws
        sigma = np.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(freq - p) < 5 * sigma), f"depth {depth}: {freq}"


def test_generate_edgelist_writes_whole_blocks(tmp_path):
    store = ExtEdgeList.create(tmp_path / 'gen.bin', block_edges=16)
    written = generate_edgelist(store, 100, RngStream(5), 7)
    assert written == 100 == store.count
    assert io_counters(store).seq_writes == math.ceil(100 / 16)
    assert io_counters(store).random == 0
    assert store.read_all().tolist() == generate_edges(100, RngStream(5), 7).tolist()


def test_both_orientations_are_interleaved(tmp_path):
    store = ExtEdgeList.create(tmp_path / 'both.bin', block_edges=16)
    generate_edgelist(store, 50, RngStream(5), 7, both_orientations=True)
    edges = store.read_all()
    assert len(edges) == 100
    assert edges['src'][0::2].tolist() == edges['des'][1::2].tolist()
    assert edges['des'][0::2].tolist() == edges['src'][1::2].tolist()
    assert edges[0::2].tolist() == generate_edges(50, RngStream(5), 7).tolist()
