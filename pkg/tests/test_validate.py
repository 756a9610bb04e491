# tests/test_validate.py
from pathlib import Path

import numpy as np
import pytest

from core import ConfigError, IncompleteWorkdirError, make_edges
from csr import CSR_FILE, CsrGraph
from pipeline import run_pipeline
from validate import (degree_stats, oracle_generate, oracle_permutation, validate_workdir, verify_csr,
                      verify_permutation)


# --- Permutation checks ---
def test_duplicates_and_missing_are_reported():
    report = verify_permutation([1, 1, 2], 3)
    assert not report.bijective
    assert report.duplicates == [1]
    assert report.missing == [0]
    assert report.fixed_points == 2


def test_out_of_range_entries_are_counted():
    report = verify_permutation([0, 5, 1], 3)
    assert not report.bijective
    assert report.out_of_range == 1
    assert report.missing == [2]


def test_identity_is_bijective_with_every_point_fixed():
    report = verify_permutation(np.arange(8), 8)
    assert report.bijective
    assert report.fixed_points == 8


# --- Degree statistics ---
def test_degree_stats_small_example():
    stats = degree_stats(np.array([0, 2, 2, 3], dtype=np.uint64))
    assert (stats.vertices, stats.edges) == (3, 3)
    assert (stats.min_degree, stats.max_degree) == (0, 2)
    assert stats.mean_degree == pytest.approx(1.0)
    assert stats.median_degree == pytest.approx(1.0)
    assert stats.max_mean_ratio == pytest.approx(2.0)
    assert stats.histogram == {'0': 1, '1': 1, '2-3': 1}


def test_degree_stats_of_an_empty_slice():
    stats = degree_stats(np.zeros(1, dtype=np.uint64))
    assert stats.vertices == 0 and stats.max_mean_ratio == 0.0


# --- CSR checks ---
def _csr(offv, adjv):
    return CsrGraph(node=0, n=8, base=0, offv=np.array(offv, dtype=np.uint64), adjv=np.array(adjv, dtype=np.uint64))


def test_verify_csr_accepts_any_adjacency_order():
    report = verify_csr(_csr([0, 2, 3], [5, 1, 4]), make_edges([(0, 1), (0, 5), (1, 4)]))
    assert report.ok, report.issues
    assert report.edges == 3


def test_verify_csr_names_the_first_difference():
    report = verify_csr(_csr([0, 2, 3], [5, 1, 4]), make_edges([(0, 1), (0, 5), (1, 3)]))
    assert not report.ok
    assert "vertex 1" in report.issues[0]


def test_verify_csr_flags_broken_offsets():
    report = verify_csr(_csr([0, 3, 1], [1, 2]), make_edges([(0, 1), (0, 2)]))
    assert not report.ok
    assert any("decreases" in issue for issue in report.issues)
    assert any("offv[B]" in issue for issue in report.issues)


# --- Oracle ---
def test_oracle_refuses_large_scales(make_config):
    cfg = make_config(scale=23, mem_per_core=64 * 1024 * 1024)
    with pytest.raises(ConfigError):
        oracle_generate(cfg)


def test_oracle_is_self_consistent(make_config):
    cfg = make_config(scale=8, nodes=2, cores=2)
    oracle = oracle_generate(cfg)
    assert verify_permutation(oracle.pv, cfg.n).bijective
    assert np.array_equal(oracle.pv, oracle_permutation(cfg))
    assert len(oracle.raw) == cfg.total_edges
    assert np.array_equal(oracle.relabelled['src'], oracle.pv[oracle.raw['src']])
    assert int(oracle.offv[-1]) == cfg.total_edges
    slices = [oracle.csr_slice(b) for b in range(cfg.nodes)]
    assert sum(s.edge_count for s in slices) == cfg.total_edges
    for b, s in enumerate(slices):
        assert verify_csr(s, oracle.owned(b)).ok


# --- Whole runs ---
def test_validate_missing_manifest(tmp_path):
    with pytest.raises(IncompleteWorkdirError):
        validate_workdir(tmp_path)


def test_validate_incomplete_run(make_config):
    cfg = make_config(scale=6)
    run_pipeline(cfg, ['shuffle', 'generate'])
    with pytest.raises(IncompleteWorkdirError):
        validate_workdir(cfg.workdir)


def test_validate_passes_then_catches_corruption(make_config):
    cfg = make_config(scale=8, nodes=2, cores=2, block_edges=64)
    run_pipeline(cfg)
    report = validate_workdir(cfg.workdir)
    assert report.ok, report.mismatches
    assert set(report.checks) == {'permutation_bijective', 'permutation_matches_oracle',
                                  'owned_edges_match_oracle', 'csr_well_formed', 'csr_matches_oracle',
                                  'edge_conservation'}

    # top byte of the last adjacency entry: the destination leaves [0, n)
    path = Path(cfg.workdir) / "n1" / CSR_FILE
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    report = validate_workdir(cfg.workdir)
    assert not report.ok
    assert not report.checks['csr_well_formed']
    assert not report.checks['csr_matches_oracle']
    assert report.checks['owned_edges_match_oracle']
    assert any(line.startswith("node 1") for line in report.mismatches)
