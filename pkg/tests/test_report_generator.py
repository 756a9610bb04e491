# tests/test_report_generator.py
import pytest

from models_pydantic import IoStats, PhaseRecord, RunManifest
from pipeline import run_pipeline
from report_generator import (counter_rows, generate_markdown_report, global_degree_stats, io_table, owned_balance,
                              phase_summary, plot_rows)


def _manifest(scale=18):
    records = [
        PhaseRecord(phase='generate', node=0, seconds=2.0, io=IoStats(seq_writes=8), peak_memory=10),
        PhaseRecord(phase='generate', node=1, seconds=3.0, io=IoStats(seq_writes=8), peak_memory=30),
        PhaseRecord(phase='generate', node=0, core=0, seconds=2.0, io=IoStats(seq_writes=8)),
        PhaseRecord(phase='csr', node=0, seconds=1.0, io=IoStats(seq_reads=4, rand_writes=2)),
    ]
    return RunManifest(software_version='1.0.0', numpy_version='2.2.5', created_at='2026-01-01T00:00:00',
                       config={'scale': scale, 'nodes': 2, 'cores': 1, 'edge_factor': 16,
                               'mem_per_core': 1024, 'block_edges': 4, 'redistribute_mode': 'sorted',
                               'csr_variant': 'sorted'},
                       rng_algorithm='philox', seeds={'master': '1'}, phases_completed=['generate', 'csr'],
                       records=records, owned_edges=[30, 10])


def test_phase_summary_sums_io_and_takes_worst_time():
    summary = phase_summary(_manifest()).set_index('phase')
    assert summary.loc['generate', 'seq_writes'] == 16
    assert summary.loc['generate', 'seconds'] == 3.0
    assert summary.loc['generate', 'peak_memory'] == 30
    assert summary.loc['csr', 'rand_writes'] == 2


def test_plot_rows_are_normalized_to_scale_16():
    rows = plot_rows(_manifest(scale=18)).set_index('phase')
    assert rows.loc['generate', 'seq_writes_norm'] == pytest.approx(4.0)
    assert rows.loc['generate', 'scale'] == 18


def test_io_table_levels():
    assert set(io_table(_manifest(), 'node')['node']) == {0, 1}
    assert list(io_table(_manifest(), 'core')['core'].unique()) == [0]


def test_counter_rows_are_long_format_sums():
    rows = counter_rows(_manifest())
    assert list(rows.columns) == ['phase', 'counter', 'value']
    assert list(rows['phase'].unique()) == ['generate', 'csr']
    values = rows.set_index(['phase', 'counter'])['value']
    assert values[('generate', 'seq_writes')] == 16
    assert values[('csr', 'rand_writes')] == 2
    assert values[('csr', 'seq_writes')] == 0


def test_owned_balance():
    assert owned_balance(_manifest())['max_mean_ratio'] == pytest.approx(1.5)


def test_markdown_report_for_a_real_run(tmp_path, make_config):
    cfg = make_config(scale=8, nodes=2, block_edges=64)
    manifest = run_pipeline(cfg)
    stats = global_degree_stats(cfg.workdir, manifest)
    assert stats.edges == cfg.total_edges
    out = tmp_path / 'report.md'
    text = generate_markdown_report(manifest, stats, str(out))
    assert out.read_text(encoding='utf-8') == text
    assert "## Out-degree" in text and "n1/csr.bin" in text
