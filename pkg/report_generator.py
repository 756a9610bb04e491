# report_generator.py
"""Tables and reports built from a finished run: per-phase I/O, timings,
degree statistics and owned-edge balance."""
import argparse
import datetime
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from config import get_logger
from core import GraphGenError, IncompleteWorkdirError
from csr import CSR_FILE, read_csr
from models_pydantic import IO_FIELDS, DegreeStats, RunManifest
from validate import degree_stats, load_manifest

log = get_logger('report_generator')

# Plot rows are scaled to a scale-16 run so runs of different sizes line up.
REFERENCE_SCALE = 16


def io_table(manifest: RunManifest, level: str = 'node') -> pd.DataFrame:
    """Long-form (phase, node, core, counter, value) rows for one aggregation level."""
    rows = []
    for rec in manifest.records:
        if (level == 'node') != (rec.core is None):
            continue
        for counter in IO_FIELDS:
            rows.append({'phase': rec.phase, 'node': rec.node, 'core': rec.core,
                         'counter': counter, 'value': getattr(rec.io, counter)})
    return pd.DataFrame(rows, columns=['phase', 'node', 'core', 'counter', 'value'])


def counter_rows(manifest: RunManifest) -> pd.DataFrame:
    """(phase, counter, value) rows summed over nodes, phases in run order."""
    io = io_table(manifest, 'node')
    if io.empty:
        return pd.DataFrame(columns=['phase', 'counter', 'value'])
    return io.groupby(['phase', 'counter'], sort=False)['value'].sum().reset_index()


def phase_summary(manifest: RunManifest) -> pd.DataFrame:
    """One row per top-level phase: wall time, summed block I/O, worst core peak memory."""
    df = pd.DataFrame([{'phase': r.phase, 'seconds': r.seconds, 'peak_memory': r.peak_memory,
                        **r.io.model_dump()}
                       for r in manifest.records if r.core is None])
    if df.empty:
        return df
    summary = df.groupby('phase', sort=False).agg(
        seconds=('seconds', 'max'), peak_memory=('peak_memory', 'max'),
        **{f: (f, 'sum') for f in IO_FIELDS})
    return summary.reset_index()


def plot_rows(manifest: RunManifest) -> pd.DataFrame:
    """Per-phase counters normalized by 2^(scale - 16), ready for plotting."""
    scale = int(manifest.config['scale'])
    factor = 2.0 ** (scale - REFERENCE_SCALE)
    summary = phase_summary(manifest)
    if summary.empty:
        return summary
    out = summary[['phase']].copy()
    out.insert(0, 'scale', scale)
    out.insert(1, 'nodes', int(manifest.config['nodes']))
    out.insert(2, 'cores', int(manifest.config['cores']))
    for column in ('seconds', *IO_FIELDS):
        out[f"{column}_norm"] = summary[column] / factor
    return out


def owned_balance(manifest: RunManifest) -> Dict[str, float]:
    owned = np.asarray(manifest.owned_edges, dtype=np.float64)
    if owned.size == 0 or owned.mean() == 0:
        return {'max': 0.0, 'mean': 0.0, 'max_mean_ratio': 0.0}
    return {'max': float(owned.max()), 'mean': float(owned.mean()),
            'max_mean_ratio': float(owned.max() / owned.mean())}


def global_degree_stats(workdir, manifest: RunManifest) -> DegreeStats:
    """Degree statistics over the CSR slices of every node."""
    degrees = []
    for b in range(int(manifest.config['nodes'])):
        path = Path(workdir) / f"n{b}" / CSR_FILE
        if not path.is_file():
            raise IncompleteWorkdirError(f"Missing CSR slice '{path}'")
        degrees.append(read_csr(path, b).degrees())
    all_degrees = np.concatenate(degrees)
    offv = np.zeros(len(all_degrees) + 1, dtype=np.int64)
    np.cumsum(all_degrees, out=offv[1:])
    return degree_stats(offv)


def render_table(df: pd.DataFrame) -> str:
    if df.empty:
        return "(no rows)"
    return df.to_string(index=False, float_format=lambda x: f"{x:.4g}")


def generate_markdown_report(manifest: RunManifest, stats: Optional[DegreeStats], output_filepath: str) -> str:
    cfg = manifest.config
    report_str = f"# R-MAT run report - {datetime.date.today().isoformat()}\n\n"

    report_str += "## Configuration\n"
    report_str += (f"- **Scale:** {cfg['scale']} (n = {1 << int(cfg['scale'])}), edge factor {cfg['edge_factor']}\n"
                   f"- **Cluster:** {cfg['nodes']} nodes x {cfg['cores']} cores, "
                   f"{cfg['mem_per_core']} bytes per core, C_e = {cfg['block_edges']}\n"
                   f"- **Variants:** redistribute {cfg['redistribute_mode']}, CSR {cfg['csr_variant']}\n"
                   f"- **Seed:** {manifest.seeds.get('master')} ({manifest.rng_algorithm})\n"
                   f"- **Phases completed:** {', '.join(manifest.phases_completed)}\n\n")

    report_str += "## Phases\n```\n" + render_table(phase_summary(manifest)) + "\n```\n\n"

    balance = owned_balance(manifest)
    if manifest.owned_edges:
        report_str += "## Owned edges\n"
        report_str += "".join(f"- Node {b}: {count}\n" for b, count in enumerate(manifest.owned_edges))
        report_str += f"- **max/mean:** {balance['max_mean_ratio']:.3f}\n\n"

    if stats is not None:
        report_str += "## Out-degree\n"
        report_str += (f"- min {stats.min_degree}, max {stats.max_degree}, mean {stats.mean_degree:.3f}, "
                       f"median {stats.median_degree:.1f}, max/mean {stats.max_mean_ratio:.2f}\n\n")
        report_str += "| degree | vertices |\n|---|---|\n"
        report_str += "".join(f"| {label} | {count} |\n" for label, count in stats.histogram.items())
        report_str += "\n"

    if manifest.canonical_checksums:
        report_str += "## Checksums (canonical)\n"
        report_str += "".join(f"- `{name}`: {digest}\n" for name, digest in manifest.canonical_checksums.items())

    with open(output_filepath, 'w', encoding='utf-8') as fh:
        fh.write(report_str)
    log.info(f"Markdown report written to '{output_filepath}'")
    return report_str


def stats_report(workdir, per_core: bool = False, plot: bool = False) -> str:
    """Text tables for the `stats` command."""
    manifest = load_manifest(workdir)
    sections: List[str] = []
    sections.append("Per-phase summary\n" + render_table(phase_summary(manifest)))
    sections.append("Counters\n" + counter_rows(manifest).to_csv(index=False).rstrip())
    io = io_table(manifest, 'core' if per_core else 'node')
    if not io.empty:
        wide = io.pivot_table(index=['phase', 'node'] + (['core'] if per_core else []),
                              columns='counter', values='value', aggfunc='sum', sort=False)
        sections.append(f"Block I/O per {'core' if per_core else 'node'}\n" + render_table(wide.reset_index()))
    if manifest.owned_edges:
        b = owned_balance(manifest)
        sections.append(f"Owned edges per node: {manifest.owned_edges} (max/mean {b['max_mean_ratio']:.3f})")
    if 'csr' in manifest.phases_completed:
        s = global_degree_stats(workdir, manifest)
        hist = ', '.join(f"{k}:{v}" for k, v in s.histogram.items())
        sections.append(f"Out-degree: min {s.min_degree} max {s.max_degree} mean {s.mean_degree:.3f} "
                        f"median {s.median_degree:.1f} max/mean {s.max_mean_ratio:.2f}\nHistogram: {hist}")
    if plot:
        sections.append("Plot rows\n" + plot_rows(manifest).to_csv(index=False).rstrip())
    return "\n\n".join(sections)


def main():
    arg_parser = argparse.ArgumentParser(description="Write a markdown report for a finished run.")
    arg_parser.add_argument("workdir", help="Run directory holding manifest.json.")
    arg_parser.add_argument("-o", "--output", default=None, help="Report path (default: <workdir>/report.md).")
    args = arg_parser.parse_args()

    try:
        manifest = load_manifest(args.workdir)
        stats = global_degree_stats(args.workdir, manifest) if 'csr' in manifest.phases_completed else None
    except GraphGenError as e:
        print(f"Error: {e}")
        sys.exit(3)
    output = args.output or os.path.join(args.workdir, 'report.md')
    generate_markdown_report(manifest, stats, output)
    print(f"Report written to {output}")


if __name__ == "__main__":
    main()
