# sweep.py
"""Scaling experiments: run a grid of pipelines and plot time and block I/O
per phase, normalized to a scale-16 run.

single-node  one node, growing scale
strong       fixed scales, growing node count
weak         scale grows by one each time the node count doubles
"""
from pathlib import Path
from typing import List, Sequence, Tuple

import matplotlib as mpl
mpl.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd
from pydantic import ValidationError

from config import get_logger
from core import ConfigError, is_power_of_two
from models_pydantic import IO_FIELDS, ClusterConfig
from pipeline import PHASES, run_pipeline
from report_generator import owned_balance, plot_rows

log = get_logger('sweep')

SWEEP_KINDS = ('single-node', 'strong', 'weak')
# phases whose cost grows with the node count under weak scaling
WEAK_PHASES = ('relabel', 'redistribute')

plt.rcParams['font.size'] = 9
plt.rcParams['figure.figsize'] = [7.0, 3.2]


def sweep_grid(kind: str, scales: Sequence[int], nodes: Sequence[int]) -> List[Tuple[int, int]]:
    """(scale, nodes) pairs to run for one experiment kind."""
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"Unknown sweep kind '{kind}'; choose from {list(SWEEP_KINDS)}")
    if not scales or not nodes:
        raise ConfigError("A sweep needs at least one scale and one node count")
    if kind == 'single-node':
        return [(s, 1) for s in scales]
    if kind == 'strong':
        return [(s, nb) for s in scales for nb in nodes]
    if any(not is_power_of_two(nb) for nb in nodes) or list(nodes) != sorted(set(nodes)):
        raise ConfigError(f"Weak scaling needs ascending powers of two for the node counts, got {list(nodes)}")
    base = nodes[0].bit_length()
    return [(scales[0] + nb.bit_length() - base, nb) for nb in nodes]


def _run_config(base: ClusterConfig, scale: int, nodes: int, workdir: Path) -> ClusterConfig:
    try:
        return ClusterConfig(**{**base.model_dump(), 'scale': scale, 'nodes': nodes, 'workdir': str(workdir),
                                'dump_permutation': None})
    except ValidationError as e:
        raise ConfigError(f"Sweep point scale={scale} nodes={nodes} is not a valid cluster: {e}") from e


def run_sweep(base: ClusterConfig, kind: str, scales: Sequence[int], nodes: Sequence[int],
              out_dir) -> pd.DataFrame:
    """Run every grid point under out_dir and return the normalized per-phase rows."""
    out_dir = Path(out_dir)
    frames = []
    for scale, nb in sweep_grid(kind, scales, nodes):
        cfg = _run_config(base, scale, nb, out_dir / f"s{scale}_nb{nb}_nc{base.cores}")
        log.info(f"Sweep '{kind}': running scale {scale} on {nb} node(s)")
        manifest = run_pipeline(cfg)
        rows = plot_rows(manifest)
        rows = rows[rows['phase'].isin(PHASES)].copy()
        rows['seconds'] = rows['seconds_norm'] * 2.0 ** (scale - 16)
        rows['blocks_norm'] = rows[[f"{f}_norm" for f in IO_FIELDS]].sum(axis=1)
        rows['owned_max_mean'] = owned_balance(manifest)['max_mean_ratio']
        frames.append(rows)
    df = pd.concat(frames, ignore_index=True)
    df.insert(0, 'kind', kind)
    return df


def plot_sweep(df: pd.DataFrame, kind: str, output_filename) -> Path:
    fig, (ax_time, ax_io) = plt.subplots(1, 2)
    if kind == 'single-node':
        for phase, rows in df.groupby('phase', sort=False):
            ax_time.plot(rows['scale'], rows['seconds_norm'], marker='o', label=phase)
            ax_io.plot(rows['scale'], rows['blocks_norm'], marker='o', label=phase)
        for ax in (ax_time, ax_io):
            ax.set_xlabel('scale')
    elif kind == 'strong':
        totals = df.groupby(['scale', 'nodes'], sort=False)[['seconds_norm', 'blocks_norm']].sum().reset_index()
        for scale, rows in totals.groupby('scale'):
            ax_time.plot(rows['nodes'], rows['seconds_norm'], marker='o', label=f"scale {scale}")
            ax_io.plot(rows['nodes'], rows['blocks_norm'], marker='o', label=f"scale {scale}")
        for ax in (ax_time, ax_io):
            ax.set_xscale('log', base=2)
            ax.set_xlabel('nodes')
    else:
        points = df[['scale', 'nodes']].drop_duplicates()
        labels = [f"({s},{nb})" for s, nb in zip(points['scale'], points['nodes'])]
        for phase in WEAK_PHASES:
            rows = df[df['phase'] == phase]
            ax_time.plot(labels, rows['seconds'], marker='o', label=phase)
        balance = df.drop_duplicates(['scale', 'nodes'])['owned_max_mean']
        ax_io.plot(labels, balance, marker='o', color='k', label='owned max/mean')
        for ax in (ax_time, ax_io):
            ax.set_xlabel('(scale, nodes)')

    ax_time.set_ylabel('seconds' if kind == 'weak' else 'seconds / 2^(scale-16)')
    ax_io.set_ylabel('owned edges max/mean' if kind == 'weak' else 'blocks / 2^(scale-16)')
    for ax in (ax_time, ax_io):
        ax.spines['right'].set_visible(False)
        ax.spines['top'].set_visible(False)
        ax.legend(fontsize=7)
    fig.suptitle(f"{kind} sweep")
    output_filename = Path(output_filename)
    output_filename.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(output_filename, bbox_inches='tight')
    plt.close(fig)
    log.info(f"Sweep figure written to '{output_filename}'")
    return output_filename


def write_sweep(base: ClusterConfig, kind: str, scales: Sequence[int], nodes: Sequence[int],
                out_dir) -> Tuple[pd.DataFrame, Path, Path]:
    """Run the sweep, then write sweep_<kind>.csv and sweep_<kind>.png into out_dir."""
    out_dir = Path(out_dir)
    df = run_sweep(base, kind, scales, nodes, out_dir)
    csv_path = out_dir / f"sweep_{kind}.csv"
    df.to_csv(csv_path, index=False)
    png_path = plot_sweep(df, kind, out_dir / f"sweep_{kind}.png")
    return df, csv_path, png_path
