# cli.py
"""Command-line entry point: generate, validate, stats, sweep."""
import argparse
import sys
from typing import List, Optional

from config import get_logger, load_cluster_config, parse_size
from core import ConfigError, GraphGenError, IncompleteWorkdirError, PipelineError
from pipeline import PHASES, run_pipeline
from report_generator import render_table, stats_report
from sweep import SWEEP_KINDS, write_sweep
from validate import validate_workdir

log = get_logger('cli')

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INCOMPLETE = 3


def _size(value: str) -> int:
    try:
        return parse_size(value)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> argparse.ArgumentParser:
    arg_parser = argparse.ArgumentParser(prog='rmatgen',
                                         description="External-memory distributed R-MAT graph generator.")
    sub = arg_parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', help="Run the pipeline and write per-node CSR files.")
    gen.add_argument("--config", help="KEY=VALUE file with cluster settings; flags override it.")
    gen.add_argument("--scale", type=int, help="log2 of the vertex count.")
    gen.add_argument("--edge-factor", type=int, help="Edges per vertex (default 16).")
    gen.add_argument("--nodes", type=int, help="Simulated nodes, a power of two.")
    gen.add_argument("--cores", type=int, help="Cores per node, a power of two.")
    gen.add_argument("--mem-per-core", type=_size, help="Working memory per core, e.g. 8MiB.")
    gen.add_argument("--block-edges", type=int, help="Edges per I/O block.")
    gen.add_argument("--packet-bytes", type=_size, help="Bytes per redistribution packet.")
    gen.add_argument("--seed", type=int, help="Master seed.")
    gen.add_argument("--rmat-params", help="a,b,c,d quadrant probabilities.")
    gen.add_argument("--csr-variant", choices=['sorted', 'hash'])
    gen.add_argument("--redistribute", choices=['sorted', 'unordered'])
    gen.add_argument("--emit-both-orientations", action='store_true', default=None,
                     help="Store (v, u) next to every generated (u, v).")
    gen.add_argument("--workdir", help="Run directory.")
    gen.add_argument("--jitter", type=float, help="Random delay of up to this many ms per message.")
    gen.add_argument("--watchdog", type=float, help="Seconds before a stalled wait is declared a deadlock.")
    gen.add_argument("--phase", action='append', choices=list(PHASES),
                     help="Run only this phase; repeatable. Earlier phases must already be complete.")
    gen.add_argument("--dump-permutation", metavar='PATH', help="Also write the whole permutation to PATH.")

    val = sub.add_parser('validate', help="Compare a finished run against the in-memory oracle.")
    val.add_argument("--workdir", required=True)

    st = sub.add_parser('stats', help="Print I/O, timing and degree tables for a run.")
    st.add_argument("--workdir", required=True)
    st.add_argument("--per-core", action='store_true', help="Break block I/O down per core.")
    st.add_argument("--plot", action='store_true', help="Append normalized CSV rows for plotting.")

    sw = sub.add_parser('sweep', help="Run a grid of pipelines and plot normalized time and block I/O.")
    sw.add_argument("--kind", choices=list(SWEEP_KINDS), required=True)
    sw.add_argument("--scales", type=int, nargs='+', required=True,
                    help="Scales to run; for weak scaling only the first is used.")
    sw.add_argument("--nodes", type=int, nargs='+', default=[1], help="Node counts (ignored for single-node).")
    sw.add_argument("--config", help="KEY=VALUE file with the remaining cluster settings.")
    sw.add_argument("--cores", type=int, help="Cores per node.")
    sw.add_argument("--edge-factor", type=int, help="Edges per vertex (default 16).")
    sw.add_argument("--mem-per-core", type=_size, help="Working memory per core, e.g. 8MiB.")
    sw.add_argument("--block-edges", type=int, help="Edges per I/O block.")
    sw.add_argument("--seed", type=int, help="Master seed.")
    sw.add_argument("--workdir", required=True, help="Directory for the runs, sweep_<kind>.csv and .png.")
    return arg_parser


def cmd_generate(args) -> int:
    overrides = {
        'scale': args.scale,
        'edge_factor': args.edge_factor,
        'nodes': args.nodes,
        'cores': args.cores,
        'mem_per_core': args.mem_per_core,
        'block_edges': args.block_edges,
        'packet_bytes': args.packet_bytes,
        'seed': args.seed,
        'rmat_params': args.rmat_params,
        'csr_variant': args.csr_variant,
        'redistribute_mode': args.redistribute,
        'emit_both_orientations': args.emit_both_orientations,
        'workdir': args.workdir,
        'jitter_ms': args.jitter,
        'watchdog_seconds': args.watchdog,
        'dump_permutation': args.dump_permutation,
    }
    try:
        cfg = load_cluster_config(args.config, overrides)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_pipeline(cfg, args.phase)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as e:
        print(f"Run failed in {e}", file=sys.stderr)
        return EXIT_FAILURE
    except GraphGenError as e:
        print(f"Run failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"Completed phases {manifest.phases_completed} in '{cfg.workdir}'")
    for name, digest in manifest.canonical_checksums.items():
        print(f"  {name}: {digest}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        report = validate_workdir(args.workdir)
    except IncompleteWorkdirError as e:
        print(f"Incomplete run directory: {e}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except GraphGenError as e:
        print(f"Validation failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    for name, passed in report.checks.items():
        print(f"  [{'ok' if passed else 'FAIL'}] {name}")
    for line in report.mismatches:
        print(f"  mismatch: {line}")
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_stats(args) -> int:
    try:
        print(stats_report(args.workdir, per_core=args.per_core, plot=args.plot))
    except IncompleteWorkdirError as e:
        print(f"Incomplete run directory: {e}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except GraphGenError as e:
        print(f"Stats failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(args) -> int:
    overrides = {
        'scale': args.scales[0],
        'nodes': 1,
        'cores': args.cores,
        'edge_factor': args.edge_factor,
        'mem_per_core': args.mem_per_core,
        'block_edges': args.block_edges,
        'seed': args.seed,
        'workdir': args.workdir,
    }
    try:
        base = load_cluster_config(args.config, overrides)
        df, csv_path, png_path = write_sweep(base, args.kind, args.scales, args.nodes, args.workdir)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as e:
        print(f"Sweep failed in {e}", file=sys.stderr)
        return EXIT_FAILURE
    except GraphGenError as e:
        print(f"Sweep failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(render_table(df.drop(columns=['kind'])))
    print(f"Rows written to {csv_path}")
    print(f"Figure written to {png_path}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == 'generate':
        return cmd_generate(args)
    if args.command == 'validate':
        return cmd_validate(args)
    if args.command == 'sweep':
        return cmd_sweep(args)
    return cmd_stats(args)


if __name__ == "__main__":
    sys.exit(main())
