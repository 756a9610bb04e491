# pipeline.py
"""Phase driver: shuffle -> generate -> relabel -> redistribute -> csr,
with per-phase accounting and the run manifest."""
import datetime
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from cluster import NodeCtx, PermuteServer, run_cluster
from config import get_logger
from core import (INT_BYTES, VERTEX_DTYPE, ConfigError, ConservationError, GraphGenError, PhaseOrderError,
                  PipelineError, StorageError)
from csr import CSR_FILE, build_csr, file_digest, read_csr
from emstore import ExtEdgeList, IoCounters, MemoryAccountant
from models_pydantic import ClusterConfig, ErrorReport, IoStats, PhaseRecord, RunManifest
from redistribute import OWNED_FILE, redistribute
from relabel import label_edges
from rmat import EDGE_STREAM, RNG_ALGORITHM, RngStream, generate_edgelist
from shuffle import distributed_shuffle
from validate import MANIFEST_FILE, PERMUTATION_FILE, load_manifest

log = get_logger('pipeline')

SOFTWARE_VERSION = '1.0.0'
PHASES = ('shuffle', 'generate', 'relabel', 'redistribute', 'csr')
ERROR_FILE = 'error.json'

# Settings that may differ between the invocations of a phase-by-phase run.
RUNTIME_ONLY_FIELDS = {'jitter_ms', 'watchdog_seconds', 'channel_capacity', 'dump_permutation', 'workdir'}


@dataclass
class NodeResult:
    node: int
    records: List[PhaseRecord] = field(default_factory=list)
    owned_edges: Optional[int] = None


def store_path(ctx: NodeCtx, tid: int, phase: str) -> Path:
    return ctx.core_dir(tid) / f"edges.{phase}.bin"


def _open_store(ctx: NodeCtx, tid: int, phase: str) -> ExtEdgeList:
    path = store_path(ctx, tid, phase)
    if not path.is_file():
        raise PhaseOrderError(f"Node {ctx.bid} core {tid}: '{path.name}' missing; run the {phase} phase first")
    return ExtEdgeList.open(path, ctx.cfg.block_edges, ctx.cfg.chunk_edges, ctx.core_io[tid])


# --- Phases ---
def phase_shuffle(ctx: NodeCtx) -> Dict:
    memory = MemoryAccountant(2 * ctx.cfg.bucket * INT_BYTES, name=f"node{ctx.bid}-shuffle")
    pv = distributed_shuffle(ctx, ctx.cfg.seed, memory)
    ctx.pv = pv
    ctx.node_dir.mkdir(parents=True, exist_ok=True)
    pv.tofile(ctx.node_dir / PERMUTATION_FILE)
    return {'peak': memory.peak}


def phase_generate(ctx: NodeCtx) -> Dict:
    cfg = ctx.cfg

    def generate_core(tid: int) -> None:
        store = ExtEdgeList.create(store_path(ctx, tid, 'generate'), cfg.block_edges, cfg.chunk_edges,
                                   ctx.core_io[tid])
        generate_edgelist(store, cfg.generated_per_core, RngStream(cfg.seed, ctx.bid, tid, EDGE_STREAM),
                          cfg.scale, cfg.rmat_params.as_tuple(), cfg.emit_both_orientations)
        store.close()

    ctx.run_cores(generate_core)
    return {}


def _load_permutation(ctx: NodeCtx) -> None:
    path = ctx.node_dir / PERMUTATION_FILE
    if not path.is_file():
        raise PhaseOrderError(f"Node {ctx.bid}: no permutation at '{path}'; run the shuffle phase first")
    pv = np.fromfile(path, dtype=VERTEX_DTYPE)
    if len(pv) != ctx.cfg.bucket:
        raise StorageError(f"Node {ctx.bid}: '{path}' holds {len(pv)} entries, expected {ctx.cfg.bucket}")
    ctx.pv = pv


def phase_relabel(ctx: NodeCtx) -> Dict:
    cfg = ctx.cfg
    if ctx.pv is None:
        _load_permutation(ctx)

    def relabel_core(tid: int) -> Dict[str, IoStats]:
        generated = _open_store(ctx, tid, 'generate')
        relabelled = ExtEdgeList.create(store_path(ctx, tid, 'relabel'), cfg.block_edges, cfg.chunk_edges,
                                        ctx.core_io[tid])
        passes = {f"des.{k}": v for k, v in label_edges(ctx, tid, 'des', generated, relabelled).items()}
        passes.update({f"src.{k}": v for k, v in label_edges(ctx, tid, 'src', relabelled, relabelled).items()})
        relabelled.close()
        return passes

    server = PermuteServer(ctx).start()
    try:
        per_core = ctx.run_cores(relabel_core)
        # nobody may stop serving while another node still asks for slices
        ctx.world_barrier()
    finally:
        server.stop()
    return {'passes': per_core}


def phase_redistribute(ctx: NodeCtx) -> Dict:
    stores = [_open_store(ctx, tid, 'relabel') for tid in range(ctx.nc)]
    owned = redistribute(ctx, stores, ctx.cfg.redistribute_mode)
    return {'owned': owned.count}


def phase_csr(ctx: NodeCtx) -> Dict:
    path = ctx.node_dir / OWNED_FILE
    if not path.is_file():
        raise PhaseOrderError(f"Node {ctx.bid}: no owned edge list; run the redistribute phase first")
    owned = ExtEdgeList.open(path, ctx.cfg.block_edges, ctx.cfg.chunk_edges, ctx.io)
    csr = build_csr(ctx, owned)
    log.info(f"Node {ctx.bid}: CSR holds {csr.edge_count} edges over {csr.bucket} vertices")
    return {}


PHASE_RUNNERS: Dict[str, Callable[[NodeCtx], Dict]] = {
    'shuffle': phase_shuffle,
    'generate': phase_generate,
    'relabel': phase_relabel,
    'redistribute': phase_redistribute,
    'csr': phase_csr,
}


def run_phase(ctx: NodeCtx, name: str, result: NodeResult) -> None:
    """Run one phase on this node, close it with a world barrier and record its cost."""
    ctx.phase = name
    for m in ctx.memory:
        m.reset_peak()
    node_before = ctx.io.snapshot()
    core_before = [c.snapshot() for c in ctx.core_io]
    started = time.perf_counter()
    log.info(f"Node {ctx.bid}: phase '{name}' started")

    extra = PHASE_RUNNERS[name](ctx) or {}
    ctx.world_barrier()

    seconds = time.perf_counter() - started
    peaks = [m.peak for m in ctx.memory]
    result.records.append(PhaseRecord(phase=name, node=ctx.bid, seconds=seconds,
                                      io=ctx.io.snapshot() - node_before,
                                      peak_memory=max(peaks + [extra.get('peak', 0)])))
    for tid, counters in enumerate(ctx.core_io):
        result.records.append(PhaseRecord(phase=name, node=ctx.bid, core=tid, seconds=seconds,
                                          io=counters.snapshot() - core_before[tid], peak_memory=peaks[tid]))
    for tid, passes in enumerate(extra.get('passes', [])):
        for sub, io in passes.items():
            result.records.append(PhaseRecord(phase=f"{name}.{sub}", node=ctx.bid, core=tid, io=io))
    if 'owned' in extra:
        result.owned_edges = extra['owned']
    log.info(f"Node {ctx.bid}: phase '{name}' done in {seconds:.3f}s")


def node_program(phases: Sequence[str]) -> Callable[[NodeCtx], NodeResult]:
    def program(ctx: NodeCtx) -> NodeResult:
        result = NodeResult(node=ctx.bid)
        for name in phases:
            run_phase(ctx, name, result)
        return result
    return program


# --- Manifest ---
def write_json_atomic(path: Path, payload: Dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as fh:
            json.dump(payload, fh, indent=2)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_error(workdir: Path, err: BaseException) -> None:
    report = ErrorReport(
        error_type=type(err.__cause__ if isinstance(err, PipelineError) and err.__cause__ else err).__name__,
        message=str(err),
        phase=getattr(err, 'phase', None),
        node=getattr(err, 'node', None),
        created_at=datetime.datetime.now().isoformat(timespec='seconds'),
    )
    try:
        write_json_atomic(workdir / ERROR_FILE, report.model_dump(mode='json'))
    except OSError as e:
        log.error(f"Could not write {ERROR_FILE} to '{workdir}': {e}", exc_info=True)


def resolve_phases(phases: Optional[Sequence[str]]) -> List[str]:
    if not phases:
        return list(PHASES)
    unknown = [p for p in phases if p not in PHASES]
    if unknown:
        raise ConfigError(f"Unknown phase(s) {unknown}; choose from {list(PHASES)}")
    return [p for p in PHASES if p in phases]


def _comparable(config: Dict) -> Dict:
    return {k: v for k, v in config.items() if k not in RUNTIME_ONLY_FIELDS}


def _previous_manifest(cfg: ClusterConfig, workdir: Path, phases: List[str]) -> Optional[RunManifest]:
    first = PHASES.index(phases[0])
    if first == 0:
        return None
    try:
        previous = load_manifest(workdir)
    except GraphGenError as e:
        raise PhaseOrderError(f"Cannot start at phase '{phases[0]}': {e}") from e
    missing = [p for p in PHASES[:first] if p not in previous.phases_completed]
    if missing:
        raise PhaseOrderError(f"Cannot start at phase '{phases[0]}': {missing} not completed in '{workdir}'")
    if _comparable(previous.config) != _comparable(cfg.model_dump(mode='json')):
        raise ConfigError(f"Configuration differs from the run recorded in '{workdir}'")
    return previous


def _gather_permutation(cfg: ClusterConfig, target: str) -> None:
    parts = [np.fromfile(Path(cfg.workdir) / f"n{b}" / PERMUTATION_FILE, dtype=VERTEX_DTYPE)
             for b in range(cfg.nodes)]
    out = Path(target)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.concatenate(parts).tofile(out)
    log.info(f"Permutation of {cfg.n} vertices written to '{out}'")


def run_pipeline(cfg: ClusterConfig, phases: Optional[Sequence[str]] = None) -> RunManifest:
    """Run the requested phases (all by default) and write manifest.json.

    Any GraphGenError, including a refused resumption, leaves error.json behind.
    """
    phases = resolve_phases(phases)
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    try:
        manifest = _run_phases(cfg, workdir, phases)
    except GraphGenError as e:
        write_error(workdir, e)
        raise
    (workdir / ERROR_FILE).unlink(missing_ok=True)
    return manifest


def _run_phases(cfg: ClusterConfig, workdir: Path, phases: List[str]) -> RunManifest:
    previous = _previous_manifest(cfg, workdir, phases)
    if previous is None:
        for stale in (MANIFEST_FILE, ERROR_FILE):
            (workdir / stale).unlink(missing_ok=True)

    log.info(f"Run started: scale={cfg.scale} f={cfg.edge_factor} nb={cfg.nodes} nc={cfg.cores} "
             f"phases={phases} workdir='{workdir}'")
    run_io = IoCounters(name='run')
    results: List[NodeResult] = run_cluster(cfg, node_program(phases), run_io=run_io)
    owned = [r.owned_edges or 0 for r in results]
    if 'redistribute' in phases and sum(owned) != cfg.total_edges:
        raise ConservationError(f"Nodes own {sum(owned)} edges after redistribution, "
                                f"generated {cfg.total_edges}", phase='redistribute')

    records = [r for res in results for r in res.records]
    phase_seconds = {p: max(r.seconds for r in records if r.phase == p and r.core is None) for p in phases}
    if previous is not None:
        records = [r for r in previous.records if r.phase.split('.')[0] not in phases] + records
        phase_seconds = {**{k: v for k, v in previous.phase_seconds.items() if k not in phases}, **phase_seconds}
        completed = [p for p in PHASES if p in previous.phases_completed or p in phases]
    else:
        completed = list(phases)

    manifest = RunManifest(
        software_version=SOFTWARE_VERSION,
        numpy_version=np.__version__,
        created_at=datetime.datetime.now().isoformat(timespec='seconds'),
        config=cfg.model_dump(mode='json'),
        rng_algorithm=RNG_ALGORITHM,
        seeds={
            'master': str(cfg.seed),
            'shuffle': 'SeedSequence(master, spawn_key=(0, node, 0, round))',
            'edges': 'SeedSequence(master, spawn_key=(1, node, core, 0))',
        },
        phases_completed=completed,
        phase_seconds=phase_seconds,
        records=records,
        owned_edges=owned if 'redistribute' in phases else (previous.owned_edges if previous else []),
    )
    if 'csr' in completed:
        for b in range(cfg.nodes):
            path = workdir / f"n{b}" / CSR_FILE
            manifest.checksums[f"n{b}/{CSR_FILE}"] = file_digest(path)
            manifest.canonical_checksums[f"n{b}/{CSR_FILE}"] = read_csr(path, b).canonical_digest()
    if cfg.dump_permutation:
        _gather_permutation(cfg, cfg.dump_permutation)

    write_json_atomic(workdir / MANIFEST_FILE, manifest.model_dump(mode='json'))
    log.info(f"Run finished: {', '.join(f'{p} {s:.2f}s' for p, s in phase_seconds.items())}")
    return manifest
