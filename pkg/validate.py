# validate.py
"""In-memory oracle and checks for permutations, CSR slices and whole runs."""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from config import get_logger
from core import (EDGE_DTYPE, VERTEX_DTYPE, ConfigError, IncompleteWorkdirError, canonical_edges,
                  range_partition)
from csr import CSR_FILE, CsrGraph, read_csr
from emstore import ExtEdgeList
from models_pydantic import (ClusterConfig, CsrReport, DegreeStats, PermutationReport, RunManifest,
                             ValidationReport)
from redistribute import OWNED_FILE
from rmat import EDGE_STREAM, RngStream, generate_edges
from shuffle import replay_shuffle

log = get_logger('validate')

ORACLE_MAX_SCALE = 22
MANIFEST_FILE = 'manifest.json'
PERMUTATION_FILE = 'pv.bin'
REPORT_LIMIT = 20


@dataclass
class OracleGraph:
    cfg: ClusterConfig
    pv: np.ndarray
    raw: np.ndarray
    relabelled: np.ndarray
    offv: np.ndarray
    adjv: np.ndarray

    def owned(self, node: int) -> np.ndarray:
        r = range_partition(self.cfg.n, self.cfg.nodes)[node]
        src = self.relabelled['src']
        return self.relabelled[(src >= r.lo) & (src < r.hi)]

    def csr_slice(self, node: int) -> CsrGraph:
        r = range_partition(self.cfg.n, self.cfg.nodes)[node]
        offv = self.offv[r.lo:r.hi + 1] - self.offv[r.lo]
        adjv = self.adjv[int(self.offv[r.lo]):int(self.offv[r.hi])]
        return CsrGraph(node=node, n=self.cfg.n, base=r.lo, offv=offv.astype(VERTEX_DTYPE), adjv=adjv)


def oracle_permutation(cfg: ClusterConfig) -> np.ndarray:
    return np.concatenate(replay_shuffle(cfg.n, cfg.nodes, cfg.seed))


def oracle_generate(cfg: ClusterConfig) -> OracleGraph:
    """Replay the whole pipeline in one process from the same random streams."""
    if cfg.scale > ORACLE_MAX_SCALE:
        raise ConfigError(f"Oracle is limited to scale {ORACLE_MAX_SCALE}, got {cfg.scale}")
    pv = oracle_permutation(cfg)
    parts = [generate_edges(cfg.generated_per_core, RngStream(cfg.seed, node, core, EDGE_STREAM),
                            cfg.scale, cfg.rmat_params.as_tuple(), cfg.emit_both_orientations)
             for node in range(cfg.nodes) for core in range(cfg.cores)]
    raw = np.concatenate(parts) if parts else np.empty(0, dtype=EDGE_DTYPE)
    relabelled = np.empty_like(raw)
    relabelled['src'] = pv[raw['src']]
    relabelled['des'] = pv[raw['des']]
    order = np.argsort(relabelled['src'], kind='stable')
    offv = np.zeros(cfg.n + 1, dtype=VERTEX_DTYPE)
    np.cumsum(np.bincount(relabelled['src'].astype(np.int64), minlength=cfg.n), dtype=VERTEX_DTYPE, out=offv[1:])
    return OracleGraph(cfg, pv, raw, relabelled, offv, relabelled['des'][order])


# --- Checks ---
def verify_permutation(pv, n: int) -> PermutationReport:
    pv = np.asarray(pv, dtype=np.int64)
    in_range = (pv >= 0) & (pv < n)
    counts = np.bincount(pv[in_range], minlength=n)
    duplicates = np.flatnonzero(counts > 1)
    missing = np.flatnonzero(counts == 0)
    out_of_range = int(np.count_nonzero(~in_range))
    k = min(len(pv), n)
    return PermutationReport(
        n=n,
        length=len(pv),
        bijective=len(pv) == n and not len(duplicates) and not len(missing) and out_of_range == 0,
        duplicates=duplicates[:REPORT_LIMIT].tolist(),
        missing=missing[:REPORT_LIMIT].tolist(),
        out_of_range=out_of_range,
        fixed_points=int(np.count_nonzero(pv[:k] == np.arange(k))),
    )


def _as_edges(owned: Union[ExtEdgeList, np.ndarray]) -> np.ndarray:
    if isinstance(owned, ExtEdgeList):
        return owned.read_all()
    return np.asarray(owned, dtype=EDGE_DTYPE)


def verify_csr(csr: CsrGraph, owned: Union[ExtEdgeList, np.ndarray]) -> CsrReport:
    """Check offsets are well formed and the slice holds exactly the owned multiset."""
    issues: List[str] = []
    offv = csr.offv.astype(np.int64)
    if len(offv) == 0 or offv[0] != 0:
        issues.append("offv[0] is not 0")
    steps = np.diff(offv)
    if np.any(steps < 0):
        issues.append(f"offv decreases at vertex {csr.base + int(np.flatnonzero(steps < 0)[0])}")
    if len(offv) and offv[-1] != csr.edge_count:
        issues.append(f"offv[B]={int(offv[-1])} but adjv holds {csr.edge_count} entries")
    edges = _as_edges(owned)
    if len(edges) != csr.edge_count:
        issues.append(f"owned list has {len(edges)} edges, CSR has {csr.edge_count}")
    if not issues:
        want = canonical_edges(edges)
        got = canonical_edges(csr.edges())
        diff = np.flatnonzero((want['src'] != got['src']) | (want['des'] != got['des']))
        if len(diff):
            i = int(diff[0])
            issues.append(f"edge multiset differs at vertex {int(want['src'][i])}: "
                          f"expected ({int(want['src'][i])}, {int(want['des'][i])}), "
                          f"found ({int(got['src'][i])}, {int(got['des'][i])})")
    return CsrReport(node=csr.node, ok=not issues, edges=csr.edge_count, issues=issues)


def _bin_label(k: int) -> str:
    if k == 0:
        return '0'
    lo, hi = 1 << (k - 1), (1 << k) - 1
    return str(lo) if lo == hi else f"{lo}-{hi}"


def degree_stats(source) -> DegreeStats:
    """Out-degree summary of a CSR slice or an offv array; histogram bins are powers of two."""
    offv = source.offv if isinstance(source, CsrGraph) else np.asarray(source)
    degrees = np.diff(offv.astype(np.int64))
    if len(degrees) == 0:
        return DegreeStats(vertices=0, edges=0, min_degree=0, max_degree=0, mean_degree=0.0,
                           median_degree=0.0, max_mean_ratio=0.0)
    mean = float(degrees.mean())
    bins = np.zeros(len(degrees), dtype=np.int64)
    nz = degrees > 0
    bins[nz] = np.floor(np.log2(degrees[nz])).astype(np.int64) + 1
    counts = np.bincount(bins)
    return DegreeStats(
        vertices=len(degrees),
        edges=int(degrees.sum()),
        min_degree=int(degrees.min()),
        max_degree=int(degrees.max()),
        mean_degree=mean,
        median_degree=float(np.median(degrees)),
        max_mean_ratio=float(degrees.max()) / mean if mean > 0 else 0.0,
        histogram={_bin_label(k): int(c) for k, c in enumerate(counts) if c},
    )


# --- Workdir validation ---
def load_manifest(workdir) -> RunManifest:
    path = Path(workdir) / MANIFEST_FILE
    if not path.is_file():
        raise IncompleteWorkdirError(f"No {MANIFEST_FILE} in '{workdir}'")
    return RunManifest.model_validate(json.loads(path.read_text(encoding='utf-8')))


def load_permutation(workdir, cfg: ClusterConfig) -> np.ndarray:
    parts = []
    for node in range(cfg.nodes):
        path = Path(workdir) / f"n{node}" / PERMUTATION_FILE
        if not path.is_file():
            raise IncompleteWorkdirError(f"Missing permutation slice '{path}'")
        parts.append(np.fromfile(path, dtype=VERTEX_DTYPE))
    return np.concatenate(parts)


def validate_workdir(workdir, cfg: Optional[ClusterConfig] = None) -> ValidationReport:
    """Compare a finished run against the oracle rebuilt from its manifest."""
    workdir = Path(workdir)
    manifest = load_manifest(workdir)
    if 'csr' not in manifest.phases_completed:
        raise IncompleteWorkdirError(f"Run in '{workdir}' has not completed the csr phase")
    cfg = cfg or ClusterConfig(**manifest.config)
    oracle = oracle_generate(cfg)
    report = ValidationReport(workdir=str(workdir), ok=True)

    pv = load_permutation(workdir, cfg)
    report.permutation = verify_permutation(pv, cfg.n)
    report.checks['permutation_bijective'] = report.permutation.bijective
    report.checks['permutation_matches_oracle'] = bool(np.array_equal(pv, oracle.pv))
    if not report.checks['permutation_matches_oracle']:
        report.mismatches.append("permutation differs from the oracle replay")

    total = 0
    owned_ok = csr_ok = slices_ok = True
    for node in range(cfg.nodes):
        node_dir = workdir / f"n{node}"
        if not (node_dir / OWNED_FILE).is_file() or not (node_dir / CSR_FILE).is_file():
            raise IncompleteWorkdirError(f"Node {node} output missing under '{node_dir}'")
        owned = ExtEdgeList.open(node_dir / OWNED_FILE, cfg.block_edges).read_all()
        total += len(owned)
        want = canonical_edges(oracle.owned(node))
        if not np.array_equal(canonical_edges(owned), want):
            owned_ok = False
            report.mismatches.append(f"node {node}: owned edges differ from the oracle")
        if cfg.redistribute_mode == 'sorted' and len(owned) > 1 and np.any(np.diff(owned['src'].astype(np.int64)) < 0):
            owned_ok = False
            report.mismatches.append(f"node {node}: owned edges are not sorted by src")
        csr = read_csr(node_dir / CSR_FILE, node)
        rep = verify_csr(csr, owned)
        report.csr.append(rep)
        if not rep.ok:
            csr_ok = False
            report.mismatches.extend(f"node {node}: {issue}" for issue in rep.issues)
        expected = oracle.csr_slice(node)
        if not (np.array_equal(csr.offv, expected.offv)
                and np.array_equal(csr.canonical_adjv(), expected.canonical_adjv())):
            slices_ok = False
            report.mismatches.append(f"node {node}: CSR slice differs from the oracle")

    report.checks['edge_conservation'] = total == cfg.total_edges
    if total != cfg.total_edges:
        report.mismatches.append(f"run holds {total} edges, expected {cfg.total_edges}")
    report.checks['owned_edges_match_oracle'] = owned_ok
    report.checks['csr_well_formed'] = csr_ok
    report.checks['csr_matches_oracle'] = slices_ok
    report.ok = all(report.checks.values())
    log.info(f"Validated '{workdir}': {'OK' if report.ok else f'{len(report.mismatches)} mismatches'}")
    return report
