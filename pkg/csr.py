# csr.py
"""Per-node CSR construction from the owned edge list.

On-disk layout of csr.bin (all little-endian u64):
    header: magic, version, n, B, base, m_local
    offv:   B + 1 offsets
    adjv:   m_local destination ids
"""
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from cluster import AtomicArray, NodeCtx
from config import get_logger
from core import (EDGE_DTYPE, INT_BYTES, VERTEX_DTYPE, CsrError, OwnershipError, SortednessError,
                  StorageError)
from emstore import BlockHandle, EdgeStream, ExtEdgeList, IoCounters, MemoryAccountant

log = get_logger('csr')

CSR_FILE = 'csr.bin'
CSR_MAGIC = int.from_bytes(b"RMATCSR1", "little")
CSR_VERSION = 1
HEADER_WORDS = 6
HEADER_BYTES = HEADER_WORDS * INT_BYTES


@dataclass
class CsrGraph:
    node: int
    n: int
    base: int
    offv: np.ndarray
    adjv: np.ndarray

    @property
    def bucket(self) -> int:
        return len(self.offv) - 1

    @property
    def edge_count(self) -> int:
        return len(self.adjv)

    def degrees(self) -> np.ndarray:
        return np.diff(self.offv.astype(np.int64))

    def neighbors(self, v: int) -> np.ndarray:
        i = v - self.base
        if not 0 <= i < self.bucket:
            raise OwnershipError(f"Vertex {v} is not owned by node {self.node}")
        return np.asarray(self.adjv[int(self.offv[i]):int(self.offv[i + 1])])

    def edges(self) -> np.ndarray:
        out = np.empty(self.edge_count, dtype=EDGE_DTYPE)
        out['src'] = np.repeat(np.arange(self.base, self.base + self.bucket, dtype=VERTEX_DTYPE), self.degrees())
        out['des'] = self.adjv
        return out

    def canonical_adjv(self) -> np.ndarray:
        """adjv with every vertex's slice sorted; equal for any valid CSR of the same edges."""
        rows = np.repeat(np.arange(self.bucket), self.degrees())
        adj = np.asarray(self.adjv, dtype=VERTEX_DTYPE)
        return adj[np.lexsort((adj, rows))]

    def canonical_digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.offv, dtype=VERTEX_DTYPE).tobytes())
        h.update(self.canonical_adjv().tobytes())
        return h.hexdigest()


class CsrFile:
    """Writer for one node's csr.bin."""

    def __init__(self, path: Path, n: int, bucket: int, base: int, m_local: int,
                 block_bytes: int, counters: IoCounters):
        self.path = Path(path)
        self.n, self.bucket, self.base, self.m_local = n, bucket, base, m_local
        self.block_bytes = block_bytes
        self.counters = counters
        self.adjv_offset = HEADER_BYTES + (bucket + 1) * INT_BYTES
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, 'wb') as fh:
                fh.truncate(self.adjv_offset + m_local * INT_BYTES)
        except OSError as e:
            raise StorageError(f"Cannot create '{self.path}': {e}") from e

    def open_writer(self) -> BlockHandle:
        return BlockHandle(self.path, True, self.block_bytes, self.counters)

    def write_adjv(self, handle: BlockHandle, pos: int, values) -> None:
        values = np.ascontiguousarray(values, dtype=VERTEX_DTYPE)
        if pos < 0 or pos + len(values) > self.m_local:
            raise CsrError(f"adjv write [{pos}, {pos + len(values)}) outside [0, {self.m_local})")
        handle.write(self.adjv_offset + pos * INT_BYTES, values.tobytes())

    def write_head(self, offv: np.ndarray) -> None:
        header = np.array([CSR_MAGIC, CSR_VERSION, self.n, self.bucket, self.base, self.m_local], dtype=VERTEX_DTYPE)
        with self.open_writer() as handle:
            handle.write(0, header.tobytes() + np.ascontiguousarray(offv, dtype=VERTEX_DTYPE).tobytes())


def read_csr(path, node: int = 0) -> CsrGraph:
    """Load csr.bin; adjv is memory-mapped, not read into memory."""
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"CSR file not found: '{path}'")
    header = np.fromfile(path, dtype=VERTEX_DTYPE, count=HEADER_WORDS)
    if len(header) != HEADER_WORDS or int(header[0]) != CSR_MAGIC:
        raise StorageError(f"'{path}' is not a CSR file")
    if int(header[1]) != CSR_VERSION:
        raise StorageError(f"'{path}' has CSR version {int(header[1])}, expected {CSR_VERSION}")
    n, bucket, base, m_local = (int(x) for x in header[2:])
    offv = np.fromfile(path, dtype=VERTEX_DTYPE, count=bucket + 1, offset=HEADER_BYTES)
    adjv_offset = HEADER_BYTES + (bucket + 1) * INT_BYTES
    if m_local:
        adjv = np.memmap(path, dtype=VERTEX_DTYPE, mode='r', offset=adjv_offset, shape=(m_local,))
    else:
        adjv = np.empty(0, dtype=VERTEX_DTYPE)
    return CsrGraph(node=node, n=n, base=base, offv=offv, adjv=adjv)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as fh:
        for piece in iter(lambda: fh.read(1 << 20), b''):
            h.update(piece)
    return h.hexdigest()


# --- Hash variant ---
class DegreeMap:
    """Bounded map local vertex -> partial out-degree."""
    ENTRY_BYTES = 16

    def __init__(self, budget: int, memory: Optional[MemoryAccountant] = None):
        self.budget = budget
        self.memory = memory
        self.counts: Dict[int, int] = {}

    @property
    def resident_bytes(self) -> int:
        return len(self.counts) * self.ENTRY_BYTES

    def add(self, v: int) -> bool:
        """Count one edge of v; True when the map has reached its budget."""
        if v in self.counts:
            self.counts[v] += 1
        else:
            if self.memory is not None:
                self.memory.allocate(self.ENTRY_BYTES)
            self.counts[v] = 1
        return self.resident_bytes >= self.budget

    def drain(self) -> Tuple[np.ndarray, np.ndarray]:
        keys = np.fromiter(self.counts.keys(), dtype=np.int64, count=len(self.counts))
        vals = np.fromiter(self.counts.values(), dtype=VERTEX_DTYPE, count=len(self.counts))
        if self.memory is not None:
            self.memory.release(self.resident_bytes)
        self.counts = {}
        return keys, vals


class AdjMap:
    """Bounded map local vertex -> destinations not yet written."""
    KEY_BYTES = 8
    VALUE_BYTES = 8

    def __init__(self, budget: int, memory: Optional[MemoryAccountant] = None):
        self.budget = budget
        self.memory = memory
        self.lists: Dict[int, List[int]] = {}
        self.values = 0

    @property
    def resident_bytes(self) -> int:
        return len(self.lists) * self.KEY_BYTES + self.values * self.VALUE_BYTES

    def add(self, s: int, d: int) -> bool:
        grown = self.VALUE_BYTES
        dests = self.lists.get(s)
        if dests is None:
            dests = self.lists[s] = []
            grown += self.KEY_BYTES
        if self.memory is not None:
            self.memory.allocate(grown)
        dests.append(d)
        self.values += 1
        return self.resident_bytes >= self.budget

    def drain(self) -> List[Tuple[int, List[int]]]:
        items = sorted(self.lists.items())
        if self.memory is not None:
            self.memory.release(self.resident_bytes)
        self.lists = {}
        self.values = 0
        return items


def _my_share(owned: ExtEdgeList, nc: int, tid: int) -> Tuple[int, int]:
    per_core = -(-owned.count // nc) if owned.count else 0
    lo = min(tid * per_core, owned.count)
    return lo, min(lo + per_core, owned.count) - lo


def _local_sources(block: np.ndarray, lo: int, hi: int) -> np.ndarray:
    src = block['src']
    if len(src) and (int(src.min()) < lo or int(src.max()) >= hi):
        raise OwnershipError(f"Owned edge list holds src outside [{lo}, {hi})")
    return (src - np.uint64(lo)).astype(np.int64)


def build_degv(ctx: NodeCtx, tid: int, owned: ExtEdgeList, degv: AtomicArray) -> None:
    """Accumulate this core's share of out-degrees into the node-shared degv."""
    offset, length = _my_share(owned, ctx.nc, tid)
    dmap = DegreeMap(ctx.cfg.mem_per_core, ctx.memory[tid])
    flushes = 0
    for block in EdgeStream(owned, offset, length).blocks():
        for v in _local_sources(block, ctx.lo, ctx.hi).tolist():
            if dmap.add(v):
                degv.add_many(*dmap.drain())
                flushes += 1
    if dmap.counts:
        degv.add_many(*dmap.drain())
        flushes += 1
    log.debug(f"Node {ctx.bid} core {tid}: degree pass over {length} edges, {flushes} map flushes")


def build_offv(degv: np.ndarray) -> np.ndarray:
    """Exclusive prefix sum: offv[0] = 0, offv[v+1] = offv[v] + degv[v]."""
    offv = np.zeros(len(degv) + 1, dtype=VERTEX_DTYPE)
    np.cumsum(degv, dtype=VERTEX_DTYPE, out=offv[1:])
    return offv


def build_edgev(ctx: NodeCtx, tid: int, owned: ExtEdgeList, offv: np.ndarray, degv: np.ndarray,
                cursor: AtomicArray, csr_file: CsrFile) -> None:
    """Scatter this core's share of destinations into adjv at reserved positions."""
    offset, length = _my_share(owned, ctx.nc, tid)
    amap = AdjMap(ctx.cfg.mem_per_core, ctx.memory[tid])
    with csr_file.open_writer() as handle:
        def flush():
            for s, dests in amap.drain():
                k = len(dests)
                start = cursor.fetch_add(s, k)
                if start + k > int(degv[s]):
                    raise CsrError(f"Node {ctx.bid}: vertex {ctx.lo + s} overruns its adjacency slice "
                                   f"({start + k} > degree {int(degv[s])})")
                csr_file.write_adjv(handle, int(offv[s]) + start, dests)

        for block in EdgeStream(owned, offset, length).blocks():
            local = _local_sources(block, ctx.lo, ctx.hi).tolist()
            for s, d in zip(local, block['des'].tolist()):
                if amap.add(s, d):
                    flush()
        flush()


def build_csr_hash(ctx: NodeCtx, owned: ExtEdgeList) -> CsrGraph:
    """Two passes over the unordered owned list with bounded per-core maps."""
    cfg = ctx.cfg
    B = cfg.bucket
    degv = AtomicArray(B)
    ctx.run_cores(lambda tid: build_degv(ctx, tid, owned, degv))
    offv = build_offv(degv.values)
    m_local = int(offv[-1])
    if m_local != owned.count:
        raise CsrError(f"Node {ctx.bid}: degrees sum to {m_local}, owned list has {owned.count} edges")
    csr_file = CsrFile(ctx.node_dir / CSR_FILE, cfg.n, B, ctx.lo, m_local, cfg.block_bytes, ctx.io)
    csr_file.write_head(offv)
    cursor = AtomicArray(B)
    ctx.run_cores(lambda tid: build_edgev(ctx, tid, owned, offv, degv.values, cursor, csr_file))
    short = np.flatnonzero(cursor.values != degv.values)
    if len(short):
        v = int(short[0])
        raise CsrError(f"Node {ctx.bid}: vertex {ctx.lo + v} filled {int(cursor.values[v])} "
                       f"of {int(degv.values[v])} adjacency slots")
    return read_csr(csr_file.path, ctx.bid)


# --- Sorted variant ---
def build_csr_sorted(ctx: NodeCtx, owned: ExtEdgeList) -> CsrGraph:
    """Single sequential scan of a src-sorted owned list."""
    cfg = ctx.cfg
    B = cfg.bucket
    csr_file = CsrFile(ctx.node_dir / CSR_FILE, cfg.n, B, ctx.lo, owned.count, cfg.block_bytes, ctx.io)
    offv = np.zeros(B + 1, dtype=VERTEX_DTYPE)
    csrc = 0
    elidx = 0
    prev = -1
    with csr_file.open_writer() as handle:
        for block in EdgeStream(owned).blocks():
            local = _local_sources(block, ctx.lo, ctx.hi)
            if local[0] < prev or (len(local) > 1 and np.any(np.diff(local) < 0)):
                raise SortednessError(f"Node {ctx.bid}: owned edge list is not sorted by src "
                                      f"near edge {elidx}")
            last = int(local[-1])
            if last > csrc:
                vs = np.arange(csrc + 1, last + 1)
                offv[vs] = elidx + np.searchsorted(local, vs, side='left')
                csrc = last
            csr_file.write_adjv(handle, elidx, block['des'])
            elidx += len(block)
            prev = last
    offv[csrc + 1:] = elidx
    csr_file.write_head(offv)
    return read_csr(csr_file.path, ctx.bid)


def build_csr(ctx: NodeCtx, owned: ExtEdgeList) -> CsrGraph:
    if ctx.cfg.csr_variant == 'sorted':
        return build_csr_sorted(ctx, owned)
    return build_csr_hash(ctx, owned)
