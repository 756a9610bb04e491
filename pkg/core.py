# core.py
"""Domain types shared by every phase: the edge record layout, range and chunk
partitioning, vertex ownership, and the error hierarchy."""
from typing import List, NamedTuple, Optional

import numpy as np

# --- Record Layout ---
# Two little-endian u64 per edge; this is also the on-disk format.
EDGE_DTYPE = np.dtype([('src', '<u8'), ('des', '<u8')])
EDGE_BYTES = EDGE_DTYPE.itemsize
VERTEX_DTYPE = np.dtype('<u8')
INT_BYTES = VERTEX_DTYPE.itemsize

SORT_KEYS = ('src', 'des')

MIB = 1 << 20


# --- Errors ---
class GraphGenError(Exception):
    """Base class for every fault raised by the generator."""


class ConfigError(GraphGenError, ValueError):
    pass


class StorageError(GraphGenError):
    pass


class SortednessError(GraphGenError):
    pass


class MemoryBudgetError(GraphGenError):
    pass


class TransportError(GraphGenError):
    pass


class DeadlockError(GraphGenError):
    pass


class PhaseOrderError(GraphGenError):
    pass


class OwnershipError(GraphGenError):
    pass


class RelabelError(GraphGenError):
    pass


class ShuffleError(GraphGenError):
    pass


class CsrError(GraphGenError):
    pass


class IncompleteWorkdirError(GraphGenError):
    pass


class PipelineError(GraphGenError):
    """First fatal error of a cluster run, tagged with where it happened."""

    def __init__(self, message: str, phase: Optional[str] = None, node: Optional[int] = None):
        super().__init__(message)
        self.phase = phase
        self.node = node

    def __str__(self) -> str:
        where = f"phase '{self.phase}'" if self.phase else "unknown phase"
        if self.node is not None:
            where += f" on node {self.node}"
        return f"{where}: {self.args[0]}"


class ConservationError(PipelineError):
    """Edges were lost or duplicated between phases."""


# --- Partition Types ---
class Range(NamedTuple):
    lo: int  # inclusive
    hi: int  # exclusive

    @property
    def width(self) -> int:
        return self.hi - self.lo

    def holds(self, v: int) -> bool:
        return self.lo <= v < self.hi


class ChunkDescriptor(NamedTuple):
    index: int
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length


def is_power_of_two(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def range_partition(n: int, k: int) -> List[Range]:
    """Split [0, n) into k contiguous half-open ranges of width n/k."""
    if k <= 0 or k > n:
        raise ValueError(f"range_partition needs 1 <= k <= n, got n={n}, k={k}")
    if n % k:
        raise ValueError(f"range_partition needs k to divide n, got n={n}, k={k}")
    w = n // k
    return [Range(i * w, (i + 1) * w) for i in range(k)]


def chunk_partition(length: int, csz: int) -> List[ChunkDescriptor]:
    """Tile a collection of `length` elements into chunks of `csz`; the last may be short."""
    if csz <= 0:
        raise ValueError(f"chunk size must be positive, got {csz}")
    if length < 0:
        raise ValueError(f"collection length must be non-negative, got {length}")
    return [ChunkDescriptor(i, off, min(csz, length - off))
            for i, off in enumerate(range(0, length, csz))]


def owner_of(v: int, cfg) -> int:
    """Node whose range partition holds vertex v (and therefore its out-edges)."""
    if not 0 <= v < cfg.n:
        raise ValueError(f"vertex {v} outside [0, {cfg.n})")
    return v // cfg.bucket


def owners(src: np.ndarray, bucket: int) -> np.ndarray:
    return (np.asarray(src, dtype=VERTEX_DTYPE) // np.uint64(bucket)).astype(np.int64)


def make_edges(pairs) -> np.ndarray:
    """Build an edge record array from an iterable of (src, des) pairs."""
    pairs = list(pairs)
    if not pairs:
        return np.empty(0, dtype=EDGE_DTYPE)
    return np.array([(int(s), int(d)) for s, d in pairs], dtype=EDGE_DTYPE)


def canonical_edges(edges: np.ndarray) -> np.ndarray:
    """Edges sorted by (src, des); two multisets are equal iff their canonical forms are."""
    if len(edges) == 0:
        return np.empty(0, dtype=EDGE_DTYPE)
    order = np.lexsort((edges['des'], edges['src']))
    return np.ascontiguousarray(edges[order])
