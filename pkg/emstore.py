# emstore.py
"""Block-granular external-memory edge storage.

Every store is one flat file of 16-byte edge records. All disk traffic goes
through BlockHandle, which charges each access to an IoCounters chain as
sequential or random block I/O.
"""
import heapq
import threading
from contextlib import contextmanager
from operator import itemgetter
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np

from config import get_logger
from core import (EDGE_BYTES, EDGE_DTYPE, SORT_KEYS, ChunkDescriptor, ConfigError,
                  MemoryBudgetError, SortednessError, StorageError, chunk_partition)
from models_pydantic import IO_FIELDS, IoStats

log = get_logger('emstore')


# --- I/O Accounting ---
class IoCounters:
    """Live block counters. Updates propagate up the parent chain."""

    def __init__(self, parent: Optional['IoCounters'] = None, name: str = ''):
        self.parent = parent
        self.name = name
        self._lock = threading.Lock()
        self._values = dict.fromkeys(IO_FIELDS, 0)

    def record(self, field: str, blocks: int = 1) -> None:
        if blocks <= 0:
            return
        counters = self
        while counters is not None:
            with counters._lock:
                counters._values[field] += blocks
            counters = counters.parent

    def snapshot(self) -> IoStats:
        with self._lock:
            return IoStats(**self._values)


GLOBAL_IO = IoCounters(name='global')


def io_counters(target=None) -> IoStats:
    """Snapshot the counters of a store, a counter node, or the whole process."""
    if target is None:
        return GLOBAL_IO.snapshot()
    if isinstance(target, IoCounters):
        return target.snapshot()
    if isinstance(target, ExtEdgeList):
        return target.stats.snapshot()
    raise TypeError(f"Cannot read I/O counters from {type(target).__name__}")


class BlockHandle:
    """One open handle on a store file.

    An access is sequential iff it starts where the previous access on the
    same handle ended; the first access on a fresh handle is sequential.
    A random access charges one random block, the rest of its blocks are
    sequential.
    """

    def __init__(self, path: Path, writable: bool, block_bytes: int, counters: IoCounters):
        try:
            self._fh = open(path, 'r+b' if writable else 'rb')
        except OSError as e:
            raise StorageError(f"Cannot open '{path}': {e}") from e
        self.path = path
        self.block_bytes = block_bytes
        self.counters = counters
        self._last_end: Optional[int] = None

    def _charge(self, offset: int, nbytes: int, kind: str) -> None:
        blocks = -(-nbytes // self.block_bytes)
        if blocks == 0:
            return
        if self._last_end is not None and offset != self._last_end:
            self.counters.record(f'rand_{kind}', 1)
            self.counters.record(f'seq_{kind}', blocks - 1)
        else:
            self.counters.record(f'seq_{kind}', blocks)
        self._last_end = offset + nbytes

    def read(self, offset: int, nbytes: int) -> bytes:
        if nbytes == 0:
            return b''
        try:
            self._fh.seek(offset)
            data = self._fh.read(nbytes)
        except OSError as e:
            raise StorageError(f"Read of {nbytes} bytes at {offset} in '{self.path}' failed: {e}") from e
        if len(data) != nbytes:
            raise StorageError(f"Short read in '{self.path}': wanted {nbytes} bytes at {offset}, got {len(data)}")
        self._charge(offset, nbytes, 'reads')
        return data

    def write(self, offset: int, data: bytes) -> None:
        if not data:
            return
        try:
            self._fh.seek(offset)
            self._fh.write(data)
            self._fh.flush()
        except OSError as e:
            raise StorageError(f"Write of {len(data)} bytes at {offset} in '{self.path}' failed: {e}") from e
        self._charge(offset, len(data), 'writes')

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --- Memory Accounting ---
class MemoryAccountant:
    """Tracks bytes a core holds resident; refuses to go past limit + slack."""

    def __init__(self, limit: int, slack: int = 0, name: str = ''):
        self.limit = limit
        self.slack = slack
        self.name = name
        self.current = 0
        self.peak = 0
        self._lock = threading.Lock()

    def allocate(self, nbytes: int) -> None:
        with self._lock:
            if self.current + nbytes > self.limit + self.slack:
                raise MemoryBudgetError(
                    f"{self.name or 'core'}: allocating {nbytes} bytes on top of {self.current} "
                    f"exceeds budget {self.limit} + {self.slack}")
            self.current += nbytes
            self.peak = max(self.peak, self.current)

    def release(self, nbytes: int) -> None:
        with self._lock:
            self.current = max(0, self.current - nbytes)

    def reset_peak(self) -> None:
        with self._lock:
            self.peak = self.current

    @contextmanager
    def reserve(self, nbytes: int):
        self.allocate(nbytes)
        try:
            yield
        finally:
            self.release(nbytes)


# --- Edge Store ---
class ExtEdgeList:
    """Append-only external edge list with block-buffered writes."""

    def __init__(self, path: Union[str, Path], block_edges: int, chunk_edges: Optional[int] = None,
                 counters: Optional[IoCounters] = None, create: bool = False):
        self.path = Path(path)
        self.block_edges = block_edges
        self.block_bytes = block_edges * EDGE_BYTES
        self.chunk_edges = chunk_edges or block_edges
        self.stats = IoCounters(parent=counters if counters is not None else GLOBAL_IO, name=self.path.name)
        if create:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_bytes(b'')
            except OSError as e:
                raise StorageError(f"Cannot create store '{self.path}': {e}") from e
        elif not self.path.is_file():
            raise StorageError(f"Store not found: '{self.path}'")
        size = self.path.stat().st_size
        if size % EDGE_BYTES:
            raise StorageError(f"Store '{self.path}' holds {size} bytes, not a whole number of edges")
        self.count = size // EDGE_BYTES
        self._written = self.count
        self._buffer = np.empty(block_edges, dtype=EDGE_DTYPE)
        self._buffered = 0
        self._appender: Optional[BlockHandle] = None
        # chunk index -> key it was last sorted on
        self.sortedness: Dict[int, Optional[str]] = {}

    @classmethod
    def create(cls, path, block_edges: int, chunk_edges: Optional[int] = None,
               counters: Optional[IoCounters] = None) -> 'ExtEdgeList':
        return cls(path, block_edges, chunk_edges, counters, create=True)

    @classmethod
    def open(cls, path, block_edges: int, chunk_edges: Optional[int] = None,
             counters: Optional[IoCounters] = None) -> 'ExtEdgeList':
        return cls(path, block_edges, chunk_edges, counters, create=False)

    def __len__(self) -> int:
        return self.count

    def chunks(self) -> List[ChunkDescriptor]:
        return chunk_partition(self.count, self.chunk_edges)

    def open_reader(self) -> BlockHandle:
        self.flush()
        return BlockHandle(self.path, False, self.block_bytes, self.stats)

    def open_writer(self) -> BlockHandle:
        return BlockHandle(self.path, True, self.block_bytes, self.stats)

    # --- Appends ---
    def append(self, edge: Tuple[int, int]) -> None:
        self.sortedness.pop(self.count // self.chunk_edges, None)
        self._buffer[self._buffered] = edge
        self._buffered += 1
        self.count += 1
        if self._buffered == self.block_edges:
            self._write_buffer()

    def append_many(self, edges: np.ndarray) -> None:
        for index in range(self.count // self.chunk_edges, -(-(self.count + len(edges)) // self.chunk_edges)):
            self.sortedness.pop(index, None)
        pos = 0
        total = len(edges)
        while pos < total:
            take = min(self.block_edges - self._buffered, total - pos)
            self._buffer[self._buffered:self._buffered + take] = edges[pos:pos + take]
            self._buffered += take
            self.count += take
            pos += take
            if self._buffered == self.block_edges:
                self._write_buffer()

    def _write_buffer(self) -> None:
        if self._appender is None:
            self._appender = self.open_writer()
        self._appender.write(self._written * EDGE_BYTES, self._buffer[:self._buffered].tobytes())
        self._written += self._buffered
        self._buffered = 0

    def flush(self) -> None:
        """Write out a trailing partial block, if any."""
        if self._buffered:
            self._write_buffer()

    def close(self) -> None:
        self.flush()
        if self._appender is not None:
            self._appender.close()
            self._appender = None

    # --- Positioned access ---
    def read_edges(self, handle: BlockHandle, offset: int, length: int) -> np.ndarray:
        if offset < 0 or offset + length > self._written:
            raise StorageError(
                f"Range [{offset}, {offset + length}) outside the {self._written} stored edges of '{self.path}'")
        data = handle.read(offset * EDGE_BYTES, length * EDGE_BYTES)
        return np.frombuffer(data, dtype=EDGE_DTYPE).copy()

    def write_edges(self, handle: BlockHandle, offset: int, edges: np.ndarray) -> None:
        handle.write(offset * EDGE_BYTES, np.ascontiguousarray(edges, dtype=EDGE_DTYPE).tobytes())
        end = offset + len(edges)
        if end > self._written:
            self._written = end
            self.count = max(self.count, end)

    def read_all(self) -> np.ndarray:
        """Whole store in memory. Validation and tests only."""
        with self.open_reader() as handle:
            return self.read_edges(handle, 0, self.count)

    def scan(self) -> 'EdgeStream':
        return EdgeStream(self)


class EdgeStream:
    """Forward-only cursor over [offset, offset+length) of a store, one block at a time."""

    def __init__(self, store: ExtEdgeList, offset: int = 0, length: Optional[int] = None):
        self.store = store
        self.offset = offset
        self.length = store.count - offset if length is None else length

    def __len__(self) -> int:
        return self.length

    def blocks(self, block_edges: Optional[int] = None) -> Iterator[np.ndarray]:
        if self.length <= 0:
            return
        step = block_edges or self.store.block_edges
        with self.store.open_reader() as handle:
            pos, end = self.offset, self.offset + self.length
            while pos < end:
                k = min(step, end - pos)
                yield self.store.read_edges(handle, pos, k)
                pos += k

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        for block in self.blocks():
            yield from block.tolist()


# --- Sorting ---
def sort_chunk(store: ExtEdgeList, chunk: ChunkDescriptor, key: str,
               out: Optional[ExtEdgeList] = None, memory: Optional[MemoryAccountant] = None,
               mem_limit: Optional[int] = None) -> None:
    """Stable in-memory sort of one chunk on `key`, written back in place or into `out`."""
    if key not in SORT_KEYS:
        raise ValueError(f"Sort key must be one of {SORT_KEYS}, got '{key}'")
    nbytes = chunk.length * EDGE_BYTES
    limit = mem_limit if mem_limit is not None else (memory.limit if memory is not None else None)
    if limit is not None and nbytes > limit:
        raise ConfigError(f"Chunk {chunk.index} needs {nbytes} bytes, over the per-core memory of {limit}")
    target = out if out is not None else store
    with memory.reserve(nbytes) if memory is not None else _no_reservation():
        with store.open_reader() as reader:
            data = store.read_edges(reader, chunk.offset, chunk.length)
        data = data[np.argsort(data[key], kind='stable')]
        with target.open_writer() as writer:
            target.write_edges(writer, chunk.offset, data)
    target.sortedness[chunk.index] = key


def require_sorted(store: ExtEdgeList, key: str) -> None:
    """Raise SortednessError unless every chunk of store was last sorted on key."""
    for chunk in store.chunks():
        tag = store.sortedness.get(chunk.index)
        if tag != key:
            raise SortednessError(f"Chunk {chunk.index} of '{store.path.name}' is tagged {tag!r}, "
                                  f"expected sorted on {key}")


@contextmanager
def _no_reservation():
    yield


def _checked(stream: Iterable[Tuple[int, int]], idx: int, label: int) -> Iterator[Tuple[int, int]]:
    prev = None
    for edge in stream:
        k = edge[idx]
        if prev is not None and k < prev:
            raise SortednessError(f"Merge input {label} is not sorted: key {k} follows {prev}")
        prev = k
        yield edge


class MergedStream:
    """Stable k-way merge of sorted edge streams; ties resolve by input order."""

    def __init__(self, inputs: List, key: str):
        if key not in SORT_KEYS:
            raise ValueError(f"Merge key must be one of {SORT_KEYS}, got '{key}'")
        self.inputs = list(inputs)
        self.key = key
        self.length = sum(len(s) for s in self.inputs)

    def __len__(self) -> int:
        return self.length

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        idx = SORT_KEYS.index(self.key)
        checked = [_checked(s, idx, i) for i, s in enumerate(self.inputs)]
        return heapq.merge(*checked, key=itemgetter(idx))

    def blocks(self, block_edges: int) -> Iterator[np.ndarray]:
        batch: List[Tuple[int, int]] = []
        for edge in self:
            batch.append(edge)
            if len(batch) == block_edges:
                yield np.array(batch, dtype=EDGE_DTYPE)
                batch = []
        if batch:
            yield np.array(batch, dtype=EDGE_DTYPE)


def sorted_merge(inputs: List, key: str) -> MergedStream:
    return MergedStream(inputs, key)
