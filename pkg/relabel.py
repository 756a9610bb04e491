# relabel.py
"""Relabel edge endpoints through the distributed permutation with a
sort-then-sweep pass per field."""
from typing import Dict, List

import numpy as np

from cluster import NodeCtx, get_permute_range
from config import get_logger
from core import SORT_KEYS, ChunkDescriptor, RelabelError, SortednessError
from emstore import ExtEdgeList, MemoryAccountant, require_sorted, sort_chunk
from models_pydantic import IoStats

log = get_logger('relabel')

# key under which core 0 publishes the current permutation slice to its siblings
SHARED_SLICE = 'pv_s'


def label_chunk(id: int, pid: int, elc: np.ndarray, elci: int, field: str) -> int:
    """Overwrite the run of `id` starting at elci with pid; return the index past the run.

    elc must be sorted on `field` from elci onward. Returns elci unchanged when
    elc[elci] is above id or elci is at the end. A key below id, or a run that
    is not followed by a larger key, raises SortednessError.
    """
    keys = elc[field]
    if elci >= len(keys) or keys[elci] > id:
        return elci
    if keys[elci] < id:
        raise SortednessError(f"Key {int(keys[elci])} at {elci} is below the id being labelled, {id}")
    end = elci + int(np.searchsorted(keys[elci:], np.uint64(id), side='right'))
    if not np.all(keys[elci:end] == id) or (end < len(keys) and keys[end] <= id):
        raise SortednessError(f"Keys from {elci} are not sorted on {field} around id {id}")
    keys[elci:end] = pid
    return end


class ChunkCursor:
    """One-block window sweeping a field-sorted chunk in ascending id order.

    Reads and writes go through separate handles so both stay sequential.
    """

    def __init__(self, store: ExtEdgeList, chunk: ChunkDescriptor, field: str,
                 memory: MemoryAccountant = None):
        self.store = store
        self.chunk = chunk
        self.field = field
        self.memory = memory
        if memory is not None:
            memory.allocate(store.block_bytes)
        self._reader = store.open_reader()
        self._writer = store.open_writer()
        self._next = chunk.offset
        self.block = None
        self.block_offset = chunk.offset
        self.pos = 0
        self._load()

    def _load(self) -> None:
        end = self.chunk.end
        if self._next >= end:
            self.block = None
            return
        k = min(self.store.block_edges, end - self._next)
        self.block = self.store.read_edges(self._reader, self._next, k)
        self.block_offset = self._next
        self._next += k
        self.pos = 0

    def label(self, id: int, pid: int) -> None:
        while self.block is not None:
            keys = self.block[self.field]
            if keys[self.pos] < id:
                raise SortednessError(
                    f"Chunk {self.chunk.index} of '{self.store.path.name}' is not sorted on {self.field}: "
                    f"found {int(keys[self.pos])} while labelling {id}")
            self.pos = label_chunk(id, pid, self.block, self.pos, self.field)
            if self.pos < len(self.block):
                return
            self.store.write_edges(self._writer, self.block_offset, self.block)
            self._load()

    @property
    def finished(self) -> bool:
        return self.block is None

    def close(self) -> None:
        self._reader.close()
        self._writer.close()
        self.store.sortedness.pop(self.chunk.index, None)
        if self.memory is not None:
            self.memory.release(self.store.block_bytes)
        if self.block is not None:
            bad = int(self.block[self.field][self.pos])
            raise RelabelError(
                f"Chunk {self.chunk.index} of '{self.store.path.name}' still holds {self.field} id {bad} "
                f"after sweeping every vertex id")


def label_edges(ctx: NodeCtx, tid: int, field: str, source: ExtEdgeList, target: ExtEdgeList) -> Dict[str, IoStats]:
    """Rewrite `field` of every edge through the permutation.

    Phase 1 sorts each chunk of `source` on field into `target` (in place when
    they are the same store). Phase 2 sweeps the ids of every node's range in
    lockstep with the other cores of this node.
    """
    if field not in SORT_KEYS:
        raise ValueError(f"Field must be one of {SORT_KEYS}, got '{field}'")
    counters = ctx.core_io[tid]
    memory = ctx.memory[tid]
    cfg = ctx.cfg

    before = counters.snapshot()
    for chunk in source.chunks():
        sort_chunk(source, chunk, field, out=None if target is source else target,
                   memory=memory, mem_limit=cfg.mem_per_core)
    sorted_io = counters.snapshot()
    require_sorted(target, field)

    cursors: List[ChunkCursor] = [ChunkCursor(target, c, field, memory) for c in target.chunks()]
    try:
        ident = 0
        for s in range(ctx.nb):
            if tid == 0:
                ctx.shared[SHARED_SLICE] = get_permute_range(ctx, s)
            ctx.core_barrier.wait()
            pv_s = ctx.shared[SHARED_SLICE]
            for pid in pv_s.tolist():
                for cur in cursors:
                    if not cur.finished:
                        cur.label(ident, pid)
                ident += 1
            ctx.core_barrier.wait()
    finally:
        errors = []
        for cur in cursors:
            try:
                cur.close()
            except RelabelError as e:
                errors.append(e)
    if errors:
        raise errors[0]
    swept_io = counters.snapshot()
    log.debug(f"Node {ctx.bid} core {tid}: relabelled {field} of {target.count} edges "
              f"in {len(cursors)} chunks")
    return {'sort': sorted_io - before, 'sweep': swept_io - sorted_io}
