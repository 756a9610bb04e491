# redistribute.py
"""Move every relabelled edge to the node owning its source vertex."""
from typing import Iterator, List

import numpy as np

from cluster import Message, MessageKind, NodeCtx, end_of_stream
from config import get_logger
from core import EDGE_BYTES, EDGE_DTYPE, OwnershipError, RelabelError, StorageError, owners
from emstore import EdgeStream, ExtEdgeList, require_sorted, sort_chunk, sorted_merge

log = get_logger('redistribute')

OWNED_FILE = 'owned.bin'


class PacketBuffer:
    """Per-destination staging buffers of packet_edges edges each."""

    def __init__(self, ctx: NodeCtx):
        self.ctx = ctx
        self.capacity = ctx.cfg.packet_edges
        self._buffers = [np.empty(self.capacity, dtype=EDGE_DTYPE) for _ in range(ctx.nb)]
        self._fill = [0] * ctx.nb
        self.sent_edges = 0
        self.sent_packets = 0

    def add(self, dst: int, edges: np.ndarray) -> None:
        pos = 0
        while pos < len(edges):
            take = min(self.capacity - self._fill[dst], len(edges) - pos)
            self._buffers[dst][self._fill[dst]:self._fill[dst] + take] = edges[pos:pos + take]
            self._fill[dst] += take
            pos += take
            if self._fill[dst] == self.capacity:
                self._send(dst)

    def _send(self, dst: int) -> None:
        k = self._fill[dst]
        if k == 0:
            return
        self.ctx.send(dst, Message(MessageKind.EDGE_PACKET, self.ctx.bid, self._buffers[dst][:k].tobytes()))
        self.sent_edges += k
        self.sent_packets += 1
        self._fill[dst] = 0

    def finish(self) -> None:
        """Flush partial packets, then close every destination's stream."""
        for dst in range(self.ctx.nb):
            self._send(dst)
        for dst in range(self.ctx.nb):
            self.ctx.send(dst, end_of_stream(self.ctx.bid, MessageKind.EDGE_PACKET))


def _local_blocks(ctx: NodeCtx, stores: List[ExtEdgeList], mode: str) -> Iterator[np.ndarray]:
    cfg = ctx.cfg
    if mode == 'unordered':
        for store in stores:
            yield from EdgeStream(store).blocks()
        return

    def sort_core(tid: int) -> ExtEdgeList:
        src = stores[tid]
        out = ExtEdgeList.create(ctx.core_dir(tid) / 'edges.redistribute.bin', cfg.block_edges,
                                 cfg.chunk_edges, ctx.core_io[tid])
        for chunk in src.chunks():
            sort_chunk(src, chunk, 'src', out=out, memory=ctx.memory[tid], mem_limit=cfg.mem_per_core)
        require_sorted(out, 'src')
        return out

    sorted_stores = ctx.run_cores(sort_core)
    streams = [EdgeStream(s, c.offset, c.length) for s in sorted_stores for c in s.chunks()]
    yield from sorted_merge(streams, 'src').blocks(cfg.block_edges)


def redistribute_edges(ctx: NodeCtx, stores: List[ExtEdgeList], mode: str) -> int:
    """Scatter this node's edges by owner. In 'sorted' mode they leave in src order."""
    if mode not in ('sorted', 'unordered'):
        raise ValueError(f"Unknown redistribute mode '{mode}'")
    n = ctx.cfg.n
    packets = PacketBuffer(ctx)
    for block in _local_blocks(ctx, stores, mode):
        if len(block) == 0:
            continue
        top = int(max(block['src'].max(), block['des'].max()))
        if top >= n:
            raise RelabelError(f"Node {ctx.bid}: relabelled edge carries vertex {top} outside [0, {n})")
        dests = owners(block['src'], ctx.cfg.bucket)
        for dst in np.unique(dests).tolist():
            packets.add(dst, block[dests == dst])
    packets.finish()
    log.debug(f"Node {ctx.bid}: sent {packets.sent_edges} edges in {packets.sent_packets} packets")
    return packets.sent_edges


def collect_edges(ctx: NodeCtx, mode: str) -> ExtEdgeList:
    """Receive owned edges until every node has closed its stream to us."""
    cfg = ctx.cfg
    owned = ExtEdgeList.create(ctx.node_dir / OWNED_FILE, cfg.block_edges, cfg.chunk_edges, ctx.io)
    runs = {}
    if mode == 'sorted':
        runs = {j: ExtEdgeList.create(ctx.node_dir / f"owned.run{j}.bin", cfg.block_edges,
                                      cfg.chunk_edges, ctx.io)
                for j in range(ctx.nb)}
    lo, hi = ctx.lo, ctx.hi
    closed = 0
    while closed < ctx.nb:
        msg = ctx.recv_any(MessageKind.EDGE_PACKET)
        if msg.kind is MessageKind.END_OF_STREAM:
            closed += 1
            continue
        if len(msg.payload) % EDGE_BYTES:
            raise StorageError(f"Node {ctx.bid}: packet from node {msg.source} is not a whole number of edges")
        edges = np.frombuffer(msg.payload, dtype=EDGE_DTYPE)
        src = edges['src']
        if len(src) and (int(src.min()) < lo or int(src.max()) >= hi):
            bad = int(src[(src < lo) | (src >= hi)][0])
            raise OwnershipError(f"Node {ctx.bid} received edge with src {bad} outside its range [{lo}, {hi})")
        (runs[msg.source] if runs else owned).append_many(edges)

    if runs:
        for run in runs.values():
            run.close()
        merged = sorted_merge([EdgeStream(runs[j]) for j in range(ctx.nb)], 'src')
        for block in merged.blocks(cfg.block_edges):
            owned.append_many(block)
        for run in runs.values():
            run.path.unlink(missing_ok=True)
    owned.close()
    log.debug(f"Node {ctx.bid}: owns {owned.count} edges")
    return owned


def redistribute(ctx: NodeCtx, stores: List[ExtEdgeList], mode: str) -> ExtEdgeList:
    """Run the collector and the scatter side of one node concurrently."""
    _, owned = ctx.run_workers(lambda: redistribute_edges(ctx, stores, mode), lambda: collect_edges(ctx, mode))
    return owned
