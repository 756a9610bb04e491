# shuffle.py
"""Distributed random permutation of [0, n): local Fisher-Yates shuffles
alternating with an all-to-all exchange of sub-blocks."""
from typing import List

import numpy as np

from cluster import Message, MessageKind, NodeCtx
from config import get_logger
from core import INT_BYTES, VERTEX_DTYPE, ShuffleError
from emstore import MemoryAccountant
from rmat import SHUFFLE_STREAM, RngStream

log = get_logger('shuffle')


def shuffle_rounds(n: int, nb: int) -> int:
    """ceil(log2 n / log2 nb) exchange rounds; one local shuffle when nb == 1."""
    if nb <= 1:
        return 1
    scale = n.bit_length() - 1
    per_round = nb.bit_length() - 1
    return max(1, -(-scale // per_round))


def local_shuffle(buf: np.ndarray, rng: RngStream) -> None:
    """Uniform in-place permutation (Fisher-Yates) driven by rng."""
    rng.generator.shuffle(buf)


def round_stream(seed: int, node: int, r: int) -> RngStream:
    return RngStream(seed, node=node, core=0, purpose=SHUFFLE_STREAM, round=r)


def _send_blocks(ctx: NodeCtx, sbuf: np.ndarray, sub: int, r: int) -> None:
    for dst in range(ctx.nb):
        if dst == ctx.bid:
            continue
        ctx.send(dst, Message(MessageKind.SHUFFLE_BLOCK, ctx.bid, sbuf[dst * sub:(dst + 1) * sub].tobytes(), tag=r))


def _recv_blocks(ctx: NodeCtx, rbuf: np.ndarray, sub: int, r: int) -> None:
    for src in range(ctx.nb):
        if src == ctx.bid:
            continue
        msg = ctx.recv(src, MessageKind.SHUFFLE_BLOCK)
        if msg.tag != r:
            raise ShuffleError(f"Node {ctx.bid}: expected round {r} block from node {src}, got round {msg.tag}")
        if len(msg.payload) != sub * INT_BYTES:
            raise ShuffleError(
                f"Node {ctx.bid}: sub-block from node {src} has {len(msg.payload)} bytes, expected {sub * INT_BYTES}")
        rbuf[src * sub:(src + 1) * sub] = np.frombuffer(msg.payload, dtype=VERTEX_DTYPE)


def distributed_shuffle(ctx: NodeCtx, seed: int, memory: MemoryAccountant = None) -> np.ndarray:
    """This node's B-element slice of a uniform permutation of [0, n).

    Collective: every node must call it. Ends with a world barrier.
    """
    cfg = ctx.cfg
    B, nb, bid = cfg.bucket, cfg.nodes, ctx.bid
    sub = cfg.shuffle_sub_block
    rounds = shuffle_rounds(cfg.n, nb)
    buf_bytes = B * INT_BYTES
    if memory is not None:
        memory.allocate(2 * buf_bytes)

    sbuf = np.arange(bid * B, (bid + 1) * B, dtype=VERTEX_DTYPE)
    for r in range(rounds):
        local_shuffle(sbuf, round_stream(seed, bid, r))
        if nb == 1:
            continue
        rbuf = np.empty_like(sbuf)
        ctx.run_workers(lambda: _send_blocks(ctx, sbuf, sub, r), lambda: _recv_blocks(ctx, rbuf, sub, r))
        rbuf[bid * sub:(bid + 1) * sub] = sbuf[bid * sub:(bid + 1) * sub]
        sbuf = rbuf
        log.debug(f"Node {bid}: shuffle round {r + 1}/{rounds} exchanged")

    if memory is not None:
        memory.release(2 * buf_bytes)
    ctx.world_barrier()
    return sbuf


def replay_shuffle(n: int, nb: int, seed: int) -> List[np.ndarray]:
    """Single-process replay of distributed_shuffle: the per-node slices it produces."""
    B = n // nb
    sub = B // nb
    sbufs = [np.arange(i * B, (i + 1) * B, dtype=VERTEX_DTYPE) for i in range(nb)]
    for r in range(shuffle_rounds(n, nb)):
        for i in range(nb):
            local_shuffle(sbufs[i], round_stream(seed, i, r))
        if nb == 1:
            continue
        rbufs = [np.empty(B, dtype=VERTEX_DTYPE) for _ in range(nb)]
        for i in range(nb):
            for j in range(nb):
                rbufs[i][j * sub:(j + 1) * sub] = sbufs[j][i * sub:(i + 1) * sub]
        sbufs = rbufs
    return sbufs
