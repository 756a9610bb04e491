# cluster.py
"""Simulated cluster: nb node threads, nc core threads per node, bounded
per-channel mailboxes between nodes, watchdog-guarded barriers."""
import random
import threading
import time
from collections import defaultdict, deque
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from config import get_logger
from core import (INT_BYTES, VERTEX_DTYPE, DeadlockError, GraphGenError, PhaseOrderError,
                  PipelineError, TransportError)
from emstore import GLOBAL_IO, IoCounters, MemoryAccountant
from models_pydantic import ClusterConfig, PhaseRecord

log = get_logger('cluster')


class MessageKind(str, Enum):
    SHUFFLE_BLOCK = 'shuffle-block'
    EDGE_PACKET = 'edge-packet'
    PERMUTE_REQUEST = 'permute-request'
    PERMUTE_RANGE = 'permute-range'
    END_OF_STREAM = 'end-of-stream'


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    source: int
    payload: bytes = b''
    tag: int = 0
    # END_OF_STREAM travels on the channel of the stream it closes
    stream: Optional[MessageKind] = None

    @property
    def channel(self) -> MessageKind:
        return self.stream if self.stream is not None else self.kind


def end_of_stream(source: int, stream: MessageKind) -> Message:
    return Message(MessageKind.END_OF_STREAM, source, stream=stream)


# --- Transport ---
class Mailbox:
    """Receive side of one node: a bounded FIFO per (sender, channel)."""

    def __init__(self, owner: int, capacity: int):
        self.owner = owner
        self.capacity = capacity
        self.closed = False
        self._cond = threading.Condition()
        self._channels: Dict[tuple, deque] = defaultdict(deque)

    def _wait(self, predicate: Callable[[], bool], timeout: float, what: str) -> None:
        deadline = time.monotonic() + timeout
        while not predicate():
            if self.closed:
                raise TransportError(f"Mailbox of node {self.owner} closed while waiting to {what}")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DeadlockError(f"Node {self.owner}: watchdog expired after {timeout:.1f}s waiting to {what}")
            self._cond.wait(remaining)

    def put(self, msg: Message, timeout: float) -> None:
        key = (msg.source, msg.channel)
        with self._cond:
            if self.closed:
                raise TransportError(f"Node {self.owner} has terminated; cannot deliver {msg.kind.value}")
            chan = self._channels[key]
            self._wait(lambda: len(chan) < self.capacity, timeout,
                       f"deliver {msg.kind.value} from node {msg.source}")
            chan.append(msg)
            self._cond.notify_all()

    def get(self, source: int, channel: MessageKind, timeout: float) -> Message:
        with self._cond:
            chan = self._channels[(source, channel)]
            self._wait(lambda: len(chan) > 0, timeout, f"receive {channel.value} from node {source}")
            msg = chan.popleft()
            self._cond.notify_all()
            return msg

    def get_any(self, channel: MessageKind, timeout: float) -> Message:
        def ready():
            return any(chan and key[1] == channel for key, chan in self._channels.items())

        with self._cond:
            self._wait(ready, timeout, f"receive {channel.value}")
            key = min(k for k, chan in self._channels.items() if chan and k[1] == channel)
            msg = self._channels[key].popleft()
            self._cond.notify_all()
            return msg

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class Transport:
    """Reliable point-to-point delivery, FIFO per (sender, receiver, channel).

    Optional jitter delays each send by a random 0..jitter_ms milliseconds.
    """

    def __init__(self, nodes: int, capacity: int = 2, timeout: float = 60.0,
                 jitter_ms: float = 0.0, jitter_seed: Optional[int] = None):
        if capacity < 2:
            raise ValueError(f"Channel capacity must be at least 2, got {capacity}")
        self.nodes = nodes
        self.timeout = timeout
        self.jitter = jitter_ms / 1000.0
        self._boxes = [Mailbox(i, capacity) for i in range(nodes)]
        self._rand = random.Random(jitter_seed)
        self._rand_lock = threading.Lock()
        self._sent = [0] * nodes
        self._sent_lock = threading.Lock()

    def _delay(self) -> None:
        if self.jitter > 0:
            with self._rand_lock:
                pause = self._rand.uniform(0.0, self.jitter)
            time.sleep(pause)

    def send(self, src: int, dst: int, msg: Message) -> None:
        if not 0 <= dst < self.nodes:
            raise TransportError(f"Node {src}: no such destination node {dst}")
        self._delay()
        self._boxes[dst].put(msg, self.timeout)
        with self._sent_lock:
            self._sent[src] += 1

    def recv(self, dst: int, src: int, channel: MessageKind) -> Message:
        return self._boxes[dst].get(src, channel, self.timeout)

    def recv_any(self, dst: int, channel: MessageKind) -> Message:
        return self._boxes[dst].get_any(channel, self.timeout)

    def messages_sent(self, src: int) -> int:
        with self._sent_lock:
            return self._sent[src]

    def close(self, node: Optional[int] = None) -> None:
        for box in (self._boxes if node is None else [self._boxes[node]]):
            box.close()


# --- Synchronization ---
class Barrier:
    """threading.Barrier whose timeout or abort surfaces as DeadlockError."""

    def __init__(self, parties: int, timeout: float, name: str):
        self.name = name
        self.timeout = timeout
        self._barrier = threading.Barrier(parties)

    def wait(self) -> None:
        try:
            self._barrier.wait(self.timeout)
        except threading.BrokenBarrierError as e:
            raise DeadlockError(f"Barrier '{self.name}' broken or timed out after {self.timeout:.1f}s") from e

    def abort(self) -> None:
        self._barrier.abort()


class AtomicArray:
    """Node-shared integer array with locked fetch-and-add."""

    def __init__(self, length: int, dtype=VERTEX_DTYPE):
        self.values = np.zeros(length, dtype=dtype)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.values)

    def fetch_add(self, i: int, delta: int) -> int:
        with self._lock:
            old = int(self.values[i])
            self.values[i] = old + delta
            return old

    def add_many(self, idx: np.ndarray, deltas: np.ndarray) -> None:
        with self._lock:
            np.add.at(self.values, np.asarray(idx, dtype=np.int64), np.asarray(deltas, dtype=self.values.dtype))


def _run_concurrently(fns: List[Callable[[], Any]], name: str,
                      on_failure: Optional[Callable[[], None]] = None) -> List[Any]:
    """Run callables on their own threads; on the first failure call on_failure and raise it."""
    pool = ThreadPoolExecutor(max_workers=len(fns), thread_name_prefix=name)
    futures = [pool.submit(fn) for fn in fns]
    done, _ = wait(futures, return_when=FIRST_EXCEPTION)
    failed = [f for f in futures if f in done and f.exception() is not None]
    if failed:
        if on_failure is not None:
            on_failure()
        pool.shutdown(wait=False)
        raise failed[0].exception()
    pool.shutdown(wait=True)
    return [f.result() for f in futures]


# --- Node Context ---
class NodeCtx:
    """Everything one node of the simulated cluster can see."""

    def __init__(self, bid: int, cfg: ClusterConfig, transport: Transport, world: Barrier,
                 run_io: Optional[IoCounters] = None):
        self.bid = bid
        self.cfg = cfg
        self.nb = cfg.nodes
        self.nc = cfg.cores
        self.transport = transport
        self.world = world
        self.core_barrier = Barrier(cfg.cores, cfg.watchdog, f"node{bid}-cores")
        self.workdir = Path(cfg.workdir)
        self.io = IoCounters(parent=run_io if run_io is not None else GLOBAL_IO, name=f"node{bid}")
        self.core_io = [IoCounters(parent=self.io, name=f"node{bid}-core{t}") for t in range(cfg.cores)]
        self.memory = [MemoryAccountant(cfg.mem_per_core, cfg.block_bytes, f"node{bid}-core{t}")
                       for t in range(cfg.cores)]
        self.shared: Dict[str, Any] = {}
        self.pv: Optional[np.ndarray] = None
        self.phase = 'init'
        self.records: List[PhaseRecord] = []

    @property
    def lo(self) -> int:
        return self.bid * self.cfg.bucket

    @property
    def hi(self) -> int:
        return (self.bid + 1) * self.cfg.bucket

    @property
    def node_dir(self) -> Path:
        return self.workdir / f"n{self.bid}"

    def core_dir(self, tid: int) -> Path:
        return self.node_dir / f"c{tid}"

    def send(self, dst: int, msg: Message) -> None:
        self.transport.send(self.bid, dst, msg)

    def recv(self, src: int, channel: MessageKind) -> Message:
        return self.transport.recv(self.bid, src, channel)

    def recv_any(self, channel: MessageKind) -> Message:
        return self.transport.recv_any(self.bid, channel)

    def world_barrier(self) -> None:
        self.world.wait()

    def run_cores(self, fn: Callable[..., Any], *args) -> List[Any]:
        """Run fn(tid, *args) on every core of this node and return per-core results."""
        if self.nc == 1:
            return [fn(0, *args)]
        return _run_concurrently([lambda t=t: fn(t, *args) for t in range(self.nc)],
                                 f"n{self.bid}-core", self.core_barrier.abort)

    def run_workers(self, *fns: Callable[[], Any]) -> List[Any]:
        """Run node-level workers (sender/receiver pairs) concurrently."""
        return _run_concurrently(list(fns), f"n{self.bid}-worker")


# --- Permutation Server ---
class PermuteServer:
    """Answers permute-range requests with this node's slice of the permutation."""

    def __init__(self, ctx: NodeCtx):
        self.ctx = ctx
        self._thread = threading.Thread(target=self._serve, name=f"permute-server-{ctx.bid}", daemon=True)

    def start(self) -> 'PermuteServer':
        self._thread.start()
        return self

    def _serve(self) -> None:
        ctx = self.ctx
        while True:
            try:
                msg = ctx.recv_any(MessageKind.PERMUTE_REQUEST)
            except GraphGenError as e:
                log.debug(f"Node {ctx.bid}: permute server exiting: {e}")
                return
            if msg.kind is MessageKind.END_OF_STREAM:
                return
            if ctx.pv is None:
                reply = Message(MessageKind.PERMUTE_RANGE, ctx.bid, tag=-1)
            else:
                reply = Message(MessageKind.PERMUTE_RANGE, ctx.bid, ctx.pv.tobytes())
            try:
                ctx.send(msg.source, reply)
            except GraphGenError as e:
                log.debug(f"Node {ctx.bid}: permute server could not reply to node {msg.source}: {e}")
                return

    def stop(self) -> None:
        if self._thread.is_alive():
            try:
                self.ctx.send(self.ctx.bid, end_of_stream(self.ctx.bid, MessageKind.PERMUTE_REQUEST))
            except GraphGenError:
                pass
            self._thread.join(self.ctx.cfg.watchdog)


def get_permute_range(ctx: NodeCtx, s: int) -> np.ndarray:
    """Permutation slice owned by node s; local requests bypass the transport."""
    if ctx.pv is None:
        raise PhaseOrderError(f"Node {ctx.bid}: permutation requested before the shuffle finished")
    if s == ctx.bid:
        return ctx.pv.copy()
    ctx.send(s, Message(MessageKind.PERMUTE_REQUEST, ctx.bid))
    reply = ctx.recv(s, MessageKind.PERMUTE_RANGE)
    if reply.tag < 0:
        raise PhaseOrderError(f"Node {s} has no permutation yet; shuffle must complete before relabeling")
    if len(reply.payload) != ctx.cfg.bucket * INT_BYTES:
        raise TransportError(
            f"Permute range from node {s} carries {len(reply.payload)} bytes, expected {ctx.cfg.bucket * INT_BYTES}")
    return np.frombuffer(reply.payload, dtype=VERTEX_DTYPE).copy()


# --- Cluster Driver ---
def run_cluster(cfg: ClusterConfig, program: Callable[[NodeCtx], Any],
                transport: Optional[Transport] = None, run_io: Optional[IoCounters] = None) -> List[Any]:
    """Run program(ctx) on nb node threads and return the per-node results.

    The first failure aborts every barrier and mailbox and is re-raised as
    PipelineError tagged with its phase and node.
    """
    transport = transport or Transport(cfg.nodes, cfg.channel_capacity, cfg.watchdog, cfg.jitter_ms, cfg.seed)
    world = Barrier(cfg.nodes, cfg.watchdog, 'world')
    ctxs = [NodeCtx(b, cfg, transport, world, run_io) for b in range(cfg.nodes)]
    errors: List[tuple] = []
    errors_lock = threading.Lock()

    def abort_all():
        world.abort()
        for c in ctxs:
            c.core_barrier.abort()
        transport.close()

    def node_main(ctx: NodeCtx):
        try:
            return program(ctx)
        except BaseException as e:
            with errors_lock:
                errors.append((ctx, e))
                first = len(errors) == 1
            if first:
                log.error(f"Node {ctx.bid} failed in phase '{ctx.phase}': {e}", exc_info=not isinstance(e, GraphGenError))
                abort_all()
            raise

    if cfg.nodes == 1:
        try:
            return [node_main(ctxs[0])]
        except BaseException:
            pass
    else:
        with ThreadPoolExecutor(max_workers=cfg.nodes, thread_name_prefix='node') as pool:
            futures = [pool.submit(node_main, c) for c in ctxs]
            wait(futures)
        if not errors:
            return [f.result() for f in futures]

    ctx, err = errors[0]
    if isinstance(err, PipelineError):
        raise err
    raise PipelineError(f"{type(err).__name__}: {err}", phase=ctx.phase, node=ctx.bid) from err
