# rmat.py
"""R-MAT edge generation from counter-based random streams."""
from typing import Optional, Sequence, Tuple

import numpy as np

from config import get_logger
from core import EDGE_DTYPE, VERTEX_DTYPE

log = get_logger('rmat')

# Purposes keep shuffle and edge streams of the same (node, core) disjoint.
SHUFFLE_STREAM = 0
EDGE_STREAM = 1

RNG_ALGORITHM = ("numpy Philox4x64-10 bit generator, keyed by "
                 "SeedSequence(entropy=seed, spawn_key=(purpose, node, core, round)); "
                 "purpose 0 = shuffle, 1 = edges")

GRAPH500_PARAMS = (0.57, 0.19, 0.19, 0.05)


class RngStream:
    """Per-(node, core) uniform stream in [0, 1).

    Streams with different keys are independent; the same key always replays
    the same sequence regardless of how draws are batched.
    """

    def __init__(self, seed: int, node: int = 0, core: int = 0,
                 purpose: int = EDGE_STREAM, round: int = 0):
        self.seed = seed
        self.key = (purpose, node, core, round)
        sequence = np.random.SeedSequence(entropy=seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(sequence))
        self.draws = 0

    @property
    def stream_id(self) -> Tuple[int, int]:
        return self.key[1], self.key[2]

    def random(self, size=None):
        out = self.generator.random(size)
        self.draws += 1 if size is None else int(np.prod(size))
        return out


def _cumulative(p: Sequence[float]) -> np.ndarray:
    a, b, c, d = (float(x) for x in p)
    if min(a, b, c, d) < 0.0 or abs(a + b + c + d - 1.0) > 1e-9:
        raise ValueError(f"R-MAT probabilities must be non-negative and sum to 1, got {tuple(p)}")
    return np.array([a, a + b, a + b + c])


def _descend(u: np.ndarray, cum: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Turn a (k, scale) matrix of uniforms into k (src, des) pairs.

    Column j picks the quadrant at depth j; depth 0 sets the most significant bit.
    Quadrant q: src bit = q >> 1, des bit = q & 1.
    """
    scale = u.shape[1]
    quad = np.searchsorted(cum, u, side='right').astype(VERTEX_DTYPE)
    shifts = np.arange(scale - 1, -1, -1, dtype=VERTEX_DTYPE)
    src = ((quad >> np.uint64(1)) << shifts).sum(axis=1, dtype=VERTEX_DTYPE)
    des = ((quad & np.uint64(1)) << shifts).sum(axis=1, dtype=VERTEX_DTYPE)
    return src, des


def gen_rmat_edge(rng: RngStream, scale: int, p: Sequence[float] = GRAPH500_PARAMS) -> Tuple[int, int]:
    """One R-MAT edge; consumes exactly `scale` uniforms."""
    if scale < 1:
        raise ValueError(f"scale must be at least 1, got {scale}")
    src, des = _descend(rng.random((1, scale)), _cumulative(p))
    return int(src[0]), int(des[0])


def rmat_edges(count: int, rng: RngStream, scale: int, p: Sequence[float] = GRAPH500_PARAMS,
               both_orientations: bool = False, batch: int = 4096):
    """Yield edge arrays for `count` draws, `batch` draws at a time."""
    if scale < 1:
        raise ValueError(f"scale must be at least 1, got {scale}")
    cum = _cumulative(p)
    remaining = count
    while remaining > 0:
        k = min(batch, remaining)
        src, des = _descend(rng.random((k, scale)), cum)
        if both_orientations:
            edges = np.empty(2 * k, dtype=EDGE_DTYPE)
            edges['src'][0::2], edges['des'][0::2] = src, des
            edges['src'][1::2], edges['des'][1::2] = des, src
        else:
            edges = np.empty(k, dtype=EDGE_DTYPE)
            edges['src'], edges['des'] = src, des
        remaining -= k
        yield edges


def generate_edges(count: int, rng: RngStream, scale: int, p: Sequence[float] = GRAPH500_PARAMS,
                   both_orientations: bool = False) -> np.ndarray:
    """In-memory variant used by the oracle."""
    parts = list(rmat_edges(count, rng, scale, p, both_orientations))
    if not parts:
        return np.empty(0, dtype=EDGE_DTYPE)
    return np.concatenate(parts)


def generate_edgelist(store, count: int, rng: RngStream, scale: int,
                      p: Sequence[float] = GRAPH500_PARAMS, both_orientations: bool = False,
                      batch: Optional[int] = None) -> int:
    """Append `count` generated edges (twice that with both orientations) to `store`."""
    written = 0
    for edges in rmat_edges(count, rng, scale, p, both_orientations, batch or store.block_edges):
        store.append_many(edges)
        written += len(edges)
    store.flush()
    log.debug(f"Stream {rng.stream_id}: generated {written} edges at scale {scale} ({rng.draws} draws)")
    return written
