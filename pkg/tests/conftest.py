# tests/conftest.py
import numpy as np
import pytest

from cluster import run_cluster
from core import EDGE_DTYPE
from emstore import ExtEdgeList
from models_pydantic import ClusterConfig


@pytest.fixture
def make_config(tmp_path):
    """ClusterConfig factory rooted in a per-test workdir."""
    def _make(**kw):
        kw.setdefault('workdir', str(tmp_path / 'run'))
        kw.setdefault('watchdog_seconds', 30.0)
        return ClusterConfig(**kw)
    return _make


@pytest.fixture
def make_store(tmp_path):
    counter = iter(range(10 ** 6))

    def _make(edges=None, block_edges=4, chunk_edges=None, name=None):
        store = ExtEdgeList.create(tmp_path / (name or f"store{next(counter)}.bin"), block_edges, chunk_edges)
        if edges is not None and len(edges):
            store.append_many(np.asarray(edges, dtype=EDGE_DTYPE))
        store.close()
        return store
    return _make


@pytest.fixture
def cluster():
    """Run a per-node program on a fresh simulated cluster."""
    def _run(cfg, program):
        return run_cluster(cfg, program)
    return _run


def random_edges(n, count, seed=0):
    rng = np.random.default_rng(seed)
    edges = np.empty(count, dtype=EDGE_DTYPE)
    edges['src'] = rng.integers(0, n, count, dtype=np.uint64)
    edges['des'] = rng.integers(0, n, count, dtype=np.uint64)
    return edges
