# tests/test_redistribute.py
import numpy as np
import pytest

from cluster import Message, MessageKind, end_of_stream
from conftest import random_edges
from core import EDGE_DTYPE, OwnershipError, PipelineError, RelabelError, canonical_edges, make_edges
from emstore import ExtEdgeList
from redistribute import collect_edges, redistribute


def _program(cfg, edges_by_core, mode):
    def program(ctx):
        stores = []
        for tid in range(ctx.nc):
            store = ExtEdgeList.create(ctx.core_dir(tid) / 'edges.relabel.bin', cfg.block_edges,
                                       cfg.chunk_edges, ctx.core_io[tid])
            store.append_many(edges_by_core[ctx.bid * ctx.nc + tid])
            store.close()
            stores.append(store)
        ctx.world_barrier()
        owned = redistribute(ctx, stores, mode)
        return owned.read_all()
    return program


@pytest.mark.parametrize("mode", ['sorted', 'unordered'])
def test_every_edge_reaches_its_owner(make_config, cluster, mode):
    cfg = make_config(scale=8, nodes=4, cores=2, block_edges=32, packet_bytes=16 * 24,
                      redistribute_mode=mode, csr_variant='hash')
    edges_by_core = [random_edges(cfg.n, 500, seed=i) for i in range(cfg.nodes * cfg.cores)]
    owned = cluster(cfg, _program(cfg, edges_by_core, mode))

    for b, edges in enumerate(owned):
        assert np.all(edges['src'] // cfg.bucket == b)
        if mode == 'sorted':
            assert np.all(np.diff(edges['src'].astype(np.int64)) >= 0)
    everything = np.concatenate(edges_by_core)
    assert sum(len(e) for e in owned) == len(everything)
    assert canonical_edges(np.concatenate(owned)).tolist() == canonical_edges(everything).tolist()


def test_sorted_mode_leaves_a_sorted_copy_per_core(make_config, cluster):
    cfg = make_config(scale=6, nodes=2, cores=2, block_edges=8)
    edges_by_core = [random_edges(cfg.n, 70, seed=10 + i) for i in range(4)]
    cluster(cfg, _program(cfg, edges_by_core, 'sorted'))
    copy = ExtEdgeList.open(f"{cfg.workdir}/n1/c0/edges.redistribute.bin", cfg.block_edges).read_all()
    assert np.all(np.diff(copy['src'].astype(np.int64)) >= 0)
    assert canonical_edges(copy).tolist() == canonical_edges(edges_by_core[2]).tolist()


def test_out_of_range_vertex_is_a_relabel_error(make_config, cluster):
    cfg = make_config(scale=6, nodes=2, redistribute_mode='unordered', csr_variant='hash')
    bad = make_edges([(1, 2), (3, cfg.n + 5)])
    edges_by_core = [bad, make_edges([(0, 0)])]
    with pytest.raises(PipelineError) as info:
        cluster(cfg, _program(cfg, edges_by_core, 'unordered'))
    assert isinstance(info.value.__cause__, RelabelError)


def test_collector_rejects_foreign_edges(make_config, cluster):
    cfg = make_config(scale=6, nodes=2, redistribute_mode='unordered', csr_variant='hash')

    def program(ctx):
        if ctx.bid == 0:
            stray = np.array([(0, 1)], dtype=EDGE_DTYPE)
            ctx.send(1, Message(MessageKind.EDGE_PACKET, 0, stray.tobytes()))
            ctx.send(1, end_of_stream(0, MessageKind.EDGE_PACKET))
            return None
        return collect_edges(ctx, 'unordered')

    with pytest.raises(PipelineError) as info:
        cluster(cfg, program)
    assert info.value.node == 1
    assert isinstance(info.value.__cause__, OwnershipError)
