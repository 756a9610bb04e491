# tests/test_emstore.py
import numpy as np
import pytest

from core import ConfigError, MemoryBudgetError, SortednessError, StorageError, make_edges
from emstore import (EdgeStream, ExtEdgeList, IoCounters, MemoryAccountant, io_counters, require_sorted,
                     sort_chunk, sorted_merge)
from models_pydantic import IoStats


def test_fresh_store_has_zero_counters(make_store):
    store = make_store()
    assert io_counters(store) == IoStats()
    assert store.count == 0
    assert list(store.scan()) == []


def test_scan_after_single_append(tmp_path):
    store = ExtEdgeList.create(tmp_path / 'one.bin', block_edges=4)
    store.append((3, 5))
    assert store.count == 1
    assert list(store.scan()) == [(3, 5)]


def test_appends_are_charged_as_sequential_blocks(tmp_path):
    store = ExtEdgeList.create(tmp_path / 'seq.bin', block_edges=8)
    for i in range(10 * 8 + 1):
        store.append((i, i + 1))
    store.flush()
    stats = io_counters(store)
    assert stats.seq_writes == 11
    assert stats.random == 0
    assert store.read_all()['src'].tolist() == list(range(81))


def test_reads_see_writes_while_handles_stay_open(tmp_path):
    store = ExtEdgeList.create(tmp_path / 'open.bin', block_edges=2)
    for i in range(5):
        store.append((i, i))
        assert [e[0] for e in store.scan()] == list(range(i + 1))
    writer = store.open_writer()
    store.write_edges(writer, 1, make_edges([(9, 9)]))
    assert store.read_all()['src'].tolist() == [0, 9, 2, 3, 4]
    writer.close()
    store.close()


def test_append_many_matches_single_appends(make_store):
    edges = make_edges((i, 2 * i) for i in range(23))
    store = make_store(edges, block_edges=5)
    assert store.read_all().tolist() == edges.tolist()
    assert io_counters(store).seq_writes == 5


def test_positioned_access_classification(tmp_path):
    store = ExtEdgeList.create(tmp_path / 'pos.bin', block_edges=8)
    edges = make_edges((i, i) for i in range(16))
    with store.open_writer() as handle:
        store.write_edges(handle, 0, edges)            # 2 blocks, first access
        store.write_edges(handle, 32, edges[:8])       # jumps ahead: random
        store.write_edges(handle, 40, edges[:8])       # continues: sequential
    stats = io_counters(store)
    assert (stats.seq_writes, stats.rand_writes) == (3, 1)
    assert store.count == 48

    with store.open_reader() as handle:
        store.read_edges(handle, 0, 8)
        store.read_edges(handle, 24, 24)               # 3 blocks, starts elsewhere
    stats = io_counters(store)
    assert (stats.seq_reads, stats.rand_reads) == (3, 1)


def test_counters_propagate_to_parent(tmp_path):
    parent = IoCounters()
    store = ExtEdgeList.create(tmp_path / 'p.bin', block_edges=2, counters=parent)
    store.append_many(make_edges([(1, 1)] * 4))
    store.close()
    assert io_counters(parent).seq_writes == 2


def test_reads_outside_store_fail(make_store, tmp_path):
    store = make_store(make_edges([(1, 2)]))
    with store.open_reader() as handle:
        with pytest.raises(StorageError):
            store.read_edges(handle, 0, 2)
    with pytest.raises(StorageError):
        ExtEdgeList.open(tmp_path / 'nope.bin', block_edges=4)
    broken = tmp_path / 'broken.bin'
    broken.write_bytes(b'\0' * 20)
    with pytest.raises(StorageError):
        ExtEdgeList.open(broken, block_edges=4)


def test_sort_chunk_is_stable(make_store):
    store = make_store(make_edges([(5, 1), (3, 2), (5, 0), (1, 9)]), block_edges=2, chunk_edges=4)
    chunk = store.chunks()[0]
    sort_chunk(store, chunk, 'src')
    assert store.read_all().tolist() == [(1, 9), (3, 2), (5, 1), (5, 0)]
    assert store.sortedness[0] == 'src'
    sort_chunk(store, chunk, 'des')
    assert store.read_all().tolist() == [(5, 0), (5, 1), (3, 2), (1, 9)]


def test_sort_chunk_only_touches_its_chunk(make_store):
    store = make_store(make_edges([(4, 0), (3, 0), (2, 0), (1, 0), (9, 9)]), block_edges=2, chunk_edges=2)
    sort_chunk(store, store.chunks()[1], 'src')
    assert store.read_all()['src'].tolist() == [4, 3, 1, 2, 9]


def test_require_sorted_follows_the_chunk_tags(make_store):
    store = make_store(make_edges([(3, 0), (1, 1), (2, 2)]), block_edges=2, chunk_edges=2)
    with pytest.raises(SortednessError):
        require_sorted(store, 'src')
    for chunk in store.chunks():
        sort_chunk(store, chunk, 'src')
    require_sorted(store, 'src')
    with pytest.raises(SortednessError):
        require_sorted(store, 'des')
    store.append((0, 0))
    with pytest.raises(SortednessError):
        require_sorted(store, 'src')


def test_sort_chunk_into_other_store_with_sequential_io(make_store, tmp_path):
    source = make_store(make_edges((10 - i, i) for i in range(8)), block_edges=4, chunk_edges=8)
    target = ExtEdgeList.create(tmp_path / 'sorted.bin', block_edges=4, chunk_edges=8)
    sort_chunk(source, source.chunks()[0], 'src', out=target)
    assert target.count == 8
    assert target.read_all()['src'].tolist() == list(range(3, 11))
    assert io_counters(source).seq_reads == 2
    assert io_counters(target).seq_writes == 2
    assert io_counters(source).random == 0 and io_counters(target).rand_writes == 0


def test_sort_chunk_over_memory_is_config_error(make_store):
    store = make_store(make_edges([(2, 0), (1, 0), (0, 0), (3, 0)]), block_edges=2, chunk_edges=4)
    with pytest.raises(ConfigError):
        sort_chunk(store, store.chunks()[0], 'src', memory=MemoryAccountant(32))


def test_sorted_merge_is_stable(make_store):
    a = make_store(make_edges([(1, 10), (4, 11)]))
    b = make_store(make_edges([(2, 20), (4, 21)]))
    merged = sorted_merge([EdgeStream(a), EdgeStream(b)], 'src')
    assert len(merged) == 4
    assert list(merged) == [(1, 10), (2, 20), (4, 11), (4, 21)]
    blocks = list(merged.blocks(3))
    assert [len(x) for x in blocks] == [3, 1]


def test_sorted_merge_rejects_unsorted_input(make_store):
    a = make_store(make_edges([(3, 0), (1, 0)]))
    b = make_store(make_edges([(2, 0)]))
    with pytest.raises(SortednessError):
        list(sorted_merge([EdgeStream(a), EdgeStream(b)], 'src'))


def test_edge_stream_over_sub_range(make_store):
    store = make_store(make_edges((i, 0) for i in range(10)), block_edges=3)
    stream = EdgeStream(store, offset=2, length=5)
    assert [e[0] for e in stream] == [2, 3, 4, 5, 6]
    assert [len(b) for b in stream.blocks()] == [3, 2]


def test_memory_accountant_budget_and_peak():
    mem = MemoryAccountant(100, slack=10)
    mem.allocate(60)
    with mem.reserve(50):
        assert mem.current == 110
    assert mem.current == 60
    assert mem.peak == 110
    with pytest.raises(MemoryBudgetError):
        mem.allocate(51)
    mem.release(60)
    mem.reset_peak()
    assert mem.peak == 0


def test_write_read_round_trip_of_random_records(make_store):
    rng = np.random.default_rng(5)
    pairs = list(zip(rng.integers(0, 1 << 40, 100).tolist(), rng.integers(0, 1 << 40, 100).tolist()))
    store = make_store(make_edges(pairs), block_edges=7)
    assert store.read_all().tolist() == pairs
