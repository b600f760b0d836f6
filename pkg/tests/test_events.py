import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cordgt.events import (DataError, Event, InteractionHistory, from_arrays, ingest, load_dataset,
                           load_store, read_jodie_csv, save_store, write_jodie_csv)

from conftest import random_store


def brute_neighbors(src, dst, ts, u, t):
    out = []
    for i, (a, b, s) in enumerate(zip(src, dst, ts)):
        if s < t and u in (a, b):
            out.append((b if a == u else a, s, i))
    return sorted(out, key=lambda r: (r[1], r[2]))


def test_ingest_sorts_and_shifts_origin():
    ev = [Event(0, 1, 107.0, idx=0), Event(2, 0, 100.0, idx=1), Event(1, 2, 103.0, idx=2)]
    store = ingest(ev, num_nodes=3)
    assert store.ts.tolist() == [0.0, 3.0, 7.0]
    assert store.time_offset == 100.0
    for u in range(3):
        assert np.all(np.diff(store.neighbors_before(u, np.inf).ts) >= 0)


def test_neighbors_before_examples():
    store = ingest([Event(0, 1, 5.0, idx=0), Event(0, 2, 3.0, idx=1), Event(3, 4, 0.0, idx=2)], 5)
    # origin already 0 thanks to the (3, 4, 0) event
    assert [(n, t) for n, t, _ in store.neighbors_before(0, 6).as_list()] == [(2, 3.0), (1, 5.0)]
    assert [(n, t) for n, t, _ in store.neighbors_before(0, 5).as_list()] == [(2, 3.0)]
    assert len(store.neighbors_before(0, 3)) == 0            # strict inequality
    empty = from_arrays([0], [1], [0.0], num_nodes=4)
    assert len(empty.neighbors_before(3, 10.0)) == 0


def test_ties_keep_input_order():
    store = ingest([Event(0, 1, 2.0, idx=1), Event(0, 2, 2.0, idx=0)], 3)
    assert store.dst.tolist() == [2, 1]


@given(st.integers(0, 2**31 - 1), st.integers(1, 200))
def test_neighbors_before_matches_brute_force(seed, m):
    rng = np.random.default_rng(seed)
    store = random_store(rng, num_nodes=8, num_events=m, horizon=30)
    for _ in range(10):
        u = int(rng.integers(0, 8))
        t = float(rng.integers(0, 32))
        got = store.neighbors_before(u, t).as_list()
        want = brute_neighbors(store.src, store.dst, store.ts, u, t)
        assert got == want


def test_every_event_in_both_lists():
    rng = np.random.default_rng(0)
    store = random_store(rng, num_nodes=6, num_events=50)
    for i, (a, b) in enumerate(zip(store.src, store.dst)):
        for u in {int(a), int(b)}:
            assert i in store.neighbors_before(u, np.inf).event_idx


@pytest.mark.parametrize("kwargs, msg", [
    (dict(src=[0, 5], dst=[1, 1], ts=[0, 1], num_nodes=3), "out of range"),
    (dict(src=[0], dst=[1], ts=[np.nan], num_nodes=3), "NaN"),
    (dict(src=[0], dst=[1], ts=[0.0], num_nodes=3, node_feats=np.zeros((2, 4))), "rows"),
])
def test_ingest_errors(kwargs, msg):
    with pytest.raises(DataError, match=msg):
        from_arrays(**kwargs)


def test_ingest_rejects_inconsistent_edge_widths():
    with pytest.raises(DataError):
        ingest([Event(0, 1, 0.0, np.zeros(2)), Event(0, 1, 1.0, np.zeros(3))], 2)


def test_history_examples():
    h = InteractionHistory()
    assert h.lookup(0, 1) is None
    h.commit([3], [7], [4.0])
    assert h.lookup(3, 7) == (1, 4.0)
    assert h.lookup(7, 3) == h.lookup(3, 7)
    h.commit([7], [3], [6.0])
    assert h.lookup(3, 7) == (2, 6.0)
    with pytest.raises(ValueError):
        h.commit([1], [2], [5.0])  # regression below the last committed ts


def test_history_pair_with_events_at_2_and_9():
    h = InteractionHistory()
    h.commit([1, 0, 2], [2, 5, 1], [2.0, 4.0, 9.0])
    assert h.lookup(2, 1) == (2, 9.0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 150))
def test_history_prefix_matches_brute_force(seed, m):
    rng = np.random.default_rng(seed)
    store = random_store(rng, num_nodes=7, num_events=m, horizon=40)
    cut = int(rng.integers(0, m + 1))
    h = InteractionHistory()
    for lo in range(0, cut, 13):
        h.commit_range(store, lo, min(cut, lo + 13))
    want = {}
    for a, b, t in zip(store.src[:cut], store.dst[:cut], store.ts[:cut]):
        k = (min(a, b), max(a, b))
        n, last = want.get(k, (0, -np.inf))
        want[k] = (n + 1, max(last, t))
    assert len(h) == len(want) <= cut
    for (a, b), rec in want.items():
        assert h.lookup(int(a), int(b)) == (rec[0], float(rec[1]))
    cnt, last = h.lookup_many(store.src, store.dst)
    for i in range(m):
        rec = h.lookup(int(store.src[i]), int(store.dst[i]))
        assert cnt[i] == (0 if rec is None else rec[0])


def test_uncommitted_batch_is_invisible():
    store = from_arrays([0, 0, 1], [1, 1, 2], [1.0, 2.0, 3.0], 3)
    h = InteractionHistory()
    h.commit_range(store, 0, 1)
    # the second event is in flight: the ledger still reflects only the first
    assert h.lookup(0, 1) == (1, 0.0)


def test_csv_roundtrip_and_cache(tmp_path):
    rng = np.random.default_rng(5)
    store = random_store(rng, num_nodes=9, num_events=40, edge_dim=3, integer_ts=False)
    p = tmp_path / "log.csv"
    write_jodie_csv(store, p)
    back = read_jodie_csv(p, num_nodes=9)
    np.testing.assert_array_equal(back.src, store.src)
    np.testing.assert_allclose(back.ts, store.ts, atol=1e-9)
    np.testing.assert_allclose(back.edge_feats, store.edge_feats)
    cache = tmp_path / "log.bin"
    save_store(back, cache)
    again = load_dataset(cache)
    np.testing.assert_array_equal(again.ts, back.ts)
    np.testing.assert_array_equal(again.edge_feats, back.edge_feats)
    assert again.time_offset == back.time_offset


def test_csv_missing_column_is_named(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("src,dst,ts\n0,1,2.0\n")
    with pytest.raises(DataError, match="state_label"):
        read_jodie_csv(p)


def test_cache_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOTMAGIC" + b"\0" * 64)
    with pytest.raises(DataError, match="magic"):
        load_store(p)


def test_bipartite_offsets_destinations(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("user,item,ts,label\n0,0,1,0\n1,0,2,0\n1,1,3,1\n")
    store = read_jodie_csv(p, bipartite=True)
    assert store.num_nodes == 4
    assert set(store.dst.tolist()) == {2, 3}


def test_average_intensity_statistic():
    store = from_arrays([0, 1, 2, 0], [1, 2, 3, 3], [0.0, 1.0, 2.0, 4.0], 10)
    # 4 events, 4 active nodes, T = 4
    assert store.average_intensity() == pytest.approx(2 * 4 / (4 * 4))


def test_self_loop_listed_once():
    store = from_arrays([2], [2], [0.0], 3)
    assert store.degree(2) == 1
