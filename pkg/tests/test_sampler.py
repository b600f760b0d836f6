import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from cordgt.events import from_arrays
from cordgt.sampler import context_size, sample_contextual, sample_many

from conftest import random_store


def test_context_size():
    assert context_size((20, 1)) == 41
    assert context_size((2, 1)) == 5
    assert context_size((3,)) == 4


def test_isolated_root_is_all_padding():
    store = from_arrays([0], [1], [0.0], 4)
    ctx = sample_contextual(store, 3, 5.0, (2, 1), rng=0)
    assert ctx.size == 5
    assert not ctx.is_pad[0] and ctx.node[0] == 3 and ctx.hop[0] == 0
    assert ctx.is_pad[1:].all() and (ctx.node[1:] == -1).all()


def test_single_candidate_sampled_with_replacement():
    store = from_arrays([0, 5], [1, 6], [3.0, 0.0], 7)
    ctx = sample_contextual(store, 0, 4.0, (2,), rng=1)
    assert ctx.node[1:].tolist() == [1, 1]
    assert ctx.ts[1:].tolist() == [3.0, 3.0]


def test_recent_strategy():
    store = from_arrays([0, 0, 0], [1, 2, 3], [1.0, 2.0, 9.0], 4)
    # origin shift keeps 1 -> 0, 2 -> 1, 9 -> 8
    ctx = sample_contextual(store, 0, 100.0, (2,), strategy="recent")
    assert set(ctx.ts[1:].tolist()) == {8.0, 1.0}
    short = sample_contextual(store, 0, 100.0, (5,), strategy="recent")
    assert short.is_pad.sum() == 2


def test_layout_and_parents():
    rng = np.random.default_rng(3)
    store = random_store(rng, num_nodes=10, num_events=200)
    ctx = sample_contextual(store, 2, 99.0, (3, 2), rng=7)
    assert ctx.size == context_size((3, 2))
    assert ctx.hop.tolist() == [0] + [1] * 3 + [2] * 6
    assert ctx.parent.tolist() == [0, 0, 0, 0, 1, 1, 2, 2, 3, 3]
    json.dumps(ctx.to_json())


def test_determinism():
    rng = np.random.default_rng(4)
    store = random_store(rng, num_nodes=10, num_events=200)
    a = sample_contextual(store, 1, 80.0, (5, 2), rng=11)
    b = sample_contextual(store, 1, 80.0, (5, 2), rng=11)
    for f in ("node", "ts", "hop", "parent", "is_pad"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


@given(st.integers(0, 2**31 - 1))
def test_tokens_are_real_earlier_events(seed):
    rng = np.random.default_rng(seed)
    store = random_store(rng, num_nodes=9, num_events=120, edge_dim=2)
    root = int(rng.integers(0, 9))
    t = float(rng.uniform(1, 110))
    ctx = sample_contextual(store, root, t, (4, 2), rng=seed)
    events = {(min(a, b), max(a, b), s) for a, b, s in zip(store.src, store.dst, store.ts)}
    for i in range(1, ctx.size):
        p = ctx.parent[i]
        assert ctx.hop[i] == ctx.hop[p] + 1
        if ctx.is_pad[i]:
            assert np.all(ctx.edge_feat[i] == 0)
            continue
        assert not ctx.is_pad[p]
        assert ctx.ts[i] < ctx.ts[p] and ctx.ts[i] < t
        a, b = ctx.node[i], ctx.node[p]
        assert (min(a, b), max(a, b), ctx.ts[i]) in events
    # padding only where the parent had nothing earlier (or was padding)
    for i in range(1, ctx.size):
        p = ctx.parent[i]
        if ctx.is_pad[i] and not ctx.is_pad[p]:
            assert len(store.neighbors_before(int(ctx.node[p]), ctx.ts[p])) == 0


def test_uniform_choice_frequencies():
    store = from_arrays([0, 0, 0, 0], [1, 2, 3, 4], [1.0, 2.0, 3.0, 4.0], 5)
    gen = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(10_000):
        ctx = sample_contextual(store, 0, 10.0, (1,), rng=gen)
        counts[ctx.node[1]] += 1
    freq = counts[1:] / counts.sum()
    assert np.all(np.abs(freq - 0.25) <= 0.02)


def test_batched_sampling_matches_layout():
    rng = np.random.default_rng(9)
    store = random_store(rng, num_nodes=10, num_events=150)
    sets = sample_many(store, [1, 2, 3], [50.0, 60.0, 70.0], (4, 1), rng=5)
    assert [c.root for c in sets] == [1, 2, 3]
    assert all(c.size == 9 for c in sets)
