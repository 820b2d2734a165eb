import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvgraph import numerics as nx
from lvgraph.instruction import InstructionEncoder, pad_batch
from lvgraph.language_graph import RELATIONAL, SPECIALIZED, LanguageGraph

S = 4


def setup(seed=0, seqs=([3, 4, 5, 6],)):
    store = nx.ParameterStore(seed)
    enc = InstructionEncoder(store, 12, 3, S // 2).encode(*pad_batch(list(seqs)))
    h = nx.Tensor(np.random.default_rng(seed).normal(size=(len(seqs), S)))
    return store, LanguageGraph(store, S), enc, h


def test_single_token_every_context_is_u1():
    store, lg, enc, h = setup(seqs=([7],))
    lc = lg(h, enc)
    u1 = enc.hidden.data[0, 0]
    for k in SPECIALIZED + RELATIONAL + ("g",):
        assert np.allclose(getattr(lc, k).data[0], u1, atol=1e-15), k
    for w in lc.weights.values():
        assert w.data.tolist() == [[1.0]]


def test_tied_heads_give_identical_contexts():
    store, lg, enc, h = setup(seed=2)
    W = store.get("lang.s.W", (S, S)).data
    for head in ("o", "d"):
        store.get(f"lang.{head}.W", (S, S)).data[:] = W
    spec, _ = lg.specialized_contexts(h, enc)
    assert np.array_equal(spec["s"].data, spec["o"].data)
    assert np.array_equal(spec["s"].data, spec["d"].data)


def test_heads_differ_at_random_init():
    _, lg, enc, h = setup(seed=1)
    _, w = lg.specialized_contexts(h, enc)
    for a, b in (("s", "o"), ("s", "d"), ("o", "d")):
        assert 0.5 * np.abs(w[a].data - w[b].data).sum() > 0


def test_zero_specialized_gives_uniform_relational():
    _, lg, enc, _ = setup(seqs=([3, 4, 5], [6, 7]))
    zero = {k: nx.Tensor(np.zeros((2, S))) for k in SPECIALIZED}
    _, w = lg.relational_contexts(zero, enc)
    for pair in RELATIONAL:
        assert np.allclose(w[pair].data[0], 1 / 3, atol=1e-15)
        assert np.allclose(w[pair].data[1], [0.5, 0.5, 0.0], atol=1e-15)


def test_pair_order_matters():
    store, lg, enc, h = setup(seed=4)
    spec, _ = lg.specialized_contexts(h, enc)
    a, _ = lg.relational_contexts(spec, enc)
    swapped = dict(spec, s=spec["d"], d=spec["s"])
    b, _ = lg.relational_contexts(swapped, enc)
    assert not np.allclose(a["sd"].data, b["sd"].data)


def test_global_context_mean():
    v = nx.Tensor(np.array([[1.0, -2.0]]))
    assert np.array_equal(LanguageGraph.global_context(v, v, v).data, v.data)
    g = LanguageGraph.global_context(*(nx.Tensor(np.array([x])) for x in ([2.0, 0], [0, 2.0], [1.0, 1.0])))
    assert g.data.tolist() == [[1.0, 1.0]]
    rng = np.random.default_rng(0)
    xs = [nx.Tensor(rng.normal(size=(1, 5))) for _ in range(3)]
    assert np.allclose(LanguageGraph.global_context(*xs).data, LanguageGraph.global_context(*xs[::-1]).data,
                       atol=1e-15)


def test_global_is_exact_mean_in_forward():
    _, lg, enc, h = setup(seed=5)
    lc = lg(h, enc)
    assert np.array_equal(lc.g.data, (lc.s.data + lc.o.data + lc.d.data) / 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_six_heads_normalised_and_zero_on_pad(seed):
    rng = np.random.default_rng(seed)
    seqs = [list(rng.integers(2, 12, size=int(rng.integers(1, 7)))) for _ in range(3)]
    _, lg, enc, h = setup(seed, seqs)
    lc = lg(h, enc)
    assert set(lc.weights) == set(SPECIALIZED + RELATIONAL)
    for w in lc.weights.values():
        assert np.all(w.data >= 0) and np.allclose(w.data.sum(-1), 1, atol=1e-6)
        assert np.all(w.data[~enc.mask] == 0)


def test_without_relations_uses_pair_means():
    store = nx.ParameterStore(0)
    enc = InstructionEncoder(store, 12, 3, S // 2).encode(np.array([[3, 4, 5]]))
    lc = LanguageGraph(store, S, use_relations=False)(nx.Tensor(np.ones((1, S))), enc)
    assert np.allclose(lc.sd.data, (lc.s.data + lc.d.data) / 2, atol=1e-15)
    assert set(lc.weights) == set(SPECIALIZED)


def test_zero_relations_switch():
    _, lg, enc, h = setup()
    lc = lg(h, enc, zero_relations=True)
    assert all(np.all(getattr(lc, p).data == 0) for p in RELATIONAL)
    assert np.any(lc.s.data != 0)


def test_relation_lookup_is_unordered():
    _, lg, enc, h = setup()
    lc = lg(h, enc)
    assert lc.relation("d", "s") is lc.sd and lc.relation("o", "s") is lc.so and lc.relation("d", "o") is lc.od
    with pytest.raises(KeyError):
        lc.relation("s", "s")
