import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvgraph import numerics as nx
from lvgraph.instruction import PAD, UNK, InstructionEncoder, Vocabulary, pad_batch

from oracles import scalar_lstm


def encoder(seed=0, vocab=12, E=3, H=2, tied=False):
    return InstructionEncoder(nx.ParameterStore(seed), vocab, E, H, tied=tied)


def test_vocabulary_reserved_and_unknown(tmp_path):
    v = Vocabulary(["walk", "left", "walk"])
    assert v.stoi["<pad>"] == PAD and v.stoi["<unk>"] == UNK
    assert len(v) == 4
    assert v.encode(["walk", "zebra"]) == [2, UNK]
    assert v.decode([2, 3]) == ["walk", "left"]
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v


def test_pad_batch_and_empty():
    ids, mask = pad_batch([[3, 4, 5], [6]])
    assert ids.tolist() == [[3, 4, 5], [6, PAD, PAD]]
    assert mask.tolist() == [[True] * 3, [True, False, False]]
    with pytest.raises(ValueError):
        pad_batch([[3], []])
    with pytest.raises(ValueError):
        encoder().encode(np.zeros((1, 0), dtype=int))


def test_shapes_and_pad_outputs_zero():
    enc = encoder().encode(*pad_batch([[3, 4, 5, 6], [7, 8]]))
    assert enc.hidden.shape == (2, 4, 4)
    assert np.all(enc.hidden.data[1, 2:] == 0)
    assert enc.lengths.tolist() == [4, 2]


def test_forward_half_matches_scalar_oracle():
    e = encoder(seed=3)
    toks = [3, 9, 4]
    out = e.encode(np.array([toks])).hidden.data[0]
    table = e.embedding_table().data
    Wx, Wh, b = (p.data.tolist() for p in e._cell("fwd"))
    h, c = [0.0, 0.0], [0.0, 0.0]
    for j, t in enumerate(toks):
        h, c = scalar_lstm(table[t].tolist(), h, c, Wx, Wh, b)
        assert np.allclose(out[j, :2], h, atol=1e-12)
    Wx, Wh, b = (p.data.tolist() for p in e._cell("bwd"))
    h, c = [0.0, 0.0], [0.0, 0.0]
    for j in reversed(range(3)):
        h, c = scalar_lstm(table[toks[j]].tolist(), h, c, Wx, Wh, b)
        assert np.allclose(out[j, 2:], h, atol=1e-12)


def test_padding_does_not_change_real_positions():
    e = encoder(seed=1)
    alone = e.encode(np.array([[3, 4]])).hidden.data[0]
    padded = e.encode(*pad_batch([[3, 4], [5, 6, 7, 8, 9]])).hidden.data[0]
    assert np.allclose(alone, padded[:2], atol=1e-14)


def test_tied_directions_mirror_on_reversed_input():
    e = encoder(seed=2, tied=True)
    a = e.encode(np.array([[3, 4, 5]])).hidden.data[0]
    b = e.encode(np.array([[5, 4, 3]])).hidden.data[0]
    assert np.allclose(a[:, :2], b[::-1, 2:], atol=1e-14)


def test_single_token_forward_equals_backward_when_tied():
    e = encoder(seed=4, tied=True)
    h = e.encode(np.array([[6]])).hidden.data[0, 0]
    assert np.array_equal(h[:2], h[2:])


def test_pad_embedding_stays_zero_after_update():
    e = encoder(seed=0)
    enc = e.encode(*pad_batch([[3, 4], [5]]))
    nx.backward(nx.tsum(enc.hidden))
    nx.Adam(lr=0.1).step(e.store)
    assert np.all(e.embedding_table().data[PAD] == 0)


def test_fused_and_composed_encoders_agree():
    e = encoder(seed=5)
    ids, mask = pad_batch([[3, 4, 5], [6, 7]])
    fused = e.encode(ids, mask)
    nx.backward(nx.tsum(nx.square(fused.hidden)))
    g1 = {k: v.copy() for k, v in e.store.grads().items()}
    e.store.zero_grad()
    with nx.composed_ops():
        comp = e.encode(ids, mask)
        nx.backward(nx.tsum(nx.square(comp.hidden)))
    assert np.allclose(fused.hidden.data, comp.hidden.data, atol=1e-13)
    for k, v in e.store.grads().items():
        assert np.allclose(g1[k], v, atol=1e-12), k


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 11), min_size=1, max_size=7), st.integers(0, 50))
def test_outputs_bounded_and_deterministic(toks, seed):
    a = encoder(seed).encode(np.array([toks])).hidden.data
    b = encoder(seed).encode(np.array([toks])).hidden.data
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) < 1)


def test_embedding_lookup_contract():
    e = encoder(seed=6)
    with pytest.raises((IndexError, nx.ShapeError, ValueError)):
        e.embed(np.array([[3, 12]]))
    vecs = e.embed(np.array([list(range(2, 12)) + [3]])).data[0]
    assert np.array_equal(vecs[1], vecs[-1])
    distinct = vecs[:-1]
    d = np.abs(distinct[:, None] - distinct[None]).sum(-1)
    assert np.all(d[np.triu_indices(len(distinct), 1)] > 0)
    assert np.all(e.embed(np.array([[PAD]])).data == 0)


def test_single_token_depends_only_on_itself():
    e = encoder(seed=7)
    a = e.encode(*pad_batch([[5], [6, 7, 8]])).hidden.data[0, 0]
    b = e.encode(np.array([[5]])).hidden.data[0, 0]
    assert np.allclose(a, b, atol=1e-15)


def test_shuffled_tokens_change_encoding():
    e = encoder(seed=8)
    a = e.encode(np.array([[3, 4, 5, 6]])).hidden.data
    b = e.encode(np.array([[5, 3, 6, 4]])).hidden.data
    assert not np.allclose(a, b)
