import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvgraph import numerics as nx
from lvgraph.state import AgentState, StateTracker, directional_encoding, soft_attn

angles = st.floats(-20, 20, allow_nan=False)


def test_directional_encoding_examples():
    assert np.allclose(directional_encoding(0.0, 0.0, 2), [1, 0, 1, 0, 1, 0, 1, 0])
    assert np.allclose(directional_encoding(math.pi / 2, 0.0, 1), [0, 1, 1, 0], atol=1e-15)
    d = directional_encoding(1.3, 0.4, 32)
    assert d.shape == (128,) and abs(d @ d - 64) < 1e-12


@settings(max_examples=1000, deadline=None)
@given(angles, angles, st.integers(1, 32))
def test_directional_encoding_blocks_and_norm(h, e, r):
    d = directional_encoding(h, e, r)
    blocks = d.reshape(r, 4)
    assert np.all(blocks == blocks[0])
    assert abs(d @ d - 2 * r) < 1e-9


def test_directional_encoding_batches():
    hs = np.array([[0.1, 0.2], [0.3, 0.4]])
    d = directional_encoding(hs, 0.0, 3)
    assert d.shape == (2, 2, 12)
    assert np.allclose(d[1, 0], directional_encoding(0.3, 0.0, 3))


def tracker(seed=0, S=4):
    return StateTracker(nx.ParameterStore(seed), S)


def test_global_attend_identical_rows():
    t = tracker()
    row = np.arange(6.0)
    feats = np.tile(row, (36, 1))[None]
    out = t.global_attend(nx.Tensor(np.random.default_rng(0).normal(size=(1, 4))), feats)
    assert np.allclose(out.context.data[0], row, atol=1e-12)
    assert abs(out.weights.data.sum() - 1) < 1e-12


def test_global_attend_saturates_on_margin():
    t = tracker()
    feats = np.eye(6)[None, :6] * 1.0
    feats = np.concatenate([feats, np.zeros((1, 30, 6))], axis=1)
    W = t.store.get("state.global_attn.W", (6, 4))
    W.data[:] = 0
    W.data[2, 0] = 1.0
    q = nx.Tensor(np.array([[12.0, 0, 0, 0]]))
    out = t.global_attend(q, feats)
    # row 2 scores 12, every other row scores 0
    assert np.max(np.abs(out.context.data[0] - feats[0, 2])) < 1e-3


def test_global_attend_zero_views():
    with pytest.raises(nx.ShapeError):
        tracker().global_attend(nx.Tensor(np.zeros((1, 4))), np.zeros((1, 0, 6)))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_soft_attention_weights_normalised(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 7))
    mask = rng.random((2, L)) < 0.7
    mask[:, 0] = True
    store = nx.ParameterStore(seed)
    att = soft_attn(store, "a", nx.Tensor(rng.normal(size=(2, 3)) * 4), nx.Tensor(rng.normal(size=(2, L, 5))),
                    mask)
    w = att.weights.data
    assert np.all(w >= 0) and np.allclose(w.sum(-1), 1, atol=1e-6)
    assert np.all(w[~mask] == 0)


def test_update_state_zero_case():
    t = tracker()
    s = AgentState.initial(2, 4, 8, 4)
    h, c = t.update_state(s, nx.Tensor(np.zeros((2, 6))))
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_update_state_deterministic_and_shape_checked():
    t = tracker(seed=3)
    s = AgentState.initial(1, 4, 8, 4)
    g = nx.Tensor(np.random.default_rng(1).normal(size=(1, 6)))
    a = t.update_state(s, g)[0].data
    assert np.array_equal(a, t.update_state(s, g)[0].data)
    with pytest.raises(nx.ShapeError):
        t.update_state(s, nx.Tensor(np.zeros((1, 7))))


def test_update_state_gradients_reach_inputs():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        t = tracker(seed)
        s = AgentState.initial(1, 4, 8, 4)
        s.prev_action = rng.normal(size=(1, 8))
        g = nx.Tensor(rng.normal(size=(1, 6)), requires_grad=True)
        pa = nx.Tensor(s.prev_action, requires_grad=True)
        s.prev_action = pa
        h, _ = t.update_state(s, g)
        loss = nx.tsum(nx.square(h))
        nx.backward(loss)
        assert np.abs(g.grad).max() > 0 and np.abs(pa.grad).max() > 0

        def f(v):
            t2 = tracker(seed)
            s2 = AgentState.initial(1, 4, 8, 4)
            s2.prev_action = pa.data
            with nx.no_grad():
                hh, _ = t2.update_state(s2, nx.Tensor(np.array([v])))
            return float(np.sum(hh.data ** 2))

        x = g.data[0].tolist()
        for i in range(6):
            xp, xm = list(x), list(x)
            xp[i] += 1e-6
            xm[i] -= 1e-6
            assert abs((f(xp) - f(xm)) / 2e-6 - g.grad[0, i]) < 1e-7
