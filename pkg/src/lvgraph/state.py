"""Directional encoding, soft attention and the recurrent agent state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx


def directional_encoding(heading, elevation=0.0, reps=8):
    """(cos h, sin h, cos e, sin e) repeated ``reps`` times along the last axis."""
    heading = np.asarray(heading, dtype=float)
    elevation = np.broadcast_to(np.asarray(elevation, dtype=float), heading.shape)
    block = np.stack([np.cos(heading), np.sin(heading), np.cos(elevation), np.sin(elevation)], axis=-1)
    return np.tile(block, reps)


@dataclass
class Attended:
    context: nx.Tensor
    weights: nx.Tensor


def soft_attn(store, name, query, keys, mask=None):
    """Bilinear soft attention: score_j = q^T W u_j, output = sum_j a_j u_j.

    ``query`` is [..., dq] and broadcasts against ``keys`` [..., L, dk].
    """
    if keys.shape[-2] == 0:
        raise nx.ShapeError(f"soft attention '{name}' over zero items")
    W = store.get(f"{name}.W", (keys.shape[-1], query.shape[-1]))
    if nx.fused_enabled():
        return Attended(*nx.bilinear_attention(query, keys, W, mask))
    proj = nx.linear(query, W, name=f"{name}.W")
    if proj.ndim < keys.ndim - 1:
        proj = nx.reshape(proj, proj.shape[:-1] + (1,) * (keys.ndim - 1 - proj.ndim) + proj.shape[-1:])
    scores = nx.attn_scores(keys, proj)
    weights = nx.softmax(scores, mask=mask)
    return Attended(nx.attn_pool(weights, keys), weights)


@dataclass
class AgentState:
    h: nx.Tensor               # h_t, [B, S]
    c: nx.Tensor               # LSTM cell, [B, S]
    prev_global: nx.Tensor     # attended global language context from the last step
    prev_action: np.ndarray    # directional encoding of the last chosen move (zeros for stop / t=1)
    prev_direction: nx.Tensor  # updated direction node at the last chosen candidate

    @classmethod
    def initial(cls, batch, state_dim, dir_dim, node_dim):
        z = np.zeros((batch, state_dim))
        return cls(h=nx.Tensor(z), c=nx.Tensor(z.copy()), prev_global=nx.Tensor(z.copy()),
                   prev_action=np.zeros((batch, dir_dim)),
                   prev_direction=nx.Tensor(np.zeros((batch, node_dim))))


class StateTracker:
    def __init__(self, store, state_dim, prefix="state", forget_bias=0.0):
        self.store = store
        self.forget_bias = forget_bias
        self.state_dim = state_dim
        self.prefix = prefix

    def global_attend(self, prev_context, global_feats):
        """Attend the 36 panoramic features with the previous global context."""
        return soft_attn(self.store, f"{self.prefix}.global_attn", prev_context, nx.as_tensor(global_feats))

    def update_state(self, state: AgentState, attended_global):
        x = nx.concat([nx.as_tensor(state.prev_action), attended_global])
        S = self.state_dim
        Wx = self.store.get(f"{self.prefix}.lstm.Wx", (4 * S, x.shape[-1]), fan_in=S)
        Wh = self.store.get(f"{self.prefix}.lstm.Wh", (4 * S, S), fan_in=S)
        b = self.store.lstm_bias(f"{self.prefix}.lstm.b", S, self.forget_bias)
        # the recurrent slot is the previous global language context, not h_{t-1}
        h, c = nx.lstm_step(x, state.prev_global, state.c, Wx, Wh, b)
        return h, c
