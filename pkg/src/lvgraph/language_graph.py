"""Two-level attention over the instruction: specialized and relational contexts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .state import soft_attn

def _tanh_proj(parts, W):
    if nx.fused_enabled():
        return nx.tanh_linear(parts, W)
    x = parts[0] if len(parts) == 1 else nx.concat(parts)
    return nx.tanh(nx.linear(x, W, name=W.name))


SPECIALIZED = ("s", "o", "d")
RELATIONAL = ("sd", "so", "od")


@dataclass
class LanguageContexts:
    s: nx.Tensor
    o: nx.Tensor
    d: nx.Tensor
    sd: nx.Tensor
    so: nx.Tensor
    od: nx.Tensor
    g: nx.Tensor
    weights: dict = field(default_factory=dict)   # head -> [B, L] attention

    def relation(self, a, b):
        """Relational context for the unordered node pair {a, b}."""
        key = {frozenset("sd"): "sd", frozenset("so"): "so", frozenset("od"): "od"}[frozenset((a, b))]
        return getattr(self, key)


class LanguageGraph:
    def __init__(self, store, state_dim, prefix="lang", use_relations=True):
        self.store = store
        self.state_dim = state_dim
        self.prefix = prefix
        self.use_relations = use_relations

    def specialized_contexts(self, h, enc):
        out, weights = {}, {}
        for head in SPECIALIZED:
            att = soft_attn(self.store, f"{self.prefix}.{head}", h, enc.hidden, enc.mask)
            out[head], weights[head] = att.context, att.weights
        return out, weights

    def relational_contexts(self, spec, enc):
        out, weights = {}, {}
        for pair in RELATIONAL:
            a, b = pair
            P = self.store.get(f"{self.prefix}.proj.{pair}",
                               (self.state_dim, spec[a].shape[-1] + spec[b].shape[-1]))
            query = _tanh_proj([spec[a], spec[b]], P)
            att = soft_attn(self.store, f"{self.prefix}.{pair}", query, enc.hidden, enc.mask)
            out[pair], weights[pair] = att.context, att.weights
        return out, weights

    @staticmethod
    def global_context(s, o, d):
        return nx.mean([s, o, d])

    def __call__(self, h, enc, zero_relations=False):
        spec, weights = self.specialized_contexts(h, enc)
        if self.use_relations:
            rel, rel_w = self.relational_contexts(spec, enc)
            weights.update(rel_w)
        else:
            # no second-level attention: each relation is the mean of its two members
            rel = {p: nx.mean([spec[p[0]], spec[p[1]]]) for p in RELATIONAL}
        if zero_relations:
            rel = {p: nx.Tensor(np.zeros(v.shape)) for p, v in rel.items()}
        g = self.global_context(spec["s"], spec["o"], spec["d"])
        return LanguageContexts(g=g, weights=weights, **spec, **rel)
