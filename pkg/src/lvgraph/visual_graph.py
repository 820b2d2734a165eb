"""Language-conditioned scene/object/direction graph over candidate directions."""
from __future__ import annotations

from dataclasses import dataclass, field

from . import numerics as nx
from .language_graph import _tanh_proj
from .state import soft_attn

EDGE_NAMES = {frozenset("ds"): "ds", frozenset("os"): "os", frozenset("od"): "od"}


@dataclass
class CandidateNodes:
    initial: dict                     # node kind -> [B, N, D]
    updated: dict = field(default_factory=dict)
    object_weights: nx.Tensor | None = None   # [B, N, k]

    @property
    def kinds(self):
        return list(self.initial)


def _expand(ctx):
    # [B, D] -> [B, 1, D] so a context gates every candidate of its row
    return nx.reshape(ctx, ctx.shape[:-1] + (1,) + ctx.shape[-1:])


class VisualGraph:
    def __init__(self, store, node_dim, prefix="vis", use_scene=True, use_object=True, use_edges=True):
        if not (use_scene or use_object):
            raise ValueError("at least one of the scene/object nodes must be enabled")
        self.store = store
        self.D = node_dim
        self.prefix = prefix
        self.use_scene = use_scene
        self.use_object = use_object
        self.use_edges = use_edges

    @property
    def kinds(self):
        return [k for k, on in (("s", self.use_scene), ("o", self.use_object), ("d", True)) if on]

    def _proj(self, name, *parts):
        parts = [nx.as_tensor(p) for p in parts]
        W = self.store.get(f"{self.prefix}.{name}", (self.D, sum(p.shape[-1] for p in parts)))
        return _tanh_proj(parts, W)

    def aggregate_objects(self, h_obj, objects):
        """Attend each candidate's k object features with the object context."""
        objects = nx.as_tensor(objects)
        if objects.shape[-2] == 0:
            raise nx.ShapeError("need at least one object per candidate")
        return soft_attn(self.store, f"{self.prefix}.obj_attn", h_obj, objects)

    def init_nodes(self, scene, objects, directions, lc, prev_direction):
        initial = {}
        obj_w = None
        if self.use_scene:
            initial["s"] = nx.mul(self._proj("proj.s", nx.as_tensor(scene)), _expand(lc.s))
        if self.use_object:
            att = self.aggregate_objects(lc.o, objects)
            obj_w = att.weights
            initial["o"] = nx.mul(self._proj("proj.o", att.context), _expand(lc.o))
        initial["d"] = nx.mul(self._proj("proj.d", directions, _expand(prev_direction)), _expand(lc.d))
        return CandidateNodes(initial=initial, object_weights=obj_w)

    def edge_param(self, a, b):
        name = f"{self.prefix}.edge.{EDGE_NAMES[frozenset((a, b))]}"
        return self.store.get(name, (self.D, 2 * self.D))

    def message(self, nodes, sender, receiver, lc):
        """Raw message from ``sender`` to ``receiver``, gated by their relation.

        The receiver's node comes first in the concatenation; the projection
        is shared by both directions of the edge.
        """
        W = self.edge_param(sender, receiver)
        raw = _tanh_proj([nodes.initial[receiver], nodes.initial[sender]], W)
        return nx.mul(raw, _expand(lc.relation(sender, receiver)))

    def message_pass(self, nodes, lc):
        out = {}
        for y in nodes.kinds:
            gated = [self.message(nodes, x, y, lc) for x in nodes.kinds if x != y]
            total = gated[0]
            for g in gated[1:]:
                total = nx.add(total, g)
            out[y] = self._proj(f"combine.{y}", total)
        return out

    @staticmethod
    def update_nodes(nodes, messages):
        nodes.updated = {k: nx.add(messages[k], nodes.initial[k]) for k in nodes.kinds}
        return nodes

    def action_logits(self, node_feats):
        x = nx.concat([node_feats[k] for k in self.kinds])
        W = self.store.get(f"{self.prefix}.logit.W", (1, x.shape[-1]))
        b = self.store.get(f"{self.prefix}.logit.b", (1,), init="zeros")
        logits = nx.linear(x, W, b, name=f"{self.prefix}.logit.W")
        return nx.reshape(logits, logits.shape[:-1])

    def __call__(self, scene, objects, directions, lc, prev_direction):
        nodes = self.init_nodes(scene, objects, directions, lc, prev_direction)
        if self.use_edges and len(nodes.kinds) > 1:
            self.update_nodes(nodes, self.message_pass(nodes, lc))
        else:
            nodes.updated = dict(nodes.initial)
        return nodes, self.action_logits(nodes.updated)


def action_probabilities(logits, mask=None):
    if logits.shape[-1] == 0:
        raise nx.ShapeError("no candidates to choose from")
    return nx.softmax(logits, mask=mask)
