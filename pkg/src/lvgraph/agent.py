"""The full navigator: encoder, state tracker, language graph, visual graph."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numerics as nx
from .instruction import InstructionEncoder, pad_batch
from .language_graph import LanguageGraph
from .state import AgentState, StateTracker, directional_encoding
from .visual_graph import VisualGraph


@dataclass
class ModelConfig:
    vocab_size: int = 58
    embed_dim: int = 32
    enc_hidden: int = 32
    dir_reps: int = 8
    scene_dim: int = 32
    object_dim: int = 32
    # ablation switches
    use_scene: bool = True
    use_object: bool = True
    use_edges: bool = True
    use_language_graph: bool = True
    # diagnostic: force every relational context to zero
    zero_relations: bool = False
    # initial forget-gate bias of every LSTM
    forget_bias: float = 1.0

    @property
    def state_dim(self):
        # the recurrent slot receives the averaged language context
        return 2 * self.enc_hidden

    @property
    def node_dim(self):
        # nodes are gated elementwise by language contexts
        return 2 * self.enc_hidden

    @property
    def dir_dim(self):
        return 4 * self.dir_reps

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ObsBatch:
    global_feats: np.ndarray   # [B, n_views, V + 4r]
    scene: np.ndarray          # [B, N, V]
    objects: np.ndarray        # [B, N, k, E_o]
    directions: np.ndarray     # [B, N, 4r]
    mask: np.ndarray           # [B, N] real candidates plus stop
    n_candidates: np.ndarray   # [B]; the stop slot sits at index n_candidates[b]
    candidate_ids: list

    def is_stop(self, actions):
        return np.asarray(actions) == self.n_candidates


def featurize(observations, dir_reps, include_stop=True):
    """Pad a list of observations into batch arrays, appending a zero stop slot."""
    B = len(observations)
    n = np.array([o.n_candidates for o in observations])
    N = int(n.max()) + (1 if include_stop else 0)
    if N == 0:
        raise nx.ShapeError("no candidates in any observation")
    o0 = observations[0]
    V = o0.view_features.shape[1]
    k, Eo = o0.candidate_objects.shape[1:]
    dim = 4 * dir_reps
    glob = np.stack([np.concatenate([o.view_features,
                                     directional_encoding(o.view_headings, o.view_elevations, dir_reps)], axis=1)
                     for o in observations])
    scene = np.zeros((B, N, V))
    objects = np.zeros((B, N, k, Eo))
    dirs = np.zeros((B, N, dim))
    mask = np.zeros((B, N), dtype=bool)
    for b, o in enumerate(observations):
        m = o.n_candidates
        if m:
            scene[b, :m] = o.candidate_scene
            objects[b, :m] = o.candidate_objects
            dirs[b, :m] = directional_encoding(o.candidate_headings, o.candidate_elevations, dir_reps)
        mask[b, :m + (1 if include_stop else 0)] = True
    return ObsBatch(glob, scene, objects, dirs, mask, n, [o.candidate_ids for o in observations])


@dataclass
class StepOutput:
    h: nx.Tensor
    c: nx.Tensor
    logits: nx.Tensor
    log_probs: nx.Tensor
    value: nx.Tensor
    contexts: object
    nodes: object
    global_weights: nx.Tensor
    probs: np.ndarray


class Agent:
    def __init__(self, config: ModelConfig, store: nx.ParameterStore | None = None, seed=0):
        self.config = config
        self.store = store if store is not None else nx.ParameterStore(seed)
        c = config
        self.encoder = InstructionEncoder(self.store, c.vocab_size, c.embed_dim, c.enc_hidden,
                                          forget_bias=c.forget_bias)
        self.tracker = StateTracker(self.store, c.state_dim, forget_bias=c.forget_bias)
        self.language = LanguageGraph(self.store, c.state_dim, use_relations=c.use_language_graph)
        self.visual = VisualGraph(self.store, c.node_dim, use_scene=c.use_scene,
                                  use_object=c.use_object, use_edges=c.use_edges)

    def encode(self, token_lists):
        ids, mask = pad_batch(token_lists)
        return self.encoder.encode(ids, mask)

    def initial_state(self, batch):
        c = self.config
        return AgentState.initial(batch, c.state_dim, c.dir_dim, c.node_dim)

    def featurize(self, observations):
        return featurize(observations, self.config.dir_reps)

    def step(self, state: AgentState, obs: ObsBatch, enc) -> StepOutput:
        glob = self.tracker.global_attend(state.prev_global, obs.global_feats)
        h, c = self.tracker.update_state(state, glob.context)
        lc = self.language(h, enc, zero_relations=self.config.zero_relations)
        nodes, logits = self.visual(obs.scene, obs.objects, obs.directions, lc, state.prev_direction)
        log_probs = nx.log_softmax(logits, mask=obs.mask)
        Wv = self.store.get("value.W", (1, self.config.state_dim))
        bv = self.store.get("value.b", (1,), init="zeros")
        value = nx.reshape(nx.linear(h, Wv, bv), (h.shape[0],))
        probs = np.where(obs.mask, np.exp(log_probs.data), 0.0)
        return StepOutput(h=h, c=c, logits=logits, log_probs=log_probs, value=value, contexts=lc,
                          nodes=nodes, global_weights=glob.weights, probs=probs)

    def next_state(self, state, out: StepOutput, actions, obs: ObsBatch):
        actions = np.asarray(actions, dtype=np.int64)
        rows = np.arange(len(actions))
        # the stop slot carries a zero directional encoding
        prev_action = obs.directions[rows, actions]
        prev_direction = nx.take_along(out.nodes.updated["d"], actions)
        return AgentState(h=out.h, c=out.c, prev_global=out.contexts.g,
                          prev_action=prev_action, prev_direction=prev_direction)
