"""Procedural navigation worlds, panoramic observations and the teacher.

A world is a connected graph of 2D viewpoints.  Each viewpoint belongs to
a room and holds a few objects.  Observations are deterministic
hash-embeddings of what is visible in each heading sector, so the only
thing worth learning is how instruction words relate to those features.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import minimum_spanning_tree, shortest_path

from .instruction import Vocabulary

STOP = -1

ROOM_WORDS = ("kitchen", "bedroom", "bathroom", "hallway", "office",
              "lounge", "garage", "library", "dining", "studio")
OBJECT_WORDS = ("sofa", "lamp", "table", "chair", "plant", "painting", "piano", "mirror",
                "clock", "desk", "bed", "rug", "vase", "shelf", "television", "fireplace",
                "sink", "bathtub", "toilet", "stove", "fridge", "window", "door", "bench",
                "statue", "cabinet", "curtain", "stool", "computer", "printer", "bicycle",
                "fountain", "column", "barrel", "crate", "ladder")
DIRECTION_WORDS = ("left", "right", "straight", "back")
TEMPLATE_WORDS = ("walk", "past", "the", "into", "stop", "by")

FEATURE_SALT = 7919


def default_vocabulary():
    return Vocabulary(TEMPLATE_WORDS + DIRECTION_WORDS + ROOM_WORDS + OBJECT_WORDS)


@dataclass(frozen=True)
class FeatureConfig:
    n_views: int = 36
    scene_dim: int = 32
    object_dim: int = 32
    k_objects: int = 3
    noise: float = 0.1
    bucket_size: float = 1.5
    n_buckets: int = 4
    view_range: float = 6.0


@dataclass(frozen=True)
class WorldConfig:
    n_viewpoints: int = 24
    spacing: float = 2.0
    min_separation: float = 1.4
    connect_radius: float = 2.4
    n_rooms: int = 4
    objects_per_viewpoint: tuple = (2, 4)
    features: FeatureConfig = field(default_factory=FeatureConfig)


def wrap_angle(a):
    """Map radians onto (-pi, pi]."""
    a = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(a == -np.pi, np.pi, a)


def relative_direction_word(rel):
    rel = float(wrap_angle(rel))
    if abs(rel) <= math.pi / 4:
        return "straight"
    if math.pi / 4 < rel <= 3 * math.pi / 4:
        return "left"
    if -3 * math.pi / 4 <= rel < -math.pi / 4:
        return "right"
    return "back"


class FeatureBank:
    """Global (world-independent) embedding tables for rooms, buckets, objects."""

    _cache: dict = {}

    def __new__(cls, fc: FeatureConfig):
        key = (fc.scene_dim, fc.object_dim, fc.n_buckets)
        if key not in cls._cache:
            bank = super().__new__(cls)
            rng = np.random.default_rng([FEATURE_SALT, fc.scene_dim, fc.object_dim])
            # last room row = nothing visible in the sector
            bank.rooms = rng.normal(size=(len(ROOM_WORDS) + 1, fc.scene_dim))
            bank.buckets = 0.5 * rng.normal(size=(fc.n_buckets, fc.scene_dim))
            bank.objects = rng.normal(size=(len(OBJECT_WORDS), fc.object_dim))
            cls._cache[key] = bank
        return cls._cache[key]


@dataclass
class World:
    world_id: str
    seed: int
    positions: np.ndarray          # [n, 2]
    edges: list                    # sorted (i, j) with i < j
    rooms: list                    # room-word index per viewpoint
    objects: list                  # list of object-word indices per viewpoint
    features: FeatureConfig = field(default_factory=FeatureConfig)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n(self):
        return len(self.positions)

    # ------------------------------------------------------------ graph
    def neighbors(self, v):
        adj = self._cache.get("adj")
        if adj is None:
            adj = [[] for _ in range(self.n)]
            for i, j in self.edges:
                adj[i].append(j)
                adj[j].append(i)
            adj = [sorted(a) for a in adj]
            self._cache["adj"] = adj
        return adj[v]

    def distance(self, a, b):
        return float(np.hypot(*(self.positions[a] - self.positions[b])))

    def bearing(self, a, b):
        dx, dy = self.positions[b] - self.positions[a]
        return math.atan2(dy, dx)

    def _matrix(self, weighted):
        n = self.n
        rows = [i for i, _ in self.edges] + [j for _, j in self.edges]
        cols = [j for _, j in self.edges] + [i for i, _ in self.edges]
        w = [self.distance(i, j) if weighted else 1.0 for i, j in zip(rows, cols)]
        return csr_matrix((w, (rows, cols)), shape=(n, n))

    @property
    def geodesic(self):
        """All-pairs shortest-path lengths with Euclidean edge weights."""
        if "geo" not in self._cache:
            self._cache["geo"] = shortest_path(self._matrix(True), method="D", directed=False)
        return self._cache["geo"]

    @property
    def hops(self):
        if "hops" not in self._cache:
            self._cache["hops"] = shortest_path(self._matrix(False), unweighted=True, directed=False)
        return self._cache["hops"]

    def is_connected(self):
        return bool(np.isfinite(self.hops).all())

    def shortest_path(self, start, goal):
        path = [start]
        while path[-1] != goal:
            a = teacher_action(self, path[-1], goal)
            path.append(self.neighbors(path[-1])[a])
        return path

    # ------------------------------------------------------------ features
    def shown_objects(self, v):
        """The k object ids exposed as features (cycled when fewer exist)."""
        objs = self.objects[v]
        k = self.features.k_objects
        return [objs[i % len(objs)] for i in range(k)]

    def sector_of(self, bearing):
        width = 2 * math.pi / self.features.n_views
        return int(round(float(np.mod(bearing, 2 * math.pi)) / width)) % self.features.n_views

    def view_features(self, v):
        cache = self._cache.setdefault("views", {})
        if v not in cache:
            cache[v] = self._compute_views(v)
        return cache[v]

    def _compute_views(self, v):
        fc = self.features
        bank = FeatureBank(fc)
        nothing = len(ROOM_WORDS)
        best = {}  # sector -> (priority, distance, viewpoint)
        nbrs = set(self.neighbors(v))
        for u in range(self.n):
            if u == v:
                continue
            d = self.distance(v, u)
            if u not in nbrs and d > fc.view_range:
                continue
            s = self.sector_of(self.bearing(v, u))
            key = (0 if u in nbrs else 1, d, u)
            if s not in best or key < best[s]:
                best[s] = key
        rng = np.random.default_rng([FEATURE_SALT, self.seed, v])
        feats = np.empty((fc.n_views, fc.scene_dim))
        for s in range(fc.n_views):
            if s in best:
                _, d, u = best[s]
                room, bucket = self.rooms[u], min(int(d / fc.bucket_size), fc.n_buckets - 1)
            else:
                room, bucket = nothing, fc.n_buckets - 1
            feats[s] = bank.rooms[room] + bank.buckets[bucket]
        feats += fc.noise * rng.normal(size=feats.shape)
        return feats

    def object_features(self, v):
        bank = FeatureBank(self.features)
        return bank.objects[self.shown_objects(v)]

    # ------------------------------------------------------------ io
    def to_dict(self):
        return {
            "world_id": self.world_id,
            "seed": self.seed,
            "positions": [[float(x), float(y)] for x, y in self.positions],
            "edges": [list(e) for e in self.edges],
            "rooms": list(self.rooms),
            "objects": [list(o) for o in self.objects],
            "features": asdict(self.features),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(world_id=d["world_id"], seed=int(d["seed"]),
                   positions=np.asarray(d["positions"], dtype=float),
                   edges=[tuple(e) for e in d["edges"]], rooms=list(d["rooms"]),
                   objects=[list(o) for o in d["objects"]],
                   features=FeatureConfig(**d.get("features", {})))


@dataclass
class Observation:
    viewpoint: int
    heading: float
    view_features: np.ndarray       # [n_views, V]
    view_headings: np.ndarray       # [n_views] relative to the agent
    view_elevations: np.ndarray
    candidate_ids: list
    candidate_headings: np.ndarray  # [n]
    candidate_elevations: np.ndarray
    candidate_scene: np.ndarray     # [n, V]
    candidate_objects: np.ndarray   # [n, k, E_o]

    @property
    def n_candidates(self):
        return len(self.candidate_ids)


@dataclass
class EpisodeSpec:
    episode_id: str
    world_id: str
    start: int
    goal: int
    start_heading: float
    path: list
    tokens: list
    token_ids: list

    @property
    def instruction(self):
        return " ".join(self.tokens)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --------------------------------------------------------------- generation

def _sample_positions(rng, cfg: WorldConfig):
    side = cfg.spacing * math.sqrt(cfg.n_viewpoints)
    pts = []
    tries = 0
    while len(pts) < cfg.n_viewpoints:
        tries += 1
        if tries > 200 * cfg.n_viewpoints:
            raise ValueError("cannot place viewpoints with the requested minimum separation")
        p = rng.uniform(0.0, side, size=2)
        if all(math.hypot(*(p - q)) >= cfg.min_separation for q in pts):
            pts.append(p)
    return np.array(pts)


def generate_world(seed, cfg: WorldConfig | None = None, world_id=None, **overrides):
    cfg = cfg or WorldConfig()
    if overrides:
        cfg = WorldConfig(**{**asdict(cfg), **overrides,
                             "features": overrides.get("features", cfg.features)})
    if isinstance(cfg.features, dict):
        cfg = WorldConfig(**{**asdict(cfg), "features": FeatureConfig(**cfg.features)})
    n = cfg.n_viewpoints
    if n < 2:
        raise ValueError("a world needs at least 2 viewpoints")
    rng = np.random.default_rng([seed, n])
    pos = _sample_positions(rng, cfg)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    edges = {(i, j) for i in range(n) for j in range(i + 1, n) if dist[i, j] <= cfg.connect_radius}
    mst = minimum_spanning_tree(csr_matrix(np.triu(dist))).tocoo()
    edges |= {(min(i, j), max(i, j)) for i, j in zip(mst.row.tolist(), mst.col.tolist())}
    edges = sorted(edges)
    degree = np.bincount(np.array(edges).ravel(), minlength=n)
    if degree.max() > cfg.features.n_views:
        raise ValueError("node degree exceeds the panorama view count")

    # rooms: farthest-point seeds, nearest-seed assignment
    n_rooms = min(cfg.n_rooms, n)
    centers = [int(rng.integers(n))]
    while len(centers) < n_rooms:
        centers.append(int(np.argmax(dist[:, centers].min(axis=1))))
    cluster = np.argmin(dist[:, centers], axis=1)
    room_types = rng.choice(len(ROOM_WORDS), size=n_rooms, replace=False)
    rooms = [int(room_types[c]) for c in cluster]

    lo, hi = cfg.objects_per_viewpoint
    objects = [sorted(rng.choice(len(OBJECT_WORDS), size=int(rng.integers(lo, hi + 1)),
                                 replace=False).tolist()) for _ in range(n)]
    for o in objects:
        rng.shuffle(o)
    world = World(world_id=world_id or f"w{seed}", seed=int(seed), positions=pos, edges=edges,
                  rooms=rooms, objects=objects, features=cfg.features)
    if not world.is_connected():
        raise ValueError("generated world is not connected")
    return world


def generate_instruction(world, path, start_heading, rng, vocab=None):
    """Token ids for a path; see ``instruction_words`` for the grammar."""
    vocab = vocab or default_vocabulary()
    return vocab.encode(instruction_words(world, path, start_heading, rng))


def instruction_words(world, path, start_heading, rng):
    """``walk <dir> past the <object> into the <room>`` per edge, then
    ``stop by the <object>`` at the goal."""
    words = []
    heading = start_heading
    last_obj = None
    for a, b in zip(path[:-1], path[1:]):
        bearing = world.bearing(a, b)
        turn = relative_direction_word(bearing - heading)
        shown = sorted(set(world.shown_objects(b)))
        # name a landmark the other moves in the same direction do not show, when there is one
        rivals = [u for u in world.neighbors(a)
                  if u != b and relative_direction_word(world.bearing(a, u) - heading) == turn]
        distinct = [o for o in shown if not any(o in world.shown_objects(u) for u in rivals)]
        pool = distinct or shown
        last_obj = pool[int(rng.integers(len(pool)))]
        words += ["walk", turn, "past", "the",
                  OBJECT_WORDS[last_obj], "into", "the", ROOM_WORDS[world.rooms[b]]]
        heading = bearing
    shown = sorted(set(world.shown_objects(path[-1])))
    if last_obj in shown and len(shown) > 1:
        shown.remove(last_obj)
    words += ["stop", "by", "the", OBJECT_WORDS[shown[int(rng.integers(len(shown)))]]]
    return words


def make_episode(world, seed, path_len_range=(2, 5), index=0, vocab=None):
    lo, hi = path_len_range
    rng = np.random.default_rng([world.seed, seed, index])
    hops_on_path = _path_edge_counts(world)
    pairs = [(s, g) for s in range(world.n) for g in range(world.n)
             if s != g and lo <= hops_on_path[s, g] <= hi]
    if lo == 0:
        pairs += [(s, s) for s in range(world.n)]
    if not pairs:
        raise ValueError(f"world {world.world_id} has no start/goal pair with path length in {path_len_range}")
    start, goal = pairs[int(rng.integers(len(pairs)))]
    heading = float(rng.uniform(-math.pi, math.pi))
    path = world.shortest_path(start, goal)
    words = instruction_words(world, path, heading, rng)
    vocab = vocab or default_vocabulary()
    return EpisodeSpec(episode_id=f"{world.world_id}-{index}", world_id=world.world_id,
                       start=start, goal=goal, start_heading=heading, path=path,
                       tokens=words, token_ids=vocab.encode(words))


def _path_edge_counts(world):
    if "path_edges" not in world._cache:
        n = world.n
        counts = np.zeros((n, n), dtype=int)
        for g in range(n):
            for s in range(n):
                counts[s, g] = len(world.shortest_path(s, g)) - 1
        world._cache["path_edges"] = counts
    return world._cache["path_edges"]


# --------------------------------------------------------------- simulation

def observe(world, viewpoint, heading):
    if not 0 <= viewpoint < world.n:
        raise KeyError(f"unknown viewpoint {viewpoint} in world {world.world_id}")
    fc = world.features
    views = world.view_features(viewpoint)
    width = 2 * math.pi / fc.n_views
    view_heads = wrap_angle(np.arange(fc.n_views) * width - heading)
    nbrs = world.neighbors(viewpoint)
    bearings = np.array([world.bearing(viewpoint, u) for u in nbrs])
    scene = np.stack([views[world.sector_of(b)] for b in bearings]) if nbrs else np.zeros((0, fc.scene_dim))
    objs = np.stack([world.object_features(u) for u in nbrs]) if nbrs else \
        np.zeros((0, fc.k_objects, fc.object_dim))
    return Observation(
        viewpoint=viewpoint, heading=float(heading),
        view_features=views, view_headings=view_heads, view_elevations=np.zeros(fc.n_views),
        candidate_ids=list(nbrs), candidate_headings=wrap_angle(bearings - heading),
        candidate_elevations=np.zeros(len(nbrs)), candidate_scene=scene, candidate_objects=objs)


def teacher_action(world, current, goal):
    """STOP at the goal, else the candidate index of the next viewpoint on a
    geodesic shortest path (smallest viewpoint id among ties)."""
    if current == goal:
        return STOP
    geo = world.geodesic
    if not np.isfinite(geo[current, goal]):
        raise ValueError(f"goal {goal} unreachable from {current}")
    best = geo[current, goal]
    nbrs = world.neighbors(current)
    for idx, u in enumerate(nbrs):
        if abs(world.distance(current, u) + geo[u, goal] - best) <= 1e-9 * max(1.0, best):
            return idx
    raise AssertionError("no neighbor lies on a shortest path")


def step(world, current, action, heading=0.0, steps_taken=0, max_steps=None):
    """Apply ``action`` (candidate index or STOP).

    Returns (next viewpoint, next heading, done).
    """
    if action == STOP:
        return current, heading, True
    nbrs = world.neighbors(current)
    if not 0 <= action < len(nbrs):
        raise IndexError(f"action {action} invalid at viewpoint {current} with {len(nbrs)} candidates")
    nxt = nbrs[action]
    done = max_steps is not None and steps_taken + 1 >= max_steps
    return nxt, world.bearing(current, nxt), done


# --------------------------------------------------------------- files

def save_worlds(path, worlds):
    Path(path).write_text(json.dumps([w.to_dict() for w in worlds], sort_keys=True, indent=1) + "\n")


def load_worlds(path):
    return [World.from_dict(d) for d in json.loads(Path(path).read_text())]


def save_episodes(path, episodes):
    lines = [json.dumps(e.to_dict(), sort_keys=True) for e in episodes]
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_episodes(path):
    return [EpisodeSpec.from_dict(json.loads(line))
            for line in Path(path).read_text().splitlines() if line.strip()]
