"""Train / unseen world splits with their episode sets, and their files."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .config import DataConfig
from .instruction import Vocabulary
from .synthworld import (FeatureConfig, WorldConfig, default_vocabulary, generate_world, load_episodes,
                         load_worlds, make_episode, save_episodes, save_worlds)

FILES = ("worlds.json", "train_episodes.jsonl", "unseen_episodes.jsonl", "vocab.txt")


@dataclass
class Dataset:
    worlds: dict
    train: list
    unseen: list
    vocab: Vocabulary

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_worlds(d / "worlds.json", [self.worlds[k] for k in sorted(self.worlds)])
        save_episodes(d / "train_episodes.jsonl", self.train)
        save_episodes(d / "unseen_episodes.jsonl", self.unseen)
        self.vocab.save(d / "vocab.txt")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        missing = [f for f in FILES if not (d / f).exists()]
        if missing:
            raise FileNotFoundError(f"{d} lacks {missing}")
        worlds = {w.world_id: w for w in load_worlds(d / "worlds.json")}
        return cls(worlds, load_episodes(d / "train_episodes.jsonl"),
                   load_episodes(d / "unseen_episodes.jsonl"), Vocabulary.load(d / "vocab.txt"))


def build_dataset(dc: DataConfig) -> Dataset:
    fc = FeatureConfig(n_views=dc.n_views, scene_dim=dc.scene_dim, object_dim=dc.object_dim,
                       k_objects=dc.k_objects, noise=dc.feature_noise)
    wc = WorldConfig(n_viewpoints=dc.n_viewpoints, features=fc)
    vocab = default_vocabulary()
    worlds, train, unseen = {}, [], []
    span = (dc.path_len_min, dc.path_len_max)
    for split, count, per_world, sink, offset in (
            ("train", dc.n_train_worlds, dc.train_episodes_per_world, train, 0),
            ("unseen", dc.n_unseen_worlds, dc.unseen_episodes_per_world, unseen, 5000)):
        for i in range(count):
            w = generate_world(dc.seed * 10007 + offset + i, wc, world_id=f"{split}-{i:02d}")
            worlds[w.world_id] = w
            sink.extend(make_episode(w, dc.seed, span, index=j, vocab=vocab) for j in range(per_world))
    return Dataset(worlds, train, unseen, vocab)
