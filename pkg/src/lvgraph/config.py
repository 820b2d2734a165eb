"""Experiment configuration: world generation, model and training sections."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .agent import ModelConfig


@dataclass
class DataConfig:
    seed: int = 0
    n_train_worlds: int = 20
    n_unseen_worlds: int = 10
    n_viewpoints: int = 24
    train_episodes_per_world: int = 100
    unseen_episodes_per_world: int = 20
    path_len_min: int = 2
    path_len_max: int = 5
    k_objects: int = 3
    scene_dim: int = 32
    object_dim: int = 32
    n_views: int = 36
    feature_noise: float = 0.1


@dataclass
class TrainConfig:
    seed: int = 0
    episodes: int = 20000
    batch_size: int = 8
    lr: float = 2e-3
    il_weight: float = 0.2
    gamma: float = 0.9
    value_weight: float = 0.5
    rl_normalize: str = "steps"      # "batch" or "steps"
    max_steps: int = 12
    success_distance: float = 1.0
    grad_clip: float = 40.0
    eval_every: int = 250
    seen_eval_episodes: int = 200


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return {"data": asdict(self.data), "model": self.model.to_dict(), "train": asdict(self.train)}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"data", "model", "train"}
        if unknown:
            raise KeyError(f"unknown config sections: {sorted(unknown)}")
        return cls(data=_build(DataConfig, d.get("data", {})),
                   model=_build(ModelConfig, d.get("model", {})),
                   train=_build(TrainConfig, d.get("train", {})))

    def with_overrides(self, assignments):
        """Apply ``section.key=value`` strings; values parse as JSON when possible."""
        d = self.to_dict()
        for item in assignments or ():
            key, sep, raw = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ValueError(f"override '{item}' must look like section.key=value")
            if section not in d or name not in d[section]:
                raise KeyError(f"unknown config key '{key}'")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            d[section][name] = value
        return ExperimentConfig.from_dict(d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _build(klass, d):
    known = {f.name for f in fields(klass)}
    unknown = set(d) - known
    if unknown:
        raise KeyError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
    return klass(**d)
