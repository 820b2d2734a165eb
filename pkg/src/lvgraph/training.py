"""Mixed imitation + actor-critic training loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .agent import Agent
from .config import ExperimentConfig
from .dataset import Dataset
from .evaluation import evaluate_suite
from .rollout import chosen_log_prob_sum, discounted_returns, rollout

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lvgraph-1"


@dataclass
class LossTerms:
    total: nx.Tensor
    il: nx.Tensor
    rl: nx.Tensor
    value: nx.Tensor
    il_steps: int

    def scalars(self):
        return {"loss": self.total.item(), "il": self.il.item(), "rl": self.rl.item(),
                "value": self.value.item(),
                "il_per_step": self.il.item() * self._batch / max(self.il_steps, 1)}

    _batch: int = 1


def imitation_loss(teacher_ro):
    """sum_t -log p_t[a*_t], averaged over the batch."""
    B = len(teacher_ro.episodes)
    lp = chosen_log_prob_sum(teacher_ro.log_probs, teacher_ro.teacher, teacher_ro.active.astype(float))
    return nx.mul(lp, -1.0 / B)


def actor_critic_losses(sample_ro, gamma, advantages=None, normalize="batch"):
    """Policy-gradient term with a constant advantage, and the critic's squared error.

    ``normalize`` divides both sums by the batch size or by the number of
    live steps in the sampled rollout.
    """
    if normalize not in ("batch", "steps"):
        raise ValueError(f"unknown rl normalization '{normalize}'")
    B = len(sample_ro.episodes) if normalize == "batch" else max(int(sample_ro.active.sum()), 1)
    act = sample_ro.active.astype(float)
    R = discounted_returns(sample_ro.rewards, sample_ro.active, gamma)
    V = np.stack([v.data for v in sample_ro.values])
    if advantages is None:
        advantages = R - V
    policy = nx.mul(chosen_log_prob_sum(sample_ro.log_probs, sample_ro.actions, act * advantages), -1.0 / B)
    value = None
    for t, v in enumerate(sample_ro.values):
        term = nx.tsum(nx.mul(nx.square(nx.sub(v, R[t])), act[t]))
        value = term if value is None else nx.add(value, term)
    return policy, nx.mul(value, 1.0 / B), advantages


def combined_loss(teacher_ro, sample_ro, il_weight, gamma, value_weight=0.5, advantages=None,
                  rl_normalize="batch"):
    il = imitation_loss(teacher_ro)
    rl, value, _ = actor_critic_losses(sample_ro, gamma, advantages, rl_normalize)
    total = nx.add(nx.add(nx.mul(il, il_weight), rl), nx.mul(value, value_weight))
    if not np.isfinite(total.data):
        raise nx.NonFiniteError("training loss is not finite")
    terms = LossTerms(total, il, rl, value, int(teacher_ro.active.sum()))
    terms._batch = len(teacher_ro.episodes)
    return terms


def train_step(agent, optimizer, batch, worlds, tc, rng):
    enc = agent.encode([e.token_ids for e in batch])
    teacher_ro = rollout(agent, batch, worlds, "teacher", enc=enc, max_steps=tc.max_steps,
                         success_distance=tc.success_distance)
    sample_ro = rollout(agent, batch, worlds, "sample", enc=enc, rng=rng, max_steps=tc.max_steps,
                        success_distance=tc.success_distance)
    terms = combined_loss(teacher_ro, sample_ro, tc.il_weight, tc.gamma, tc.value_weight,
                          rl_normalize=tc.rl_normalize)
    nx.backward(terms.total)
    optimizer.step(agent.store)
    return terms


# ------------------------------------------------------------------ checkpoints

def save_agent(path, agent, meta=None, optimizer=None, extra=None):
    tensors = agent.store.state_dict()
    if optimizer is not None:
        tensors.update(optimizer.state_arrays())
    meta = {"format": CHECKPOINT_FORMAT, "model": agent.config.to_dict(), **(meta or {})}
    if optimizer is not None:
        meta["adam_t"] = optimizer.t
    if extra:
        meta.update(extra)
    nx.save_checkpoint(path, tensors, meta)


def load_agent(path, expect_model=None):
    """Rebuild an Agent from a checkpoint; returns (agent, meta, optimizer arrays)."""
    from .agent import ModelConfig

    tensors, meta = nx.load_checkpoint(path)
    if meta.get("policy") == "teacher":
        return None, meta, {}
    cfg = ModelConfig.from_dict(meta["model"])
    if expect_model is not None:
        for key in ("vocab_size", "embed_dim", "enc_hidden", "dir_reps", "scene_dim", "object_dim"):
            a, b = getattr(cfg, key), getattr(expect_model, key)
            if a != b:
                raise nx.ShapeError(f"checkpoint {path} has {key}={a} but the config expects {key}={b}")
    agent = Agent(cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    agent.store.load_state_dict(params)
    agent.store.frozen_rows[f"{agent.encoder.prefix}.embed"] = 0
    opt = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    return agent, meta, opt


def save_teacher_checkpoint(path):
    """A parameter-free checkpoint that evaluates with the shortest-path teacher."""
    nx.save_checkpoint(path, {}, {"format": CHECKPOINT_FORMAT, "policy": "teacher"})


# ------------------------------------------------------------------ loop

@dataclass
class TrainResult:
    agent: Agent
    best_state: dict
    best_metrics: dict
    log: list = field(default_factory=list)
    iterations: int = 0


def _rng_state_json(rng):
    return json.loads(json.dumps(rng.bit_generator.state))


def train(cfg: ExperimentConfig, data: Dataset, out_dir=None, resume=None, log_fn=None,
          snapshot_every=None):
    """Train from scratch (or from a snapshot) and keep the best-unseen-SPL weights."""
    tc = cfg.train
    model_cfg = replace(cfg.model, vocab_size=len(data.vocab))
    agent = Agent(model_cfg, nx.ParameterStore(tc.seed))
    optimizer = nx.Adam(lr=tc.lr, clip_norm=tc.grad_clip)
    rng = np.random.default_rng([tc.seed, 1])
    eval_rng = np.random.default_rng([tc.seed, 2])
    seen_idx = np.sort(eval_rng.choice(len(data.train), min(tc.seen_eval_episodes, len(data.train)),
                                       replace=False))
    seen = [data.train[i] for i in seen_idx]
    splits = {"seen": seen, "unseen": data.unseen}
    iterations = math.ceil(tc.episodes / tc.batch_size)
    out_dir = Path(out_dir) if out_dir is not None else None
    start, best_spl, best_state, best_metrics, records = 0, -1.0, None, {}, []

    if resume is not None:
        agent, meta, opt_arrays = load_agent(resume)
        optimizer.load_state_arrays(opt_arrays, meta["adam_t"])
        rng.bit_generator.state = meta["rng_state"]
        start = int(meta["iteration"])
        best_spl = float(meta.get("best_spl", -1.0))
        best_metrics = meta.get("best_metrics", {})
        best_path = Path(resume).with_name("best.ckpt")
        if best_path.exists():
            best_agent, _, _ = load_agent(best_path)
            best_state = best_agent.store.state_dict()

    meta_base = {"experiment": cfg.to_dict(),
                 "ablation": {k: getattr(model_cfg, k) for k in
                              ("use_scene", "use_object", "use_edges", "use_language_graph")}}
    window = []
    for it in range(start, iterations):
        pick = rng.choice(len(data.train), size=min(tc.batch_size, len(data.train)), replace=False)
        batch = [data.train[i] for i in pick]
        try:
            terms = train_step(agent, optimizer, batch, data.worlds, tc, rng)
        except nx.NonFiniteError as exc:
            raise nx.NonFiniteError(f"training diverged at iteration {it + 1}: {exc}") from exc
        window.append(terms.scalars())
        done = it + 1
        if done % tc.eval_every == 0 or done == iterations:
            losses = {k: float(np.mean([w[k] for w in window])) for k in window[0]}
            window = []
            for split, eps in splits.items():
                if not eps:
                    continue
                _, summary = evaluate_suite(agent, eps, data.worlds, max_steps=tc.max_steps,
                                            d_th=tc.success_distance)
                rec = {"iteration": done, "split": split, "episodes": done * tc.batch_size,
                       **summary, **losses}
                records.append(rec)
                if log_fn:
                    log_fn(rec)
                if out_dir is not None:
                    with open(out_dir / "metrics.jsonl", "a") as fh:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
                if split == "unseen" and summary["SPL"] > best_spl:
                    best_spl = summary["SPL"]
                    best_state = agent.store.state_dict()
                    best_metrics = {"iteration": done, **summary}
                    if out_dir is not None:
                        save_agent(out_dir / "best.ckpt", agent, {**meta_base, "iteration": done,
                                                                   "metrics": summary})
            if out_dir is not None and (snapshot_every is None or done % snapshot_every == 0
                                        or done == iterations):
                save_agent(out_dir / "snapshot.ckpt", agent, {**meta_base, "iteration": done},
                           optimizer=optimizer,
                           extra={"rng_state": _rng_state_json(rng), "best_spl": best_spl,
                                  "best_metrics": best_metrics})
    if best_state is None:
        best_state = agent.store.state_dict()
    return TrainResult(agent, best_state, best_metrics, records, iterations)


def best_agent(result: TrainResult):
    agent = Agent(result.agent.config)
    agent.store.load_state_dict(result.best_state)
    return agent
