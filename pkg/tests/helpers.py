"""Small worlds, agents and loss fragments shared by several test files."""
from dataclasses import replace

import numpy as np

from lvgraph import numerics as nx
from lvgraph.agent import Agent, ModelConfig
from lvgraph.rollout import rollout
from lvgraph.synthworld import FeatureConfig, WorldConfig, default_vocabulary, generate_world, make_episode
from lvgraph.training import actor_critic_losses, combined_loss

TINY_FEATURES = FeatureConfig(n_views=12, scene_dim=3, object_dim=3, k_objects=2)
TINY_MODEL = ModelConfig(vocab_size=len(default_vocabulary()), embed_dim=3, enc_hidden=2, dir_reps=1,
                         scene_dim=3, object_dim=3)


def tiny_worlds(seed=0, n_worlds=2, n_viewpoints=10, features=TINY_FEATURES):
    wc = WorldConfig(n_viewpoints=n_viewpoints, features=features)
    return {f"t{seed}-{i}": generate_world(seed * 100 + i, wc, world_id=f"t{seed}-{i}") for i in range(n_worlds)}


def tiny_episodes(worlds, n_per_world=2, span=(1, 3), seed=0):
    return [make_episode(w, seed, span, index=i) for w in worlds.values() for i in range(n_per_world)]


def tiny_agent(seed=0, **overrides):
    return Agent(replace(TINY_MODEL, **overrides), nx.ParameterStore(seed))


def one_step_fragment(agent, episodes, worlds, seed=0, steps=1, il_weight=0.2, gamma=0.9):
    """Loss closure over a teacher rollout and a replayed sampled rollout.

    The sampled actions and the advantages are fixed from a first pass, so
    the closure is a deterministic function of the parameters only, the way
    the advantage enters the policy term as a constant during training.
    """
    rng = np.random.default_rng(seed)
    with nx.no_grad():
        enc = agent.encode([e.token_ids for e in episodes])
        sample = rollout(agent, episodes, worlds, "sample", enc=enc, rng=rng, max_steps=steps)
        _, _, adv = actor_critic_losses(sample, gamma)
    forced = sample.actions.copy()

    def fragment():
        enc = agent.encode([e.token_ids for e in episodes])
        t = rollout(agent, episodes, worlds, "teacher", enc=enc, max_steps=steps)
        s = rollout(agent, episodes, worlds, "forced", enc=enc, max_steps=steps, forced_actions=forced)
        return combined_loss(t, s, il_weight, gamma, advantages=adv).total

    return fragment


# acceptance verdict lines, printed by the conftest summary hook
VERDICTS = []


def verdict(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok
