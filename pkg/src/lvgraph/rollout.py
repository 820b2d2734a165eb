"""Batched episode rollouts under teacher, sampled, greedy or random control."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .synthworld import STOP, observe, teacher_action

MODES = ("teacher", "sample", "argmax", "random", "forced")


@dataclass
class Rollout:
    episodes: list
    mode: str
    trajectories: list                  # viewpoint ids per episode, start included
    actions: np.ndarray                 # [T, B] slot index taken (-1 once finished)
    teacher: np.ndarray                 # [T, B] teacher slot index
    active: np.ndarray                  # [T, B]
    rewards: np.ndarray                 # [T, B]
    n_candidates: np.ndarray            # [T, B]
    probs: list = field(default_factory=list)       # per step [B, N_t]
    log_probs: list = field(default_factory=list)   # per step Tensor [B, N_t]
    values: list = field(default_factory=list)      # per step Tensor [B]
    records: list = field(default_factory=list)     # optional per-step attention dumps

    @property
    def steps(self):
        return self.active.sum(axis=0)

    @property
    def horizon(self):
        return self.active.shape[0]


def reward(world, prev, nxt, goal, terminal, success_distance):
    """Decrease in hop distance to the goal, plus +/-2 when the episode ends."""
    r = float(world.hops[prev, goal] - world.hops[nxt, goal])
    if terminal:
        r += 2.0 if world.distance(nxt, goal) <= success_distance else -2.0
    return r


def rollout(agent, episodes, worlds, mode="argmax", enc=None, rng=None, max_steps=12,
            success_distance=1.0, record=False, forced_actions=None):
    """Run a batch of episodes to completion.

    ``agent`` may be None for the teacher and random modes.  In teacher mode
    the agent moves with the teacher action while still producing p_t.
    ``forced`` replays the slot indices in ``forced_actions`` ([T, B]).
    """
    if mode not in MODES:
        raise ValueError(f"unknown rollout mode '{mode}'")
    if agent is None and mode not in ("teacher", "random"):
        raise ValueError(f"mode '{mode}' needs a model")
    if rng is None and mode in ("sample", "random"):
        raise ValueError(f"mode '{mode}' needs an rng")
    B = len(episodes)
    ws = [worlds[e.world_id] for e in episodes]
    pos = [e.start for e in episodes]
    heading = [e.start_heading for e in episodes]
    done = np.zeros(B, dtype=bool)
    traj = [[e.start] for e in episodes]
    T = max_steps
    actions = np.full((T, B), -1, dtype=np.int64)
    teacher = np.full((T, B), -1, dtype=np.int64)
    active = np.zeros((T, B), dtype=bool)
    rewards = np.zeros((T, B))
    ncand = np.zeros((T, B), dtype=np.int64)
    out = Rollout(episodes, mode, traj, actions, teacher, active, rewards, ncand)
    if agent is not None:
        if enc is None:
            enc = agent.encode([e.token_ids for e in episodes])
        state = agent.initial_state(B)
    dir_reps = agent.config.dir_reps if agent is not None else 1
    from .agent import featurize

    last_t = 0
    for t in range(T):
        obs_list = [observe(ws[b], pos[b], heading[b]) for b in range(B)]
        ob = featurize(obs_list, dir_reps)
        n = ob.n_candidates
        ta = np.array([teacher_action(ws[b], pos[b], episodes[b].goal) for b in range(B)])
        ta = np.where(ta == STOP, n, ta)
        if agent is not None:
            step_out = agent.step(state, ob, enc)
            p = step_out.probs
            out.probs.append(p)
            out.log_probs.append(step_out.log_probs)
            out.values.append(step_out.value)
        if mode == "teacher":
            a = ta
        elif mode == "argmax":
            a = np.argmax(p, axis=1)
        elif mode == "sample":
            a = np.array([rng.choice(p.shape[1], p=p[b] / p[b].sum()) for b in range(B)])
        elif mode == "random":
            a = np.array([int(rng.integers(n[b] + 1)) for b in range(B)])
        else:
            a = np.asarray(forced_actions[t], dtype=np.int64)
            a = np.where(a < 0, n, a)
        live = ~done
        active[t] = live
        teacher[t] = np.where(live, ta, -1)
        ncand[t] = n
        actions[t] = np.where(live, a, -1)
        if record and agent is not None:
            out.records.append(_dump_step(step_out, ob, a, live))
        for b in np.flatnonzero(live):
            stop = a[b] == n[b]
            terminal = stop or t + 1 == T
            if stop:
                nxt, hd = pos[b], heading[b]
            else:
                nxt = ob.candidate_ids[b][a[b]]
                hd = ws[b].bearing(pos[b], nxt)
                traj[b].append(nxt)
            rewards[t, b] = reward(ws[b], pos[b], nxt, episodes[b].goal, terminal, success_distance)
            pos[b], heading[b] = nxt, hd
            if terminal:
                done[b] = True
        last_t = t
        if done.all():
            break
        if agent is not None:
            state = agent.next_state(state, step_out, np.minimum(a, ob.mask.shape[1] - 1), ob)
    H = last_t + 1
    out.actions, out.teacher, out.active = actions[:H], teacher[:H], active[:H]
    out.rewards, out.n_candidates = rewards[:H], ncand[:H]
    return out


def _dump_step(step_out, ob, actions, live):
    lc = step_out.contexts
    rows = []
    for b in range(len(actions)):
        n = int(ob.n_candidates[b])
        rec = {
            "active": bool(live[b]),
            "language": {k: v.data[b].tolist() for k, v in lc.weights.items()},
            "global_view": step_out.global_weights.data[b].tolist(),
            "action_probs": step_out.probs[b, :n + 1].tolist(),
            "action": int(actions[b]),
            "stop": bool(actions[b] == n),
            "candidates": [int(c) for c in ob.candidate_ids[b]],
        }
        if step_out.nodes.object_weights is not None:
            rec["objects"] = step_out.nodes.object_weights.data[b, :n].tolist()
        rows.append(rec)
    return rows


def discounted_returns(rewards, active, gamma):
    """R_t = r_t + gamma * R_{t+1}, restricted to each episode's live steps."""
    R = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1])
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = np.where(active[t], rewards[t] + gamma * running, 0.0)
        R[t] = running
    return R


def chosen_log_prob_sum(log_probs, actions, weights):
    """sum_t sum_b weights[t, b] * log p_t[b, actions[t, b]] as a scalar tensor."""
    total = None
    for t, lp in enumerate(log_probs):
        w = weights[t]
        if not np.any(w):
            continue
        a = np.where(actions[t] >= 0, actions[t], 0)
        term = nx.tsum(nx.mul(nx.take_along(lp, a), w))
        total = term if total is None else nx.add(total, term)
    return total if total is not None else nx.Tensor(0.0)
