"""Navigation metrics: TL, NE, SR, SPL, nDTW, SDTW and CLS."""
from __future__ import annotations

import json
import math

import numpy as np

from . import numerics as nx
from .rollout import rollout

METRICS = ("TL", "NE", "SR", "SPL", "nDTW", "SDTW", "CLS")


def _points(path, world=None):
    if world is not None:
        path = world.positions[list(path)]
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("a trajectory needs at least one point")
    return pts


def path_length(points):
    points = _points(points)
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(points, axis=0).T)))


def basic_metrics(P, R, d_th):
    """(TL, NE, SR) for point sequences; success is NE <= d_th."""
    P, R = _points(P), _points(R)
    tl = path_length(P)
    ne = float(np.hypot(*(P[-1] - R[-1])))
    return tl, ne, float(ne <= d_th)


def spl(success, tl, shortest):
    if shortest <= 0.0:
        return float(success)
    return float(success) * shortest / max(tl, shortest)


def dtw(P, R):
    """Dynamic time warping with Euclidean cost, both endpoints matched."""
    P, R = _points(P), _points(R)
    cost = np.hypot(P[:, None, 0] - R[None, :, 0], P[:, None, 1] - R[None, :, 1])
    n, m = cost.shape
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = cost[i - 1, j - 1] + min(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1])
    return float(D[n, m])


def ndtw_sdtw(P, R, success, d_th):
    nd = math.exp(-dtw(P, R) / (len(_points(R)) * d_th))
    return nd, float(success) * nd


def cls(P, R, d_th):
    """Coverage weighted by length score."""
    P, R = _points(P), _points(R)
    d = np.hypot(R[:, None, 0] - P[None, :, 0], R[:, None, 1] - P[None, :, 1]).min(axis=1)
    pc = float(np.mean(np.exp(-d / d_th)))
    ref_len = path_length(R)
    if ref_len == 0.0:
        return pc
    epl = pc * ref_len
    ls = epl / (epl + abs(path_length(P) - epl))
    return pc * ls


def episode_metrics(world, predicted, episode, d_th):
    P = world.positions[predicted]
    R = world.positions[episode.path]
    tl, ne, sr = basic_metrics(P, R, d_th)
    nd, sd = ndtw_sdtw(P, R, sr, d_th)
    return {
        "TL": tl, "NE": ne, "SR": sr,
        "SPL": spl(sr, tl, float(world.geodesic[episode.start, episode.goal])),
        "nDTW": nd, "SDTW": sd, "CLS": cls(P, R, d_th),
    }


def summarize(rows):
    if not rows:
        return {m: float("nan") for m in METRICS}
    return {m: float(np.mean([r[m] for r in rows])) for m in METRICS}


def evaluate_suite(agent, episodes, worlds, policy="argmax", max_steps=12, d_th=1.0,
                   batch_size=64, seed=0):
    """Per-episode metric rows plus split means.

    ``policy`` is ``argmax`` (greedy model), ``teacher`` or ``random``.
    """
    missing = {e.world_id for e in episodes} - set(worlds)
    if missing:
        raise KeyError(f"episodes reference unknown worlds: {sorted(missing)}")
    rng = np.random.default_rng(seed)
    rows = []
    with nx.no_grad():
        for i in range(0, len(episodes), batch_size):
            chunk = episodes[i:i + batch_size]
            ro = rollout(agent if policy == "argmax" else None, chunk, worlds, mode=policy, rng=rng,
                         max_steps=max_steps, success_distance=d_th)
            for e, traj in zip(chunk, ro.trajectories):
                row = {"episode_id": e.episode_id, "world_id": e.world_id, "trajectory": list(traj)}
                row.update(episode_metrics(worlds[e.world_id], traj, e, d_th))
                rows.append(row)
    return rows, summarize(rows)


def write_metric_table(path, rows, summary, split=None):
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps({"type": "episode", **({"split": split} if split else {}), **r},
                                sort_keys=True) + "\n")
        fh.write(json.dumps({"type": "summary", **({"split": split} if split else {}),
                             "episodes": len(rows), **summary}, sort_keys=True) + "\n")
