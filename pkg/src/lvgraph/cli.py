"""Command line: genworld, train, eval, inspect, report, teacher-checkpoint.

Exit status is 0 on success, 1 for usage errors and 2 for runtime errors.
Relative paths resolve under $LVGRAPH_OUT when it is set, else the cwd.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import numerics as nx
from .config import ExperimentConfig
from .dataset import FILES, Dataset, build_dataset
from .evaluation import evaluate_suite
from .rollout import rollout

log = logging.getLogger("lvgraph")

OUT_ENV = "LVGRAPH_OUT"
ABLATION_FLAGS = {
    "no_graph_edges": "use_edges",
    "no_object": "use_object",
    "no_scene": "use_scene",
    "no_language_graph": "use_language_graph",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def out_root():
    return Path(os.environ.get(OUT_ENV, "."))


def resolve(path):
    p = Path(path)
    return p if p.is_absolute() else out_root() / p


def _prepare_dir(path, force, marker_files):
    path = resolve(path)
    if path.exists() and any((path / f).exists() for f in marker_files) and not force:
        raise FileExistsError(f"{path} already holds output; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    cfg = cfg.with_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, data=replace(cfg.data, seed=args.seed) if args.command == "genworld" else cfg.data,
                      train=replace(cfg.train, seed=args.seed))
    flags = {field: False for opt, field in ABLATION_FLAGS.items() if getattr(args, opt, False)}
    if flags:
        cfg = replace(cfg, model=replace(cfg.model, **flags))
    return cfg


def _emit(record):
    print(json.dumps(record, sort_keys=True), flush=True)


# ------------------------------------------------------------------ commands

def cmd_genworld(args):
    cfg = _load_config(args)
    out = _prepare_dir(args.out, args.force, FILES)
    data = build_dataset(cfg.data)
    data.save(out)
    cfg.save(out / "config.json")
    _emit({"command": "genworld", "out": str(out), "worlds": len(data.worlds),
           "train_episodes": len(data.train), "unseen_episodes": len(data.unseen)})
    return 0


def cmd_train(args):
    from .training import train

    data_dir = resolve(args.data)
    cfg = _load_config(args)
    if not args.config and (data_dir / "config.json").exists():
        # inherit the data section the worlds were generated with
        base = ExperimentConfig.load(data_dir / "config.json")
        cfg = replace(cfg, data=base.data)
    data = Dataset.load(data_dir)
    if args.resume:
        out = resolve(args.out)
        out.mkdir(parents=True, exist_ok=True)
    else:
        out = _prepare_dir(args.out, args.force, ("snapshot.ckpt", "best.ckpt", "metrics.jsonl"))
        if (out / "metrics.jsonl").exists():
            (out / "metrics.jsonl").unlink()
    cfg.save(out / "config.json")
    result = train(cfg, data, out_dir=out, resume=resolve(args.resume) if args.resume else None,
                   log_fn=lambda rec: _emit({"command": "train", **rec}),
                   snapshot_every=args.snapshot_every)
    _emit({"command": "train", "out": str(out), "iterations": result.iterations,
           "best": result.best_metrics})
    return 0


def _load_policy(path, data):
    from .training import load_agent

    agent, meta, _ = load_agent(resolve(path))
    if agent is not None and agent.config.vocab_size != len(data.vocab):
        raise nx.ShapeError(f"checkpoint {path} has vocab_size={agent.config.vocab_size} "
                            f"but the dataset vocabulary has vocab_size={len(data.vocab)}")
    return agent, meta


def _split(data, name):
    if name == "train":
        return data.train
    if name == "unseen":
        return data.unseen
    raise KeyError(f"unknown split '{name}'")


def cmd_eval(args):
    data_dir = resolve(args.data)
    data = Dataset.load(data_dir)
    cfg = ExperimentConfig.load(data_dir / "config.json") if (data_dir / "config.json").exists() \
        else ExperimentConfig()
    cfg = cfg.with_overrides(args.set)
    agent, meta = _load_policy(args.checkpoint, data)
    policy = args.policy or ("teacher" if agent is None else "argmax")
    if policy == "argmax" and agent is None:
        raise ValueError("greedy evaluation needs a trained checkpoint")
    out = resolve(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    summaries = {}
    rows_all = []
    for split in args.split:
        rows, summary = evaluate_suite(agent, _split(data, split), data.worlds, policy=policy,
                                       max_steps=cfg.train.max_steps, d_th=cfg.train.success_distance,
                                       seed=args.seed)
        summaries[split] = summary
        rows_all.extend({"split": split, **r} for r in rows)
    with open(out, "w") as fh:
        for r in rows_all:
            fh.write(json.dumps({"type": "episode", **r}, sort_keys=True) + "\n")
        for split, s in summaries.items():
            n = sum(1 for r in rows_all if r["split"] == split)
            fh.write(json.dumps({"type": "summary", "split": split, "episodes": n, **s}, sort_keys=True) + "\n")
    for split, s in summaries.items():
        _emit({"command": "eval", "split": split, "policy": policy, **s})
    return 0


def inspect_episode(agent, episode, worlds, vocab, max_steps=12, d_th=1.0):
    """Greedy rollout of one episode, returned as header + per-step records."""
    with nx.no_grad():
        ro = rollout(agent, [episode], worlds, mode="argmax", max_steps=max_steps,
                     success_distance=d_th, record=True)
    traj = ro.trajectories[0]
    header = {"type": "header", "episode_id": episode.episode_id, "world_id": episode.world_id,
              "tokens": vocab.decode(episode.token_ids) if vocab is not None else list(episode.tokens),
              "start": episode.start, "goal": episode.goal, "reference": list(episode.path),
              "trajectory": list(traj), "steps": int(ro.steps[0])}
    records = [header]
    pos = episode.start
    for t, step in enumerate(ro.records):
        rec = step[0]
        if not rec["active"]:
            break
        rec = {"type": "step", "step": t + 1, "position": int(pos), **rec}
        del rec["active"]
        records.append(rec)
        if not rec["stop"]:
            pos = rec["candidates"][rec["action"]]
    return records


def _find_episode(data, episode_id):
    for e in data.train + data.unseen:
        if e.episode_id == episode_id:
            return e
    raise KeyError(f"episode '{episode_id}' not found")


def cmd_inspect(args):
    data_dir = resolve(args.data)
    data = Dataset.load(data_dir)
    agent, _ = _load_policy(args.checkpoint, data)
    if agent is None:
        raise ValueError("the teacher pseudo-checkpoint has no attention to inspect")
    cfg = ExperimentConfig.load(data_dir / "config.json") if (data_dir / "config.json").exists() \
        else ExperimentConfig()
    episode = _find_episode(data, args.episode)
    records = inspect_episode(agent, episode, data.worlds, data.vocab, cfg.train.max_steps,
                              cfg.train.success_distance)
    lines = [json.dumps(r, sort_keys=True) for r in records]
    if args.out:
        out = resolve(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    if args.figure:
        from .plotting import attention_heatmap

        attention_heatmap(records, resolve(args.figure))
    return 0


def cmd_report(args):
    """Tables and figures for a training run directory."""
    from . import plotting

    run = resolve(args.run)
    out = resolve(args.out) if args.out else run / "report"
    out.mkdir(parents=True, exist_ok=True)
    records = plotting.read_jsonl(run / "metrics.jsonl")
    if not records:
        raise ValueError(f"{run / 'metrics.jsonl'} is empty")
    keys = ["iteration", "episodes", "split", "SR", "SPL", "NE", "TL", "nDTW", "SDTW", "CLS",
            "loss", "il_per_step", "rl", "value"]
    with open(out / "curves.tsv", "w") as fh:
        fh.write("\t".join(keys) + "\n")
        for r in records:
            fh.write("\t".join(f"{r[k]:.6g}" if isinstance(r.get(k), float) else str(r.get(k, ""))
                               for k in keys) + "\n")
    made = [plotting.training_curves(records, out / "training_curves.png")]
    if args.data and args.episode:
        data = Dataset.load(resolve(args.data))
        agent, _ = _load_policy(args.checkpoint or run / "best.ckpt", data)
        dump = inspect_episode(agent, _find_episode(data, args.episode), data.worlds, data.vocab)
        (out / "attention.jsonl").write_text("\n".join(json.dumps(r, sort_keys=True) for r in dump) + "\n")
        made.append(plotting.attention_heatmap(dump, out / "attention.png"))
        made.append(plotting.action_probabilities(dump, out / "action_probs.png"))
    last = {}
    for r in records:
        last[r["split"]] = r
    _emit({"command": "report", "out": str(out), "figures": [str(p) for p in made],
           "final": {s: {m: r[m] for m in ("SR", "SPL", "nDTW", "SDTW", "CLS")} for s, r in last.items()}})
    return 0


def cmd_teacher_checkpoint(args):
    from .training import save_teacher_checkpoint

    out = resolve(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_teacher_checkpoint(out)
    _emit({"command": "teacher-checkpoint", "out": str(out)})
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="lvgraph", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="experiment config (JSON)")
            sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        sp.add_argument("--force", action="store_true", help="overwrite existing output")

    g = sub.add_parser("genworld", help="generate worlds and episode files")
    common(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_genworld)

    t = sub.add_parser("train", help="train an agent")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="snapshot checkpoint to continue from")
    t.add_argument("--snapshot-every", type=int, default=None)
    for opt in ABLATION_FLAGS:
        t.add_argument("--" + opt.replace("_", "-"), dest=opt, action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", action="append", choices=("train", "unseen"))
    e.add_argument("--policy", choices=("argmax", "teacher", "random"))
    e.add_argument("--seed", type=int, default=0, help="rng seed for the random policy")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("inspect", help="dump attention for one episode")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--episode", required=True)
    i.add_argument("--out")
    i.add_argument("--figure", help="also render the language attention heatmap here")
    i.set_defaults(fn=cmd_inspect)

    r = sub.add_parser("report", help="tables and figures for a training run")
    r.add_argument("--run", required=True)
    r.add_argument("--out")
    r.add_argument("--data")
    r.add_argument("--episode")
    r.add_argument("--checkpoint")
    r.set_defaults(fn=cmd_report)

    tc = sub.add_parser("teacher-checkpoint", help="write the shortest-path oracle pseudo-checkpoint")
    tc.add_argument("--out", required=True)
    tc.add_argument("--force", action="store_true")
    tc.set_defaults(fn=cmd_teacher_checkpoint)
    return p


RUNTIME_ERRORS = (FileNotFoundError, FileExistsError, KeyError, ValueError, nx.ShapeError,
                  nx.NonFiniteError, OSError, IndexError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if getattr(args, "split", "x") is None:
            args.split = ["unseen"]
    except UsageError as exc:
        print(f"lvgraph: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:      # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except RUNTIME_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lvgraph: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
