"""Command-line entry point: ``otdeception {train,eval,table,pdec-trace,list-presets}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .env import DeceptionEnv
from .errors import DeceptionError
from .harness import (
    PRESETS,
    ExperimentSpec,
    list_presets,
    load_config,
    pdec_csv,
    run_experiment,
    run_pdec_trace,
    stationary_config,
)
from .learners import Agents, Learner, evaluate, load_checkpoint, save_checkpoint, train


def _spec_from_args(args, extra: dict) -> ExperimentSpec:
    fields = dict(extra)
    for key in ("mode", "scenario", "learner", "agents", "episodes", "eval_episodes"):
        value = getattr(args, key, None)
        if value is not None:
            fields[key] = value
    if args.seed is not None:
        fields["seeds"] = [args.seed]
    fields.setdefault("name", "cli")
    return ExperimentSpec(**fields)


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["cyber_only", "cyber_physical", "cyber_physical_llm"])
    p.add_argument("--scenario", choices=["none", "congestion"])
    p.add_argument("--learner", choices=[l.value for l in Learner])
    p.add_argument("--agents", choices=[a.value for a in Agents])
    p.add_argument("--episodes", type=int)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)


def cmd_train(args, env_cfg, hyper, extra) -> int:
    spec = _spec_from_args(args, extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = spec.env_config(env_cfg)
    for seed in spec.seeds:
        res = train(cfg, spec.learner, spec.agents, spec.episodes, seed, hyper)
        path = out / f"checkpoint_seed{seed}.json"
        meta = {"learner": spec.learner.value, "agents": spec.agents.value, "seed": seed, "env": cfg.to_dict()}
        save_checkpoint(path, res.agents, meta)
        with open(out / f"train_curve_seed{seed}.csv", "w") as fh:
            fh.write("episode,length,reward,outcome\n")
            for r in res.curve:
                fh.write(f"{r['episode']},{r['length']},{r['reward']:.6f},{r['outcome']}\n")
        print(f"seed {seed}: {len(res.curve)} episodes -> {path}")
    return 0


def cmd_eval(args, env_cfg, hyper, extra) -> int:
    agents, meta = load_checkpoint(args.checkpoint)
    learner = args.learner or meta.get("learner", "ppo")
    kind = args.agents or meta.get("agents", "single")
    cfg = env_cfg
    if args.mode or args.scenario:
        cfg = replace(cfg, **{k: v for k, v in (("mode", args.mode), ("scenario", args.scenario)) if v})
    env = DeceptionEnv(cfg)
    env.record_trace = True
    seed = args.seed if args.seed is not None else meta.get("seed", 0)
    rows = evaluate(env, agents, learner, kind, args.eval_episodes or 30, seed, greedy=not args.sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w") as fh:
        fh.write("episode,length,reward,outcome\n")
        for r in rows:
            fh.write(f"{r['episode']},{r['length']},{r['reward']:.6f},{r['outcome']}\n")
    env.save_trace(out / "last_episode_trace.jsonl")
    n = len(rows)
    print(f"mean length {sum(r['length'] for r in rows) / n:.3f}  mean reward {sum(r['reward'] for r in rows) / n:.3f}")
    return 0


def cmd_table(args, env_cfg, hyper, extra) -> int:
    if args.preset not in PRESETS:
        print(f"unknown preset {args.preset!r}; see list-presets", file=sys.stderr)
        return 2
    overrides = {k: v for k, v in extra.items() if k in ("episodes", "eval_episodes", "seeds")}
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.eval_episodes is not None:
        overrides["eval_episodes"] = args.eval_episodes
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    elif args.seeds:
        overrides["seeds"] = tuple(args.seeds)
    if args.sample:
        overrides["greedy"] = False
    table = run_experiment(PRESETS[args.preset], env_cfg, hyper, out=Path(args.out) / args.preset, overrides=overrides)
    sys.stdout.write(table.to_csv())
    return 0


def cmd_pdec(args, env_cfg, hyper, extra) -> int:
    cfg = stationary_config(env_cfg, updates=not args.frozen)
    rows = run_pdec_trace(cfg, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = pdec_csv(rows)
    (out / "pdec_trace.csv").write_text(text)
    with open(out / "pdec_trace.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return 0


def cmd_list(args, env_cfg, hyper, extra) -> int:
    for name, title in list_presets():
        print(f"{name:8s} {title}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otdeception", description=__doc__)
    parser.add_argument("--config", help="JSON config document")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", default="runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a learner and write checkpoints and curves")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    _add_spec_flags(p)
    p.add_argument("--sample", action="store_true", help="sample actions instead of greedy")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("table", help="run a preset result table")
    p.add_argument("preset")
    p.add_argument("--episodes", type=int)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--sample", action="store_true", help="sample actions instead of greedy")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("pdec-trace", help="per-step perplexity and P_dec for one LLM-mode episode")
    p.add_argument("--frozen", action="store_true", help="disable datastore updates")
    p.set_defaults(func=cmd_pdec)

    p = sub.add_parser("list-presets", help="enumerate preset tables")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        env_cfg, hyper, extra = load_config(args.config)
        return args.func(args, env_cfg, hyper, extra)
    except DeceptionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
