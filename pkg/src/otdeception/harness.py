"""Experiment specs, preset result tables and the P_dec trace runner."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .env import DeceptionEnv, EnvConfig, Mode, Outcome
from .errors import ConfigError
from .grid_sim import GridConfig
from .learners import Agents, Hyper, Learner, evaluate, save_checkpoint, train
from .net_sim import Scenario, shortest_path_routing

OUTCOMES = tuple(o.value for o in Outcome)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    mode: Mode = Mode.CYBER_ONLY
    scenario: Scenario = Scenario.NONE
    learner: Learner = Learner.PPO
    agents: Agents = Agents.SINGLE
    episodes: int = 400
    eval_episodes: int = 30
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    greedy: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
            object.__setattr__(self, "scenario", Scenario(self.scenario))
            object.__setattr__(self, "learner", Learner(self.learner))
            object.__setattr__(self, "agents", Agents(self.agents))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")

    def env_config(self, base: EnvConfig | None = None) -> EnvConfig:
        return replace(base or EnvConfig(), mode=self.mode, scenario=self.scenario)


@dataclass(frozen=True)
class Preset:
    name: str
    title: str
    rows: tuple[tuple[str, ExperimentSpec], ...]


def _row(label: str, **kw) -> tuple[str, ExperimentSpec]:
    return label, ExperimentSpec(name=label, **kw)


_LEARNER_ROWS = (("Random", Learner.RANDOM), ("PPO", Learner.PPO), ("A2C (Norm. Adv)", Learner.A2C_NORM), ("A2C", Learner.A2C))


def _learner_table(name: str, title: str, **kw) -> Preset:
    return Preset(name, title, tuple(_row(label, learner=learner, **kw) for label, learner in _LEARNER_ROWS))


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        _learner_table("table1", "single agent, cyber only"),
        _learner_table("table2", "single agent, cyber only, congestion", scenario=Scenario.CONGESTION),
        _learner_table("table3", "multi agent, cyber only", agents=Agents.MULTI),
        _learner_table("table4", "multi agent, cyber only, congestion", agents=Agents.MULTI, scenario=Scenario.CONGESTION),
        _learner_table("table5", "single agent, cyber-physical", mode=Mode.CYBER_PHYSICAL),
        Preset(
            "table6",
            "cyber vs cyber-physical vs LLM-coupled",
            (
                _row("Single (C)", mode=Mode.CYBER_ONLY),
                _row("Multi-Agent (C)", mode=Mode.CYBER_ONLY, agents=Agents.MULTI),
                _row("Single-Agent (CP)", mode=Mode.CYBER_PHYSICAL),
                _row("RL + LLM (CP)", mode=Mode.CYBER_PHYSICAL_LLM),
            ),
        ),
    )
}


def list_presets() -> list[tuple[str, str]]:
    return [(p.name, p.title) for p in PRESETS.values()] + [("pdec", "per-step perplexity and P_dec trace")]


# --- metrics -------------------------------------------------------------------


@dataclass
class MetricsRow:
    label: str
    spec: ExperimentSpec
    episodes: list[dict] = field(default_factory=list)  # evaluation rows tagged with seed

    def _per_seed(self, fn) -> np.ndarray:
        return np.array([fn([e for e in self.episodes if e["seed"] == s]) for s in self.spec.seeds])

    def stats(self, max_steps: int) -> dict[str, Any]:
        length = self._per_seed(lambda es: np.mean([e["length"] for e in es]))
        reward = self._per_seed(lambda es: np.mean([e["reward"] for e in es]))
        # steps to deception_success; episodes that never got there count as max_steps
        success = self._per_seed(
            lambda es: np.mean([e["length"] if e["outcome"] == Outcome.DECEPTION_SUCCESS.value else max_steps for e in es])
        )
        counts = Counter(e["outcome"] for e in self.episodes)
        n = len(self.episodes)
        return {
            "length_mean": float(length.mean()),
            "length_std": float(length.std()),
            "reward_mean": float(reward.mean()),
            "reward_std": float(reward.std()),
            "success_steps_mean": float(success.mean()),
            "success_steps_std": float(success.std()),
            **{f"frac_{o}": counts.get(o, 0) / n for o in OUTCOMES},
            "n_eval": n,
        }


@dataclass
class MetricsTable:
    name: str
    rows: list[MetricsRow]
    max_steps: int = 100

    COLUMNS = (
        "label", "mode", "scenario", "learner", "agents", "episodes", "n_eval",
        "length_mean", "length_std", "reward_mean", "reward_std",
        "success_steps_mean", "success_steps_std",
    ) + tuple(f"frac_{o}" for o in OUTCOMES)

    def records(self) -> list[dict]:
        out = []
        for row in self.rows:
            s = row.spec
            rec = {
                "label": row.label,
                "mode": s.mode.value,
                "scenario": s.scenario.value,
                "learner": s.learner.value,
                "agents": s.agents.value,
                "episodes": s.episodes,
                **row.stats(self.max_steps),
            }
            out.append(rec)
        return out

    def row(self, label: str) -> dict:
        for rec in self.records():
            if rec["label"] == label:
                return rec
        raise KeyError(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for rec in self.records():
            writer.writerow([_fmt(rec[c]) for c in self.COLUMNS])
        return buf.getvalue()


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_curve(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("episode", "length", "reward", "outcome"))
        for r in rows:
            writer.writerow((r["episode"], r["length"], f"{r['reward']:.6f}", r["outcome"]))


def run_spec(
    spec: ExperimentSpec,
    base: EnvConfig | None = None,
    hyper: Hyper = Hyper(),
    out: Path | None = None,
    label: str | None = None,
) -> MetricsRow:
    """Train and evaluate one spec over all its seeds."""
    label = label or spec.name
    row = MetricsRow(label, spec)
    env_cfg = spec.env_config(base)
    for seed in spec.seeds:
        env = DeceptionEnv(env_cfg)
        res = train(env_cfg, spec.learner, spec.agents, spec.episodes, seed, hyper, env=env)
        env.record_trace = out is not None
        evals = evaluate(env, res.agents, spec.learner, spec.agents, spec.eval_episodes, seed, greedy=spec.greedy)
        row.episodes.extend({"seed": seed, **e} for e in evals)
        if out is not None:
            d = out / _slug(label) / f"seed{seed}"
            d.mkdir(parents=True, exist_ok=True)
            _write_curve(d / "train_curve.csv", res.curve)
            _write_curve(d / "eval.csv", evals)
            save_checkpoint(d / "checkpoint.json", res.agents, {"spec": _spec_dict(spec), "seed": seed})
            env.save_trace(d / "last_eval_trace.jsonl")
    return row


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label.lower()).strip("_")


def _spec_dict(spec: ExperimentSpec) -> dict:
    d = asdict(spec)
    for k in ("mode", "scenario", "learner", "agents"):
        d[k] = getattr(spec, k).value
    d["seeds"] = list(spec.seeds)
    return d


def run_experiment(
    spec: ExperimentSpec | Preset,
    base: EnvConfig | None = None,
    hyper: Hyper = Hyper(),
    out: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> MetricsTable:
    """Run a single spec or every row of a preset; writes ``table.csv`` under ``out``."""
    rows = spec.rows if isinstance(spec, Preset) else ((spec.name, spec),)
    if overrides:
        rows = tuple((label, replace(s, **overrides)) for label, s in rows)
    name = spec.name
    out_dir = Path(out) if out is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics = [run_spec(s, base, hyper, out_dir, label) for label, s in rows]
    table = MetricsTable(name, metrics, (base or EnvConfig()).max_steps)
    if out_dir is not None:
        (out_dir / "table.csv").write_text(table.to_csv())
    return table


# --- P_dec trace ------------------------------------------------------------------


def stationary_config(base: EnvConfig | None = None, updates: bool = True) -> EnvConfig:
    """LLM mode on a feeder with nothing to restore, so the true answers never change."""
    base = base or EnvConfig()
    grid = GridConfig(base.grid.n_critical, 0, base.grid.compromise_outages)
    return replace(
        base,
        mode=Mode.CYBER_PHYSICAL_LLM,
        grid=grid,
        honeypot=replace(base.honeypot, datastore_updates=updates),
    )


def run_pdec_trace(config: EnvConfig | None = None, seed: int = 0, max_steps: int | None = None) -> list[dict]:
    """Per-step (step, score_input, p_dec) for one episode that routes the attacker to a honeypot.

    With ``stationary_config`` the attacker only sends class-0 polls and the
    feeder never changes, so a learning honeypot should only get better.
    """
    cfg = config or stationary_config()
    if cfg.mode is not Mode.CYBER_PHYSICAL_LLM:
        raise ConfigError("pdec trace requires mode cyber_physical_llm")
    if max_steps is not None:
        cfg = replace(cfg, max_steps=max_steps)
    env = DeceptionEnv(cfg)
    env.reset(seed)
    forwarding = shortest_path_routing(env.topology, env.topology.pots[0]).forwarding
    env.pdec_log = []
    while True:
        _, _, term, trunc, _ = env.step_multi(list(forwarding))
        if term or trunc:
            break
    return [{"step": r["step"], "score_input": r["score_input"], "p_dec": r["p_dec"]} for r in env.pdec_log]


def pdec_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("step", "score_input", "p_dec"))
    for r in rows:
        writer.writerow((r["step"], f"{r['score_input']:.6f}", f"{r['p_dec']:.6f}"))
    return buf.getvalue()


def load_config(path: str | Path | None) -> tuple[EnvConfig, Hyper, dict]:
    """Read the JSON config document: ``{"env": {...}, "learner": {...}, "experiment": {...}}``."""
    if path is None:
        return EnvConfig(), Hyper(), {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    env = EnvConfig.from_dict(doc.get("env", {}))
    try:
        hyper = Hyper(**doc.get("learner", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return env, hyper, doc.get("experiment", {})
