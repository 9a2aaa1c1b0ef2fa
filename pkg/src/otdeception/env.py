"""Rerouting MDP: observations, single/multi-agent actions, rewards, episodes.

One step:

1. apply the routing action(s);
2. the attacker digests last step's answers and emits this step's packet;
3. attacker and benign packets are routed through the fabric;
4. real RTUs or honeypots answer; honeypot realism (P_dec) is scored and,
   in LLM mode, the honeypot datastore is updated;
5. the feeder restores one bus if the attacker was contained;
6. congestion is redrawn for the next step and the reward is computed.

Honeypots (and their datastores) persist across ``reset`` calls so the
host-level model keeps improving over training, as in the outer loop of the
integrated network-host deception procedure.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .adversary import (
    AttackerConfig,
    AttackerState,
    ResponseObservation,
    Stage,
    attacker_step,
    initial_attacker,
    trace_record,
)
from .dnp3 import Dnp3Message, Function, validate_response
from .errors import ConfigError
from .grid_sim import GridConfig, GridState, apply_compromise, init_grid, restoration_tick
from .net_sim import (
    Fate,
    NodeKind,
    PacketKind,
    PacketRecord,
    RoutingState,
    Scenario,
    Topology,
    TopologyConfig,
    build_topology,
    congestion_update,
    route_step,
    shortest_path_routing,
)
from .outstation import RealRtu, ground_truth_response, split_buses
from .personality import Honeypot, deception_probability

N_FEATURES = 4


class Mode(str, enum.Enum):
    CYBER_ONLY = "cyber_only"
    CYBER_PHYSICAL = "cyber_physical"
    CYBER_PHYSICAL_LLM = "cyber_physical_llm"

    @property
    def physical(self) -> bool:
        return self is not Mode.CYBER_ONLY


class Outcome(str, enum.Enum):
    REAL_RTU_DISRUPTED = "real_rtu_disrupted"
    DECEPTION_SUCCESS = "deception_success"
    ATTACKER_DISENGAGED = "attacker_disengaged"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class RewardConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.5
    gamma: float = 0.99
    goal_bonus: float = 20.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("reward weights must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ConfigError("discount must lie in (0, 1]")


@dataclass(frozen=True)
class HoneypotConfig:
    window: int = 512
    order: int = 3
    k: float = 0.1
    score_mode: str = "cross_entropy"
    # realism of a static (non-learning) honeypot, fed through the P_dec map
    static_score_input: float = 2.0
    datastore_updates: bool = True


@dataclass(frozen=True)
class EnvConfig:
    mode: Mode = Mode.CYBER_ONLY
    scenario: Scenario = Scenario.NONE
    reward: RewardConfig = RewardConfig()
    window: int = 5
    max_steps: int = 100
    drop_range: tuple[float, float] = (0.05, 0.3)
    link_capacity: float = 4.0
    llm_coupling: bool | None = None
    topology: TopologyConfig = TopologyConfig()
    grid: GridConfig = GridConfig()
    attacker: AttackerConfig = AttackerConfig()
    honeypot: HoneypotConfig = HoneypotConfig()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.window < 1 or self.max_steps < 1:
            raise ConfigError("window and max_steps must be >= 1")
        lo, hi = self.drop_range
        if not 0 <= lo <= hi <= 1:
            raise ConfigError(f"drop_range {self.drop_range} must satisfy 0 <= lo <= hi <= 1")

    @property
    def coupled(self) -> bool:
        return self.mode is Mode.CYBER_PHYSICAL_LLM if self.llm_coupling is None else self.llm_coupling

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnvConfig":
        data = dict(data)
        sub = {
            "reward": RewardConfig,
            "topology": TopologyConfig,
            "grid": GridConfig,
            "attacker": AttackerConfig,
            "honeypot": HoneypotConfig,
        }
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key in sub:
                kwargs[key] = sub[key].from_dict(value) if key == "topology" else sub[key](**value)
            elif key == "drop_range":
                kwargs[key] = tuple(value)
            elif key in cls.__dataclass_fields__:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown environment option {key!r}")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        out["scenario"] = self.scenario.value
        out["drop_range"] = list(self.drop_range)
        if out["topology"]["links"] is not None:
            out["topology"]["links"] = [list(link) for link in out["topology"]["links"]]
        return out


@dataclass(frozen=True)
class RewardBreakdown:
    n_pot: int
    n_act: int
    n_total: int
    d_net: float
    r_c: float
    r_p: float
    p_dec: float
    r_c_mod: float
    g_c: bool
    g_p: bool
    r_cp: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def cyber_reward(n_pot: int, n_act: int, n_total: int, d_net: float, cfg: RewardConfig = RewardConfig()) -> float:
    if n_total == 0:
        return -cfg.lambda3 * d_net
    return cfg.lambda1 * n_pot / n_total - cfg.lambda2 * n_act / n_total - cfg.lambda3 * d_net


def physical_reward(n_res: int, cfg: RewardConfig = RewardConfig()) -> float:
    return cfg.goal_bonus if n_res == 0 else -float(n_res)


def coupled_reward(breakdown: RewardBreakdown, mode: Mode | str, llm_coupling: bool | None = None) -> float:
    """Combine cyber and physical rewards per the goal-status case table."""
    mode = Mode(mode)
    coupled = mode is Mode.CYBER_PHYSICAL_LLM if llm_coupling is None else llm_coupling
    rc = breakdown.r_c_mod if coupled else breakdown.r_c
    if mode is Mode.CYBER_ONLY:
        return rc
    g_c, g_p, rp = breakdown.g_c, breakdown.g_p, breakdown.r_p
    if g_c and g_p:
        return rc + rp
    if g_c:
        return rp
    if g_p:
        return rc
    return rc + rp


def check_termination(
    disrupted: bool,
    gc_streak: int,
    g_p: bool,
    attacker_stage: Stage,
    mode: Mode | str,
    window: int = 5,
) -> tuple[bool, Outcome | None]:
    """Exactly one outcome per terminal step; disruption dominates."""
    if disrupted:
        return True, Outcome.REAL_RTU_DISRUPTED
    if gc_streak >= window and (g_p or not Mode(mode).physical):
        return True, Outcome.DECEPTION_SUCCESS
    if attacker_stage is Stage.DISENGAGED:
        return True, Outcome.ATTACKER_DISENGAGED
    return False, None


class DeceptionEnv:
    """Contested OT network with router agents, an adversary and honeypots."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        cfg = self.config
        self.topology: Topology = build_topology(cfg.topology)
        topo = self.topology
        if cfg.grid.n_initial_outages > cfg.grid.n_critical:
            raise ConfigError("n_initial_outages exceeds n_critical")
        blocks = split_buses(cfg.grid.n_critical, len(topo.real_rtus))
        self.rtus = {node: RealRtu(node, blocks[i]) for i, node in enumerate(topo.real_rtus)}
        real = topo.real_rtus
        self.pots: dict[int, Honeypot] = {}
        learning = cfg.mode is Mode.CYBER_PHYSICAL_LLM
        hp = cfg.honeypot
        for i, node in enumerate(topo.pots):
            self.pots[node] = Honeypot.create(
                node,
                self.rtus[real[i % len(real)]],
                learning=learning,
                window=hp.window,
                order=hp.order,
                k=hp.k,
                score_mode=hp.score_mode,
                static_score_input=hp.static_score_input,
            )
        self.n_routers = topo.n_routers
        self.n_interfaces = topo.n_interfaces
        self.obs_dim = N_FEATURES * self.n_routers
        self.static_p_dec = deception_probability(hp.static_score_input).p_dec
        self._terminal = True
        self.record_trace = False
        self.trace: list[dict] = []
        self.pdec_log: list[dict] = []

    # -- lifecycle -------------------------------------------------------------

    def reset(self, seed: int = 0) -> np.ndarray:
        cfg = self.config
        self._rng = np.random.default_rng(seed)
        first_real = self.topology.real_rtus[0]
        routing = shortest_path_routing(self.topology, first_real)
        routing = congestion_update(
            routing, cfg.scenario, self._seed(), drop_range=cfg.drop_range, capacity=cfg.link_capacity
        )
        self.routing: RoutingState = routing
        n_out = cfg.grid.n_initial_outages if cfg.mode.physical else 0
        self.grid: GridState = init_grid(cfg.grid.n_critical, n_out)
        self.attacker: AttackerState = initial_attacker(first_real)
        self.sessions = {node: rtu.session() for node, rtu in self.rtus.items()}
        self._last_responses: list[ResponseObservation] = []
        self._attacker_p_dec = self.static_p_dec if cfg.mode is not Mode.CYBER_PHYSICAL_LLM else 1.0
        self._reward_p_dec = self._initial_reward_p_dec()
        self.gc_streak = 0
        self.steps = 0
        self.disrupted = False
        self._terminal = False
        self.trace = []
        self._obs = np.zeros((self.n_routers, N_FEATURES))
        self._obs[:, 0] = self.routing.drop_prob
        return self._obs.reshape(-1).copy()

    def _initial_reward_p_dec(self) -> float:
        if self.config.mode is not Mode.CYBER_PHYSICAL_LLM:
            return self.static_p_dec
        scores = [p.last_score.p_dec for p in self.pots.values() if p.last_score is not None]
        return float(np.mean(scores)) if scores else self.static_p_dec

    def _seed(self) -> int:
        return int(self._rng.integers(2**63 - 1))

    @property
    def observation(self) -> np.ndarray:
        return self._obs.copy()

    def local_observation(self, router: int) -> np.ndarray:
        return self._obs[router].copy()

    # -- actions ---------------------------------------------------------------

    def step_single(self, action: Sequence[int]) -> tuple[np.ndarray, float, bool, bool, dict]:
        router, iface = int(action[0]), int(action[1])
        if not 0 <= router < self.n_routers or not 0 <= iface < self.n_interfaces:
            raise ValueError(f"action {tuple(action)} outside MultiDiscrete({self.n_routers}, {self.n_interfaces})")
        routing = self.routing.with_forwarding(router, iface)
        obs, reward, term, trunc, info = self._advance(routing)
        return obs.reshape(-1).copy(), reward, term, trunc, info

    def step_multi(self, actions: Mapping[int, int] | Sequence[int]):
        if not isinstance(actions, Mapping):
            actions = dict(enumerate(actions))
        missing = [r for r in range(self.n_routers) if r not in actions]
        if missing:
            raise ValueError(f"missing actions for routers {missing}")
        fwd = []
        for r in range(self.n_routers):
            iface = int(actions[r])
            if not 0 <= iface < self.n_interfaces:
                raise ValueError(f"router {r} action {iface} outside Discrete({self.n_interfaces})")
            fwd.append(iface)
        routing = replace(self.routing, forwarding=tuple(fwd))
        obs, reward, term, trunc, info = self._advance(routing)
        observations = {r: obs[r].copy() for r in range(self.n_routers)}
        rewards = {r: reward for r in range(self.n_routers)}
        return observations, rewards, term, trunc, info

    # -- dynamics ----------------------------------------------------------------

    def _advance(self, routing: RoutingState):
        if self._terminal:
            raise RuntimeError("episode is over; call reset()")
        cfg = self.config
        topo = self.topology
        self.steps += 1
        seeds = [self._seed() for _ in range(4)]
        resp_rng = np.random.default_rng(seeds[3])

        candidates = topo.real_rtus + topo.pots
        self.attacker, attack_pkts = attacker_step(
            self.attacker,
            self._last_responses,
            self._attacker_p_dec,
            seeds[0],
            cfg.attacker,
            candidates=candidates,
            source=topo.attacker,
        )
        emit_stage = self.attacker.stage
        benign = [PacketRecord(topo.master, rtu, PacketKind.BENIGN) for rtu in topo.real_rtus]
        routed = route_step(topo, routing, attack_pkts + benign, seeds[1])
        attack_out = routed[: len(attack_pkts)]
        benign_out = routed[len(attack_pkts):]

        responses: list[ResponseObservation] = []
        step_scores = []
        for pkt in attack_out:
            req: Dnp3Message = pkt.payload
            if pkt.fate is Fate.DELIVERED_REAL:
                rtu = self.rtus[pkt.final_node]
                session = self.sessions[pkt.final_node]
                msg = ground_truth_response(req, rtu, self.grid, session, self.steps)
                latency = rtu.timing.draw(resp_rng)
                if req.function == Function.DIRECT_OPERATE or (
                    req.function == Function.OPERATE and not msg.iin
                ):
                    self.grid = apply_compromise(self.grid, cfg.grid.compromise_outages)
                    self.disrupted = True
                report = validate_response(req, msg, session, latency)
                self.sessions[pkt.final_node] = session.after(req, msg)
                responses.append(ResponseObservation(msg, report, latency, pkt.final_node, False))
            elif pkt.fate is Fate.DELIVERED_POT:
                pot = self.pots[pkt.final_node]
                session = pot.mirrors.session()
                msg, latency = pot.respond(req, session, resp_rng, self.steps)
                report = validate_response(req, msg, session, latency)
                truth = ground_truth_response(req, pot.mirrors, self.grid, session, self.steps)
                ppl, score = pot.score(req, truth)
                step_scores.append(score.p_dec)
                if cfg.mode is Mode.CYBER_PHYSICAL_LLM:
                    self.pdec_log.append(
                        {
                            "step": self.steps,
                            "pot": pot.node_id,
                            "score_input": score.score_input,
                            "p_dec": score.p_dec,
                            "datastore": len(pot.datastore),
                        }
                    )
                    if cfg.honeypot.datastore_updates:
                        pot.observe(pot.mirrors.point_values(self.grid), req, self.steps)
                responses.append(ResponseObservation(msg, report, latency, pkt.final_node, True))
        if step_scores:
            self._attacker_p_dec = float(np.mean(step_scores))
            self._reward_p_dec = self._attacker_p_dec
        self._last_responses = responses

        n_total = len(attack_out)
        n_pot = sum(p.fate is Fate.DELIVERED_POT for p in attack_out)
        n_act = sum(p.fate is Fate.DELIVERED_REAL for p in attack_out)
        contained = n_act == 0
        if cfg.mode.physical:
            self.grid = restoration_tick(self.grid, contained and not self.disrupted)

        n_benign = len(benign_out)
        d_net = sum(p.fate is Fate.DROPPED for p in benign_out) / n_benign if n_benign else 0.0
        r_c = cyber_reward(n_pot, n_act, n_total, d_net, cfg.reward)
        n_res = self.grid.n_res
        g_c = n_total > 0 and n_pot == n_total and emit_stage.rank >= Stage.MITM_INSPECT.rank
        g_p = n_res == 0
        p_dec = self._reward_p_dec
        breakdown = RewardBreakdown(
            n_pot=n_pot,
            n_act=n_act,
            n_total=n_total,
            d_net=d_net,
            r_c=r_c,
            r_p=physical_reward(n_res, cfg.reward),
            p_dec=p_dec,
            r_c_mod=p_dec * r_c,
            g_c=g_c,
            g_p=g_p,
        )
        reward = coupled_reward(breakdown, cfg.mode, cfg.llm_coupling)
        breakdown = replace(breakdown, r_cp=reward)

        self.gc_streak = self.gc_streak + 1 if g_c else 0
        terminated, outcome = check_termination(
            self.disrupted, self.gc_streak, g_p, self.attacker.stage, cfg.mode, cfg.window
        )
        truncated = not terminated and self.steps >= cfg.max_steps
        if truncated:
            outcome = Outcome.TIMEOUT
        self._terminal = terminated or truncated

        self.routing = congestion_update(
            routing, cfg.scenario, seeds[2], packets=routed, drop_range=cfg.drop_range, capacity=cfg.link_capacity
        )
        self._obs = self._build_obs(attack_out)

        info = {
            "step": self.steps,
            "breakdown": breakdown,
            "outcome": outcome.value if outcome else None,
            "stage": self.attacker.stage.value,
            "suspicion": self.attacker.suspicion,
            "n_res": n_res,
            "forwarding": list(routing.forwarding),
            "looped": any(p.looped for p in routed),
        }
        if self.record_trace:
            rec = trace_record(self.steps, self.attacker)
            rec.update({"fate": [p.fate.value for p in attack_out], "reward": reward, "outcome": info["outcome"]})
            self.trace.append(rec)
        return self._obs, reward, terminated, truncated, info

    def _build_obs(self, attack_out: Sequence[PacketRecord]) -> np.ndarray:
        obs = np.zeros((self.n_routers, N_FEATURES))
        obs[:, 0] = self.routing.drop_prob
        obs[:, 1] = [float(np.mean(u)) for u in self.routing.utilization]
        seen = np.zeros(self.n_routers)
        to_pot = np.zeros(self.n_routers)
        for pkt in attack_out:
            routers = {r for r, _ in pkt.hops}
            if pkt.fate is Fate.DROPPED and not pkt.hops:
                routers = {self.topology.ingress[pkt.src]}
            for r in routers:
                seen[r] += 1
                if pkt.fate is Fate.DELIVERED_POT:
                    to_pot[r] += 1
        obs[:, 2] = seen > 0
        obs[:, 3] = np.divide(to_pot, seen, out=np.zeros_like(to_pot), where=seen > 0)
        return obs

    def save_trace(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_env_config(path: str | Path) -> EnvConfig:
    data = json.loads(Path(path).read_text())
    return EnvConfig.from_dict(data.get("env", data))
