"""Scripted-adaptive DNP3 adversary: recon, MITM inspection, command injection.

The attacker cannot tell honeypots from real outstations directly. It
fingerprints through protocol violations in the answers it gets and through
the (im)plausibility of honeypot content, which accumulates as suspicion.
Above a threshold it either walks away or retargets an unprobed node.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dnp3 import ControlCode, Dnp3Message, Function, PointKind, PointValue, ValidationReport, class0_poll, request
from .errors import AttackerLogicError
from .net_sim import PacketKind, PacketRecord


class Stage(str, enum.Enum):
    RECON = "recon"
    MITM_INSPECT = "mitm_inspect"
    INJECT = "inject"
    DISENGAGED = "disengaged"
    DONE = "done"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {Stage.RECON: 0, Stage.MITM_INSPECT: 1, Stage.INJECT: 2, Stage.DISENGAGED: -1, Stage.DONE: -1}
_NEXT = {Stage.RECON: Stage.MITM_INSPECT, Stage.MITM_INSPECT: Stage.INJECT}
_PACKET_KIND = {
    Stage.RECON: PacketKind.RECON_PROBE,
    Stage.MITM_INSPECT: PacketKind.DNP3_POLL,
    Stage.INJECT: PacketKind.DNP3_COMMAND,
}


@dataclass(frozen=True)
class AttackerConfig:
    recon_dwell: int = 3
    mitm_dwell: int = 10
    violation_increment: float = 0.1
    kappa: float = 0.2  # suspicion per honeypot interaction at p_dec = 0
    threshold: float = 0.8
    disengage_prob: float = 0.5


@dataclass(frozen=True)
class ResponseObservation:
    """One answer as seen by the attacker."""

    message: Dnp3Message
    report: ValidationReport
    latency: float
    node: int
    from_pot: bool = False


@dataclass(frozen=True)
class AttackerState:
    stage: Stage
    target: int
    suspicion: float = 0.0
    intel: frozenset[tuple[int, tuple[int, int]]] = frozenset()
    probed: frozenset[int] = frozenset()
    stage_steps: int = 0
    seq: int = 0
    awaiting: int = 0  # packets sent last step


def initial_attacker(target: int) -> AttackerState:
    return AttackerState(stage=Stage.RECON, target=target, probed=frozenset({target}))


def inject_command(state: AttackerState, target: int, seq: int | None = None) -> Dnp3Message:
    """Direct-operate LATCH_OFF on a breaker the attacker has seen at ``target``."""
    if state.stage is not Stage.INJECT:
        raise AttackerLogicError(f"inject_command called in stage {state.stage.value}")
    breakers = sorted(
        key[1] for node, key in state.intel if node == target and key[0] == int(PointKind.BINARY_INPUT)
    )
    index = breakers[0] if breakers else 0
    crob = PointValue(PointKind.CROB, index, int(ControlCode.LATCH_OFF))
    return request(Function.DIRECT_OPERATE, state.seq if seq is None else seq, [crob])


def _request_for(state: AttackerState) -> Dnp3Message:
    if state.stage is Stage.INJECT:
        return inject_command(state, state.target)
    return class0_poll(state.seq)


def attacker_step(
    state: AttackerState,
    last_responses: Sequence[ResponseObservation],
    p_dec: float,
    rng_seed: int,
    config: AttackerConfig = AttackerConfig(),
    candidates: Sequence[int] = (),
    source: int = 0,
) -> tuple[AttackerState, list[PacketRecord]]:
    """Digest last step's answers, maybe escalate or bail out, emit this step's packets."""
    if state.stage in (Stage.DISENGAGED, Stage.DONE):
        return state, []
    rng = np.random.default_rng(rng_seed)

    violations = sum(len(r.report) for r in last_responses)
    # a request that never got an answer reads as a timing violation
    violations += max(0, state.awaiting - len(last_responses))
    pot_hits = sum(1 for r in last_responses if r.from_pot)
    suspicion = state.suspicion + config.violation_increment * violations + (1.0 - p_dec) * config.kappa * pot_hits
    suspicion = min(1.0, max(0.0, suspicion))

    intel = set(state.intel)
    for r in last_responses:
        intel.update((r.node, o.key) for o in r.message.objects)

    stage = state.stage
    stage_steps = state.stage_steps + (1 if last_responses else 0)
    target = state.target
    probed = set(state.probed)

    if suspicion > config.threshold:
        if rng.random() < config.disengage_prob:
            return replace(state, stage=Stage.DISENGAGED, suspicion=suspicion, intel=frozenset(intel), awaiting=0), []
        fresh = [c for c in candidates if c not in probed]
        if fresh:
            target = fresh[int(rng.integers(len(fresh)))]
            probed.add(target)

    if stage in _NEXT:
        dwell = config.recon_dwell if stage is Stage.RECON else config.mitm_dwell
        if stage_steps >= dwell:
            stage = _NEXT[stage]
            stage_steps = 0

    new = AttackerState(
        stage=stage,
        target=target,
        suspicion=suspicion,
        intel=frozenset(intel),
        probed=frozenset(probed),
        stage_steps=stage_steps,
        seq=state.seq,
    )
    msg = _request_for(new)
    pkt = PacketRecord(src=source, dst=target, kind=_PACKET_KIND[stage], payload=msg)
    return replace(new, seq=(state.seq + 1) % 16, awaiting=1), [pkt]


def trace_record(step: int, state: AttackerState) -> dict:
    return {
        "step": step,
        "stage": state.stage.value,
        "target": state.target,
        "suspicion": round(state.suspicion, 6),
        "intel": len(state.intel),
    }
