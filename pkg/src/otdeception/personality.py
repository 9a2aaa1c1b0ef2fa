"""Honeypot host deception: personality files, n-gram generation model,
perplexity scoring and the deception probability fed back to the router agents.

The generation backend is a retrieval-conditioned add-k n-gram model trained on
the honeypot's datastore of observed (query, true response) pairs. Realism of
a honeypot answer is scored by how well that model predicts the response the
real outstation would have given.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dnp3 import (
    CONTROL_FUNCTIONS,
    IIN,
    Direction,
    Dnp3Message,
    Function,
    PointKind,
    PointValue,
    SessionState,
    TimingProfile,
    class0_poll,
    expects_select_required,
    render_text,
)
from .errors import ConfigError, ScoringError, TrainingError
from .outstation import RealRtu, bus_load, response_from_values

BOS = "<s>"
UNK = "<unk>"
SEPARATOR = "=>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Split on whitespace; every punctuation character is its own token."""
    return _TOKEN_RE.findall(text)


def exchange_tokens(query: Dnp3Message, response: Dnp3Message) -> list[str]:
    return tokenize(f"{render_text(query)} {SEPARATOR} {render_text(response)}")


# --- n-gram model ------------------------------------------------------------


@dataclass
class NGramModel:
    """Add-k smoothed n-gram model with incremental add/remove of sequences.

    Out-of-vocabulary tokens are scored as ``<unk>``; the vocabulary is every
    token with a positive count plus ``<unk>``.
    """

    order: int = 3
    k: float = 0.1
    counts: dict[tuple[str, ...], Counter] = field(default_factory=dict)
    context_totals: Counter = field(default_factory=Counter)
    unigrams: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if self.order < 1:
            raise TrainingError(f"order must be >= 1, got {self.order}")
        if not self.k > 0:
            raise TrainingError(f"smoothing constant must be > 0, got {self.k}")

    @property
    def vocabulary(self) -> set[str]:
        return set(self.unigrams) | {UNK}

    def _ngrams(self, seq: Sequence[str]):
        padded = [BOS] * (self.order - 1) + list(seq)
        for i, tok in enumerate(seq):
            yield tuple(padded[i:i + self.order - 1]), tok

    def update(self, seq: Sequence[str], weight: int = 1) -> None:
        for ctx, tok in self._ngrams(seq):
            bucket = self.counts.setdefault(ctx, Counter())
            bucket[tok] += weight
            if bucket[tok] == 0:
                del bucket[tok]
            if not bucket:
                del self.counts[ctx]
            self.context_totals[ctx] += weight
            if self.context_totals[ctx] == 0:
                del self.context_totals[ctx]
            self.unigrams[tok] += weight
            if self.unigrams[tok] == 0:
                del self.unigrams[tok]

    def _map(self, tok: str) -> str:
        return tok if tok == BOS or tok in self.unigrams else UNK

    def prob(self, token: str, context: Sequence[str]) -> float:
        ctx = tuple(self._map(t) for t in context[len(context) - (self.order - 1):]) if self.order > 1 else ()
        tok = self._map(token)
        bucket = self.counts.get(ctx)
        c = bucket[tok] if bucket else 0
        total = self.context_totals.get(ctx, 0)
        return (c + self.k) / (total + self.k * len(self.vocabulary))

    def distribution(self, context: Sequence[str]) -> dict[str, float]:
        return {tok: self.prob(tok, context) for tok in self.vocabulary}

    def candidates(self, context: Sequence[str]) -> Counter:
        ctx = tuple(self._map(t) for t in context[len(context) - (self.order - 1):]) if self.order > 1 else ()
        return self.counts.get(ctx, Counter())


def train_model(corpus: Iterable[Sequence[str]], order: int = 3, k: float = 0.1) -> NGramModel:
    corpus = [list(seq) for seq in corpus]
    if not corpus or not any(corpus):
        raise TrainingError("cannot train on an empty corpus")
    model = NGramModel(order=order, k=k)
    for seq in corpus:
        model.update(seq)
    return model


# --- scoring -------------------------------------------------------------------

SCORE_INPUTS = ("cross_entropy", "m_perp")


@dataclass(frozen=True)
class PerplexityReport:
    m_tokens: int
    cross_entropy_bits: float
    m_perp: float
    score_mode: str = "cross_entropy"

    @property
    def score_input(self) -> float:
        return self.cross_entropy_bits if self.score_mode == "cross_entropy" else self.m_perp


@dataclass(frozen=True)
class DeceptionScore:
    p_dec: float
    score_input: float


def perplexity(model: NGramModel, reference: Sequence[str], score_mode: str = "cross_entropy") -> PerplexityReport:
    if not reference:
        raise ScoringError("reference sequence is empty")
    if score_mode not in SCORE_INPUTS:
        raise ConfigError(f"score_mode must be one of {SCORE_INPUTS}")
    padded = [BOS] * (model.order - 1) + list(reference)
    log_sum = 0.0
    for i, tok in enumerate(reference):
        log_sum += math.log2(model.prob(tok, padded[i:i + model.order - 1]))
    h = -log_sum / len(reference)
    return PerplexityReport(len(reference), h, 2.0 ** h, score_mode)


def deception_probability(report: PerplexityReport | float, score_input: str | None = None) -> DeceptionScore:
    """Sigmoid-variant map from a realism score to P_dec: 1 - 1 / (1 + 10 exp(-x))."""
    if isinstance(report, PerplexityReport):
        mode = score_input or report.score_mode
        x = report.cross_entropy_bits if mode == "cross_entropy" else report.m_perp
    else:
        x = float(report)
    try:
        p = 1.0 - 1.0 / (1.0 + 10.0 * math.exp(-x))
    except OverflowError:
        p = 1.0
    return DeceptionScore(p_dec=p, score_input=x)


# --- personality files -------------------------------------------------------

_KIND_NAMES = {"binary_input": PointKind.BINARY_INPUT, "analog_input": PointKind.ANALOG_INPUT}


@dataclass(frozen=True)
class PointSpec:
    kind: PointKind
    index: int
    baseline: int
    low: int
    high: int

    @property
    def key(self) -> tuple[int, int]:
        return (int(self.kind), self.index)


@dataclass(frozen=True)
class Personality:
    vendor: str
    model: str
    firmware: str
    point_table: tuple[PointSpec, ...]
    security_profile: frozenset[Function]
    timing: TimingProfile = TimingProfile()
    select_before_operate: bool = True

    def __post_init__(self):
        if not self.security_profile:
            raise ConfigError("security_profile must list at least one function")
        for p in self.point_table:
            if not p.low <= p.baseline <= p.high:
                raise ConfigError(f"point {p.kind.name}{p.index} baseline {p.baseline} outside [{p.low}, {p.high}]")
            if p.kind == PointKind.BINARY_INPUT and not (0 <= p.low and p.high <= 1):
                raise ConfigError(f"binary point {p.index} range must lie in [0, 1]")

    @property
    def keys(self) -> tuple[tuple[int, int], ...]:
        return tuple(p.key for p in self.point_table)

    def spec(self, key: tuple[int, int]) -> PointSpec | None:
        for p in self.point_table:
            if p.key == key:
                return p
        return None

    def baseline_values(self) -> dict[tuple[int, int], int]:
        return {p.key: p.baseline for p in self.point_table}

    def session(self) -> SessionState:
        return SessionState(point_table=self.keys, timing=self.timing, select_before_operate=self.select_before_operate)

    def to_dict(self) -> dict:
        names = {v: k for k, v in _KIND_NAMES.items()}
        return {
            "device_identity": {"vendor": self.vendor, "model": self.model, "firmware": self.firmware},
            "point_table": [
                {"kind": names[p.kind], "index": p.index, "baseline": p.baseline, "low": p.low, "high": p.high}
                for p in self.point_table
            ],
            "security_profile": sorted(f.name.lower() for f in self.security_profile),
            "timing": {"base_latency": self.timing.base_latency, "jitter_bound": self.timing.jitter_bound},
            "select_before_operate": self.select_before_operate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Personality":
        try:
            ident = data["device_identity"]
            points = tuple(
                PointSpec(_KIND_NAMES[p["kind"]], int(p["index"]), int(p["baseline"]), int(p["low"]), int(p["high"]))
                for p in data["point_table"]
            )
            profile = frozenset(Function[name.upper()] for name in data["security_profile"])
            timing = TimingProfile(**data.get("timing", {}))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed personality document: {exc}") from None
        return cls(
            vendor=ident.get("vendor", ""),
            model=ident.get("model", ""),
            firmware=ident.get("firmware", ""),
            point_table=points,
            security_profile=profile,
            timing=timing,
            select_before_operate=bool(data.get("select_before_operate", True)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Personality":
        return cls.from_dict(json.loads(Path(path).read_text()))


def mirror_personality(rtu: RealRtu, name: str = "RTU") -> Personality:
    """A cold-start personality imitating ``rtu``.

    Baselines are generic guesses (nominal 1.0 p.u., flat 1 MW load) rather than
    the device's true readings; the datastore is what makes answers accurate.
    """
    points = []
    for k, bus in enumerate(rtu.buses):
        points.append(PointSpec(PointKind.BINARY_INPUT, k, 1, 0, 1))
    for k, bus in enumerate(rtu.buses):
        points.append(PointSpec(PointKind.ANALOG_INPUT, 2 * k, 10000, 0, 10500))
        points.append(PointSpec(PointKind.ANALOG_INPUT, 2 * k + 1, 100, 0, 2 * bus_load(bus)))
    return Personality(
        vendor="SEL",
        model="RTAC-3530",
        firmware=f"R151-V2 {name}",
        point_table=tuple(points),
        security_profile=frozenset({Function.READ, Function.SELECT, Function.OPERATE, Function.DIRECT_OPERATE}),
        timing=rtu.timing,
        select_before_operate=rtu.select_before_operate,
    )


# --- datastore -------------------------------------------------------------


class Datastore:
    """FIFO window of observed (query, true response) snapshots.

    Keeps an incrementally maintained n-gram model identical to
    ``train_model(self.corpus(), order, k)``.
    """

    def __init__(self, window: int = 512, order: int = 3, k: float = 0.1):
        if window < 1:
            raise ConfigError("datastore window must be >= 1")
        self.window = window
        self.order = order
        self.k = k
        self.entries: deque[dict] = deque()
        self._model = NGramModel(order=order, k=k)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: dict) -> None:
        tokens = tokenize(f"{entry['query']} {SEPARATOR} {entry['response']}")
        entry = dict(entry, tokens=tokens)
        self.entries.append(entry)
        self._model.update(tokens)
        while len(self.entries) > self.window:
            old = self.entries.popleft()
            self._model.update(old["tokens"], weight=-1)

    def corpus(self) -> list[list[str]]:
        return [list(e["tokens"]) for e in self.entries]

    def model(self) -> NGramModel:
        if not self.entries:
            raise TrainingError("datastore is empty; nothing to train on")
        return self._model

    def to_jsonl(self) -> str:
        rows = [{k: v for k, v in e.items() if k != "tokens"} for e in self.entries]
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> "Datastore":
        store = cls(**kwargs)
        for line in Path(path).read_text().splitlines():
            if line.strip():
                store.append(json.loads(line))
        return store


def update_datastore(
    datastore: Datastore,
    observed_state: dict[tuple[int, int], int],
    attacker_query: Dnp3Message,
    point_table: Sequence[tuple[int, int]] | None = None,
    step: int = 0,
) -> Datastore:
    """Append the true answer to ``attacker_query`` under ``observed_state``."""
    table = tuple(point_table) if point_table is not None else tuple(sorted(observed_state))
    session = SessionState(point_table=table)
    truth = response_from_values(attacker_query, table, observed_state, session)
    datastore.append(
        {
            "step": step,
            "query": render_text(attacker_query),
            "response": render_text(truth),
            "snapshot": {f"{k[0]}:{k[1]}": v for k, v in sorted(observed_state.items())},
        }
    )
    return datastore


# --- generation --------------------------------------------------------------


def _sample_value(
    model: NGramModel | None, spec: PointSpec, prefix: list[str], rng: np.random.Generator
) -> int:
    if model is None:
        return spec.baseline
    cands = []
    probs = []
    for tok in model.candidates(prefix):
        if tok.isdigit() and spec.low <= int(tok) <= spec.high:
            cands.append(int(tok))
            probs.append(model.prob(tok, prefix))
    mass = sum(probs)
    u = rng.random()
    if u < mass:
        return cands[int(np.searchsorted(np.cumsum(probs), u, side="right").clip(max=len(cands) - 1))]
    return int(rng.integers(spec.low, spec.high + 1))


def generate_response(
    model: NGramModel | None,
    personality: Personality,
    request_msg: Dnp3Message,
    rng_seed: int,
    session: SessionState | None = None,
    step: int = 0,
) -> Dnp3Message:
    """Schema-constrained honeypot answer to ``request_msg``.

    Point values come from the model's continuations that fall inside the
    personality's plausible range; the leftover probability mass is spread
    uniformly over that range. With ``model=None`` the honeypot is static and
    answers with its baseline readings.
    """
    rng = np.random.default_rng(rng_seed)
    session = session or personality.session()
    iin = IIN.NONE
    objects: list[PointValue] = []
    fn = Function(request_msg.function)
    if fn not in personality.security_profile:
        iin |= IIN.FUNC_NOT_SUPPORTED
    elif fn == Function.READ:
        keys = personality.keys if request_msg.is_class0_poll else request_msg.keys()
        prefix = tokenize(f"{render_text(request_msg)} {SEPARATOR} RESPONSE IIN 0000")
        for key in keys:
            spec = personality.spec(key)
            if spec is None:
                iin |= IIN.OBJECT_UNKNOWN
                continue
            tag = "BI" if spec.kind == PointKind.BINARY_INPUT else "AI"
            prefix += [";", f"{tag}{spec.index}", "="]
            value = _sample_value(model, spec, prefix, rng)
            prefix.append(str(value))
            objects.append(PointValue(spec.kind, spec.index, value, step))
    elif fn in CONTROL_FUNCTIONS:
        if expects_select_required(request_msg, session):
            iin |= IIN.SELECT_REQUIRED
        else:
            objects = [PointValue(o.kind, o.index, o.value, step) for o in request_msg.objects]
    return Dnp3Message(Direction.RESPONSE, request_msg.seq, Function.RESPONSE, int(iin), tuple(objects))


# --- honeypot ------------------------------------------------------------------


@dataclass
class Honeypot:
    """One decoy outstation: personality, datastore and current realism."""

    node_id: int
    personality: Personality
    mirrors: RealRtu
    datastore: Datastore
    learning: bool = True
    score_mode: str = "cross_entropy"
    static_score_input: float = 2.0
    last_score: DeceptionScore | None = None

    @classmethod
    def create(
        cls,
        node_id: int,
        mirrors: RealRtu,
        personality: Personality | None = None,
        learning: bool = True,
        window: int = 512,
        order: int = 3,
        k: float = 0.1,
        score_mode: str = "cross_entropy",
        static_score_input: float = 2.0,
    ) -> "Honeypot":
        persona = personality or mirror_personality(mirrors, name=f"POT{node_id}")
        store = Datastore(window=window, order=order, k=k)
        pot = cls(node_id, persona, mirrors, store, learning, score_mode, static_score_input)
        pot.seed_datastore()
        return pot

    def seed_datastore(self) -> None:
        """Cold start: the personality's own baseline answer to a class-0 poll."""
        self.datastore.entries.clear()
        self.datastore._model = NGramModel(order=self.datastore.order, k=self.datastore.k)
        update_datastore(self.datastore, self.personality.baseline_values(), class0_poll(0), self.personality.keys)

    def respond(self, request_msg: Dnp3Message, session: SessionState, rng: np.random.Generator, step: int):
        model = self.datastore.model() if self.learning else None
        seed = int(rng.integers(2**31))
        msg = generate_response(model, self.personality, request_msg, seed, session=session, step=step)
        return msg, self.personality.timing.draw(rng)

    def score(self, request_msg: Dnp3Message, reference: Dnp3Message) -> tuple[PerplexityReport | None, DeceptionScore]:
        if not self.learning:
            self.last_score = deception_probability(self.static_score_input)
            return None, self.last_score
        report = perplexity(self.datastore.model(), exchange_tokens(request_msg, reference), self.score_mode)
        self.last_score = deception_probability(report)
        return report, self.last_score

    def observe(self, snapshot: dict[tuple[int, int], int], request_msg: Dnp3Message, step: int = 0) -> None:
        if self.learning:
            update_datastore(self.datastore, snapshot, request_msg, self.mirrors.point_table, step)
