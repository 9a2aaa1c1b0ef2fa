import json
import math
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdeception.dnp3 import (
    IIN,
    ControlCode,
    Function,
    PointKind,
    PointValue,
    SessionState,
    class0_poll,
    encode,
    request,
    validate_response,
)
from otdeception.errors import ConfigError, ScoringError, TrainingError
from otdeception.grid_sim import init_grid
from otdeception.outstation import RealRtu, ground_truth_response
from otdeception.personality import (
    BOS,
    UNK,
    Datastore,
    Honeypot,
    NGramModel,
    Personality,
    PointSpec,
    deception_probability,
    exchange_tokens,
    generate_response,
    mirror_personality,
    perplexity,
    tokenize,
    train_model,
    update_datastore,
)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.mark.parametrize("case", json.loads((FIXTURES / "tokenizer_golden.json").read_text()))
def test_tokenizer_golden(case):
    assert tokenize(case["text"]) == case["tokens"]


def test_bigram_hand_count():
    m = train_model([["a", "b", "a", "b"]], order=2, k=0.1)
    # context (a) is followed by b twice; V = {a, b, <unk>}
    assert m.prob("b", ["a"]) == pytest.approx((2 + 0.1) / (2 + 0.3), abs=1e-12)
    assert m.prob("a", ["a"]) == pytest.approx(0.1 / 2.3, abs=1e-12)
    assert m.prob("b", ["a"]) > m.prob("a", ["a"])


tokens = st.lists(st.sampled_from(list("abcdef")), min_size=1, max_size=12)
corpora = st.lists(tokens, min_size=1, max_size=5)


@settings(max_examples=100)
@given(corpus=corpora, order=st.integers(1, 4), k=st.floats(0.01, 2.0), ctx=st.lists(st.sampled_from(list("abcxyz") + [BOS]), max_size=4))
def test_distribution_sums_to_one_and_is_positive(corpus, order, k, ctx):
    m = train_model(corpus, order, k)
    dist = m.distribution(ctx)
    assert math.isclose(sum(dist.values()), 1.0, abs_tol=1e-9)
    assert all(p > 0 for p in dist.values())


@settings(max_examples=100)
@given(a=corpora, b=corpora, order=st.integers(1, 3))
def test_count_additivity(a, b, order):
    ma, mb, mab = train_model(a, order), train_model(b, order), train_model(a + b, order)
    for ctx in set(ma.counts) | set(mb.counts):
        assert mab.counts[ctx] == ma.counts.get(ctx, Counter()) + mb.counts.get(ctx, Counter())
    assert mab.unigrams == ma.unigrams + mb.unigrams


def test_training_errors():
    with pytest.raises(TrainingError):
        train_model([])
    with pytest.raises(TrainingError):
        train_model([[]])
    with pytest.raises(TrainingError):
        NGramModel(order=0)
    with pytest.raises(TrainingError):
        NGramModel(k=0)


def _oracle_cross_entropy(corpus, reference, order, k):
    """Independent recount: H = -(1/M) sum log2 P(y_j | context)."""
    counts, totals, vocab = Counter(), Counter(), set()
    for seq in corpus:
        vocab.update(seq)
        padded = [BOS] * (order - 1) + seq
        for i, tok in enumerate(seq):
            ctx = tuple(padded[i:i + order - 1])
            counts[ctx + (tok,)] += 1
            totals[ctx] += 1
    v = len(vocab) + 1
    norm = lambda t: t if t in vocab or t == BOS else UNK
    padded = [BOS] * (order - 1) + [norm(t) for t in reference]
    total = 0.0
    for i in range(len(reference)):
        ctx = tuple(padded[i:i + order - 1])
        tok = padded[i + order - 1]
        total += math.log2((counts[ctx + (tok,)] + k) / (totals[ctx] + k * v))
    return -total / len(reference)


@settings(max_examples=100)
@given(corpus=corpora, ref=st.lists(st.sampled_from(list("abcdefgh")), min_size=1, max_size=15), order=st.integers(1, 4))
def test_cross_entropy_matches_oracle(corpus, ref, order):
    m = train_model(corpus, order, 0.1)
    rep = perplexity(m, ref)
    assert rep.cross_entropy_bits == pytest.approx(_oracle_cross_entropy(corpus, ref, order, 0.1), abs=1e-9)
    assert rep.m_perp == pytest.approx(2.0**rep.cross_entropy_bits, rel=1e-12)
    assert rep.m_perp >= 1.0 - 1e-12
    assert rep.m_tokens == len(ref)


def test_perfect_prediction_limit():
    const = ["x"] * 8
    m = train_model([const], order=1, k=1e-12)
    assert perplexity(m, const).m_perp == pytest.approx(1.0, abs=1e-9)
    # with enough context a sequence of distinct tokens is also predicted exactly
    seq = list("abcdefg")
    m3 = train_model([seq], order=3, k=1e-12)
    assert perplexity(m3, seq).m_perp == pytest.approx(1.0, abs=1e-9)


def test_uniform_limit_gives_vocabulary_size():
    m = train_model([list("abcd")], order=2, k=1e9)
    assert len(m.vocabulary) == 5
    assert perplexity(m, list("dcba")).m_perp == pytest.approx(5.0, rel=1e-6)


def test_empty_reference_is_a_scoring_error():
    with pytest.raises(ScoringError):
        perplexity(train_model([["a"]]), [])


@pytest.mark.parametrize(
    "x, expected",
    [(5.07, 0.06), (4.34, 0.115), (3.27, 0.275), (2.1, 0.55), (1.03, 0.78), (0.12, 0.9)],
)
def test_pdec_table_rows(x, expected):
    assert abs(deception_probability(x).p_dec - expected) <= 0.01


def test_pdec_closed_form_and_modes():
    m = train_model([list("abcab")], order=2)
    rep = perplexity(m, list("abc"))
    x = rep.cross_entropy_bits
    assert deception_probability(rep).p_dec == 1 - 1 / (1 + 10 * math.exp(-x))
    assert deception_probability(rep, "m_perp").score_input == rep.m_perp
    assert deception_probability(-1e6).p_dec == 1.0


@given(a=st.floats(-50, 50), b=st.floats(-50, 50))
def test_pdec_strictly_decreasing(a, b):
    if a < b and b - a > 1e-6:
        assert deception_probability(a).p_dec > deception_probability(b).p_dec


# --- personality files -----------------------------------------------------------


@pytest.fixture
def rtu():
    return RealRtu(6, (0, 1, 2))


def test_personality_json_roundtrip(tmp_path, rtu):
    p = mirror_personality(rtu)
    p.save(tmp_path / "p.json")
    assert Personality.load(tmp_path / "p.json") == p
    doc = json.loads((tmp_path / "p.json").read_text())
    assert set(doc) == {"device_identity", "point_table", "security_profile", "timing", "select_before_operate"}


def test_personality_invariants(rtu):
    base = mirror_personality(rtu)
    with pytest.raises(ConfigError):
        Personality("v", "m", "f", (PointSpec(PointKind.ANALOG_INPUT, 0, 50, 100, 200),), base.security_profile)
    with pytest.raises(ConfigError):
        Personality("v", "m", "f", base.point_table, frozenset())
    with pytest.raises(ConfigError):
        Personality.from_dict({"device_identity": {}})


# --- generation ------------------------------------------------------------------


def test_class0_response_is_complete(rtu):
    p = mirror_personality(rtu)
    resp = generate_response(None, p, class0_poll(4), 0)
    assert set(resp.keys()) == set(p.keys)
    assert resp.seq == 4


def test_operate_without_select_is_refused(rtu):
    p = mirror_personality(rtu)
    op = request(Function.OPERATE, 1, [PointValue(PointKind.CROB, 0, int(ControlCode.LATCH_OFF))])
    assert generate_response(None, p, op, 0).iin & IIN.SELECT_REQUIRED


def test_unsupported_function_answers_not_supported(rtu):
    p = mirror_personality(rtu)
    write = request(Function.WRITE, 2, [PointValue(PointKind.ANALOG_INPUT, 0, 5)])
    resp = generate_response(None, p, write, 0)
    assert resp.iin & IIN.FUNC_NOT_SUPPORTED
    session = SessionState(p.keys, p.timing, allowed_functions=p.security_profile)
    assert validate_response(write, resp, session, p.timing.base_latency).ok


def test_generation_is_deterministic(rtu):
    store = Datastore()
    grid = init_grid(3, 1)
    update_datastore(store, rtu.point_values(grid), class0_poll(0), rtu.point_table)
    p = mirror_personality(rtu)
    a = generate_response(store.model(), p, class0_poll(7), 123)
    assert encode(a) == encode(generate_response(store.model(), p, class0_poll(7), 123))


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n_obs=st.integers(0, 6),
    n_out=st.integers(0, 3),
    fn=st.sampled_from([Function.READ, Function.SELECT, Function.OPERATE, Function.DIRECT_OPERATE, Function.WRITE]),
    idx=st.lists(st.integers(0, 12), max_size=4),
)
def test_honeypot_answers_pass_validation(seed, n_obs, n_out, fn, idx):
    real = RealRtu(6, (0, 1, 2))
    pot = Honeypot.create(8, real)
    grid = init_grid(3, n_out)
    for i in range(n_obs):
        pot.observe(real.point_values(grid), class0_poll(i), i)
    if fn == Function.READ:
        objs = [PointValue(PointKind.ANALOG_INPUT, i) for i in idx]
    else:
        objs = [PointValue(PointKind.CROB, i, int(ControlCode.LATCH_ON)) for i in idx[:1] or [0]]
    req = request(fn, seed % 16, objs)
    session = pot.personality.session()
    rng = np.random.default_rng(seed)
    resp, latency = pot.respond(req, session, rng, 1)
    check = SessionState(session.point_table, session.timing, session.select_before_operate, pot.personality.security_profile)
    assert validate_response(req, resp, check, latency).ok


# --- datastore -------------------------------------------------------------------


def test_first_snapshot_makes_model_trainable(rtu):
    store = Datastore()
    with pytest.raises(TrainingError):
        store.model()
    update_datastore(store, rtu.point_values(init_grid(3, 0)), class0_poll(0))
    assert store.model().vocabulary


def test_window_eviction_and_incremental_model(rtu):
    store = Datastore(window=3)
    grid = init_grid(3, 3)
    from otdeception.grid_sim import restoration_tick

    for step in range(6):
        update_datastore(store, rtu.point_values(grid), class0_poll(step), rtu.point_table, step)
        grid = restoration_tick(grid, True)
        assert len(store) == min(step + 1, 3)
    assert [e["step"] for e in store.entries] == [3, 4, 5]
    fresh = train_model(store.corpus(), store.order, store.k)
    assert store.model().counts == fresh.counts
    assert store.model().unigrams == fresh.unigrams


def test_datastore_jsonl_roundtrip(tmp_path, rtu):
    store = Datastore()
    for step in range(3):
        update_datastore(store, rtu.point_values(init_grid(3, 1)), class0_poll(step), rtu.point_table, step)
    store.save(tmp_path / "d.jsonl")
    back = Datastore.load(tmp_path / "d.jsonl")
    assert back.corpus() == store.corpus()
    assert len((tmp_path / "d.jsonl").read_text().splitlines()) == 3


def test_perplexity_non_increasing_over_updates(rtu):
    pot = Honeypot.create(8, rtu)
    grid = init_grid(3, 0)
    prev = math.inf
    for step in range(6):
        req = class0_poll(step)
        truth = ground_truth_response(req, rtu, grid)
        report, _ = pot.score(req, truth)
        assert report.cross_entropy_bits <= prev + 1e-12
        prev = report.cross_entropy_bits
        pot.observe(rtu.point_values(grid), req, step)


def test_static_honeypot_scores_constant(rtu):
    pot = Honeypot.create(8, rtu, learning=False, static_score_input=2.0)
    req = class0_poll(0)
    truth = ground_truth_response(req, rtu, init_grid(3, 0))
    report, score = pot.score(req, truth)
    assert report is None
    assert score.p_dec == deception_probability(2.0).p_dec
    pot.observe({}, req)
    assert len(pot.datastore) == 1


def test_reference_sequence_shape(rtu):
    req = class0_poll(0)
    truth = ground_truth_response(req, rtu, init_grid(3, 0))
    toks = exchange_tokens(req, truth)
    assert toks[:4] == ["READ", "CLASS0", "=", ">"]
    assert toks.count(";") == len(rtu.point_table)
