import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_message
from otdeception.dnp3 import (
    IIN,
    ControlCode,
    Direction,
    Dnp3Message,
    Function,
    PointKind,
    PointValue,
    SessionState,
    TimingProfile,
    Violation,
    class0_poll,
    decode,
    encode,
    render_text,
    request,
    validate_response,
)
from otdeception.errors import BadPreambleError, DecodeError, EncodeError, TruncatedError, UnknownFunctionError
from otdeception.grid_sim import init_grid
from otdeception.outstation import RealRtu, ground_truth_response

GOLDEN = {f["name"]: f["hex"] for f in json.loads((Path(__file__).parent / "fixtures" / "dnp3_golden.json").read_text())}

BI, AI, CROB = PointKind.BINARY_INPUT, PointKind.ANALOG_INPUT, PointKind.CROB


def _resp(seq, iin=0, objects=()):
    return Dnp3Message(Direction.RESPONSE, seq, Function.RESPONSE, iin, tuple(objects))


GOLDEN_MESSAGES = {
    "class0_poll_seq0": class0_poll(0),
    "direct_operate_crob2_latch_off_seq3": request(Function.DIRECT_OPERATE, 3, [PointValue(CROB, 2, int(ControlCode.LATCH_OFF))]),
    "response_select_required_seq5": _resp(5, int(IIN.SELECT_REQUIRED)),
    "response_bi0_ai1_seq15": _resp(15, 0, [PointValue(BI, 0, 1, 7), PointValue(AI, 1, -5, 7)]),
    "unsolicited_restart_ai3_seq0": Dnp3Message(
        Direction.UNSOLICITED, 0, Function.UNSOLICITED, int(IIN.DEVICE_RESTART), (PointValue(AI, 3, 10000, 1),)
    ),
}


@pytest.mark.parametrize("name", sorted(GOLDEN_MESSAGES))
def test_golden_bytes(name):
    msg = GOLDEN_MESSAGES[name]
    assert encode(msg).hex() == GOLDEN[name]
    assert decode(bytes.fromhex(GOLDEN[name])) == msg


def test_poll_starts_with_marker():
    assert encode(class0_poll(0))[:2] == b"\x05\x64"


@pytest.mark.parametrize(
    "msg, rule",
    [
        (Dnp3Message(Direction.REQUEST, 16, Function.READ), "seq_range"),
        (Dnp3Message(Direction.REQUEST, 0, Function.READ, iin=1), "request_iin"),
        (Dnp3Message(Direction.REQUEST, 0, Function.RESPONSE), "function_direction"),
        (Dnp3Message(Direction.RESPONSE, 0, Function.READ), "function_direction"),
        (_resp(0, 0, [PointValue(BI, 0, 2)]), "binary_value"),
        (request(Function.OPERATE, 0, [PointValue(CROB, 0, 9)]), "crob_code"),
    ],
)
def test_encode_names_violated_rule(msg, rule):
    with pytest.raises(EncodeError, match=rule):
        encode(msg)


def test_decode_errors_are_distinct():
    with pytest.raises(TruncatedError):
        decode(b"")
    with pytest.raises(BadPreambleError):
        decode(b"\xff\xff\x00\x04\x00\x01\x00\x00")
    with pytest.raises(UnknownFunctionError):
        decode(bytes.fromhex("0564000400090000"))
    good = encode(_resp(1, 0, [PointValue(AI, 0, 5)]))
    with pytest.raises(TruncatedError):
        decode(good[:-3])
    with pytest.raises(DecodeError):
        decode(good + b"\x00")


@settings(max_examples=500)
@given(seed=st.integers(0, 2**63 - 1))
def test_roundtrip_random_valid_messages(seed):
    msg = random_message(np.random.default_rng(seed))
    assert decode(encode(msg)) == msg


@given(data=st.binary(max_size=64))
def test_decode_never_crashes_unexpectedly(data):
    try:
        msg = decode(data)
    except DecodeError:
        return
    assert encode(msg) == data


def test_timing_profile_bounds():
    t = TimingProfile(40.0, 8.0)
    rng = np.random.default_rng(0)
    assert all(t.in_bounds(t.draw(rng)) for _ in range(1000))
    with pytest.raises(ValueError):
        TimingProfile(40.0, -1.0)


@pytest.fixture
def rtu():
    return RealRtu(6, (0, 1, 2))


@pytest.fixture
def grid():
    return init_grid(6, 2)


def test_ground_truth_poll_is_clean(rtu, grid):
    req = class0_poll(3)
    resp = ground_truth_response(req, rtu, grid)
    assert validate_response(req, resp, rtu.session(), 40.0).ok
    assert set(resp.keys()) == set(rtu.point_table)


def test_seq_mismatch(rtu, grid):
    req = class0_poll(3)
    resp = ground_truth_response(req, rtu, grid)
    bad = Dnp3Message(resp.direction, 4, resp.function, resp.iin, resp.objects)
    assert validate_response(req, bad, rtu.session(), 40.0).violations == (Violation.SEQ_MISMATCH,)


def test_latency_at_twice_jitter_is_out_of_bounds(rtu, grid):
    req = class0_poll(0)
    resp = ground_truth_response(req, rtu, grid)
    t = rtu.timing
    assert validate_response(req, resp, rtu.session(), t.base_latency + t.jitter_bound).ok
    report = validate_response(req, resp, rtu.session(), t.base_latency + 2 * t.jitter_bound)
    assert report.violations == (Violation.TIMING_OUT_OF_BOUNDS,)


def test_missing_and_foreign_points(rtu, grid):
    req = class0_poll(0)
    resp = ground_truth_response(req, rtu, grid)
    short = _resp(0, 0, resp.objects[1:])
    assert Violation.MISSING_POINTS in validate_response(req, short, rtu.session(), 40.0).violations
    extra = _resp(0, 0, resp.objects + (PointValue(CROB, 0, 3),))
    assert Violation.TYPE_MISMATCH in validate_response(req, extra, rtu.session(), 40.0).violations


def test_select_before_operate(rtu, grid):
    session = rtu.session()
    crob = [PointValue(CROB, 1, int(ControlCode.LATCH_OFF))]
    operate = request(Function.OPERATE, 2, crob)
    # operate without select: the device must refuse with SELECT_REQUIRED
    resp = ground_truth_response(operate, rtu, grid, session)
    assert resp.iin & IIN.SELECT_REQUIRED
    assert validate_response(operate, resp, session, 40.0).ok
    # a spurious SELECT_REQUIRED is itself inconsistent
    select = request(Function.SELECT, 2, crob)
    sel_resp = ground_truth_response(select, rtu, grid, session)
    assert validate_response(select, sel_resp, session, 40.0).ok
    session = session.after(select, sel_resp)
    good = ground_truth_response(operate, rtu, grid, session)
    assert not good.iin & IIN.SELECT_REQUIRED
    assert validate_response(operate, good, session, 40.0).ok
    faked = _resp(2, int(IIN.SELECT_REQUIRED))
    assert Violation.IIN_INCONSISTENT in validate_response(operate, faked, session, 40.0).violations


def test_sbo_off_accepts_bare_operate(grid):
    rtu = RealRtu(6, (0, 1), select_before_operate=False)
    operate = request(Function.OPERATE, 0, [PointValue(CROB, 0, int(ControlCode.LATCH_ON))])
    resp = ground_truth_response(operate, rtu, grid)
    assert resp.iin == 0 and resp.keys() == operate.keys()


def _requests(rtu):
    keys = list(rtu.point_table)
    return st.one_of(
        st.builds(class0_poll, st.integers(0, 15)),
        st.builds(
            lambda seq, picks: request(Function.READ, seq, [PointValue(PointKind(k[0]), k[1]) for k in picks]),
            st.integers(0, 15),
            st.lists(st.sampled_from(keys + [(1, 40), (2, 99)]), min_size=1, max_size=4),
        ),
        st.builds(
            lambda fn, seq, idx, code: request(fn, seq, [PointValue(CROB, idx, code)]),
            st.sampled_from([Function.SELECT, Function.OPERATE, Function.DIRECT_OPERATE]),
            st.integers(0, 15),
            st.integers(0, 4),
            st.sampled_from([int(c) for c in ControlCode]),
        ),
    )


@settings(max_examples=200, deadline=None)
@given(data=st.data(), n_out=st.integers(0, 6))
def test_real_rtu_never_self_violates(data, n_out):
    rtu = RealRtu(6, (0, 1, 2))
    grid = init_grid(6, n_out)
    session = rtu.session()
    for req in data.draw(st.lists(_requests(rtu), min_size=1, max_size=6)):
        resp = ground_truth_response(req, rtu, grid, session)
        assert validate_response(req, resp, session, rtu.timing.base_latency).ok
        session = session.after(req, resp)


def test_render_text_shapes(rtu, grid):
    assert render_text(class0_poll(9)) == "READ CLASS0"
    assert render_text(request(Function.READ, 0, [PointValue(BI, 0), PointValue(AI, 3)])) == "READ BI0 AI3"
    resp = _resp(0, 0, [PointValue(BI, 0, 1, 5), PointValue(AI, 0, 10000, 5)])
    assert render_text(resp) == "RESPONSE IIN 0000 ; BI0 = 1 ; AI0 = 10000"
