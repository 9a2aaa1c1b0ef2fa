"""Application-layer DNP3 subset: message model, byte codec and response validator.

Wire layout (all integers big-endian)::

    offset  size  field
    0       2     marker 0x05 0x64
    2       2     length: number of bytes after this field
    4       1     control: bits 7-6 direction (0 request, 1 response,
                  2 unsolicited), bits 5-4 zero, bits 3-0 sequence number
    5       1     function code
    6       2     IIN bits (response and unsolicited only)
    +0      2     object count N
    +2      11*N  objects: kind u8, index u16, value i32, timestamp u32

Link-layer framing, transport fragmentation and CRCs are not modelled.
Analog values are fixed-point integers: bus voltage in p.u. x 1e4 and power
in MW x 100.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import BadPreambleError, DecodeError, EncodeError, TruncatedError, UnknownFunctionError

PREAMBLE = b"\x05\x64"
_OBJ = struct.Struct(">BHiI")
_U16 = struct.Struct(">H")


class Direction(enum.IntEnum):
    REQUEST = 0
    RESPONSE = 1
    UNSOLICITED = 2


class Function(enum.IntEnum):
    READ = 0x01
    WRITE = 0x02
    SELECT = 0x03
    OPERATE = 0x04
    DIRECT_OPERATE = 0x05
    RESPONSE = 0x81
    UNSOLICITED = 0x82


REQUEST_FUNCTIONS = frozenset(
    {Function.READ, Function.WRITE, Function.SELECT, Function.OPERATE, Function.DIRECT_OPERATE}
)
CONTROL_FUNCTIONS = frozenset({Function.SELECT, Function.OPERATE, Function.DIRECT_OPERATE})


class PointKind(enum.IntEnum):
    BINARY_INPUT = 1
    ANALOG_INPUT = 2
    CROB = 3


class ControlCode(enum.IntEnum):
    PULSE_ON = 1
    PULSE_OFF = 2
    LATCH_ON = 3
    LATCH_OFF = 4


class IIN(enum.IntFlag):
    """Internal indications; IIN1 in the high byte, IIN2 in the low byte."""

    NONE = 0
    ALL_STATIONS = 0x0100
    CLASS1_EVENTS = 0x0200
    NEED_TIME = 0x1000
    LOCAL_CONTROL = 0x2000
    DEVICE_TROUBLE = 0x4000
    DEVICE_RESTART = 0x8000
    FUNC_NOT_SUPPORTED = 0x0001
    OBJECT_UNKNOWN = 0x0002
    PARAMETER_ERROR = 0x0004
    SELECT_REQUIRED = 0x0080


ERROR_IIN = IIN.FUNC_NOT_SUPPORTED | IIN.OBJECT_UNKNOWN | IIN.PARAMETER_ERROR | IIN.SELECT_REQUIRED


@dataclass(frozen=True)
class PointValue:
    kind: PointKind
    index: int
    value: int = 0
    timestamp: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (int(self.kind), self.index)


@dataclass(frozen=True)
class Dnp3Message:
    direction: Direction
    seq: int
    function: Function
    iin: int = 0
    objects: tuple[PointValue, ...] = ()

    @property
    def is_class0_poll(self) -> bool:
        return self.function == Function.READ and not self.objects

    def keys(self) -> tuple[tuple[int, int], ...]:
        return tuple(o.key for o in self.objects)


def check_message(message: Dnp3Message) -> None:
    """Raise ``EncodeError`` naming the first violated rule."""
    if not 0 <= message.seq <= 15:
        raise EncodeError(f"seq_range: seq={message.seq} outside 0..15")
    if not 0 <= message.iin <= 0xFFFF:
        raise EncodeError(f"iin_range: iin={message.iin:#x} exceeds 16 bits")
    direction = Direction(message.direction)
    function = Function(message.function)
    if direction is Direction.REQUEST:
        if function not in REQUEST_FUNCTIONS:
            raise EncodeError(f"function_direction: {function.name} is not a request function")
        if message.iin:
            raise EncodeError("request_iin: request messages must carry empty IIN")
    elif direction is Direction.RESPONSE and function is not Function.RESPONSE:
        raise EncodeError(f"function_direction: responses use RESPONSE, got {function.name}")
    elif direction is Direction.UNSOLICITED and function is not Function.UNSOLICITED:
        raise EncodeError(f"function_direction: unsolicited messages use UNSOLICITED, got {function.name}")
    if len(message.objects) > 0xFFFF:
        raise EncodeError("object_count: too many objects")
    for obj in message.objects:
        kind = PointKind(obj.kind)
        if not 0 <= obj.index <= 0xFFFF:
            raise EncodeError(f"index_range: index={obj.index}")
        if not 0 <= obj.timestamp <= 0xFFFFFFFF:
            raise EncodeError(f"timestamp_range: timestamp={obj.timestamp}")
        if not -(2**31) <= obj.value < 2**31:
            raise EncodeError(f"value_range: value={obj.value}")
        if kind is PointKind.BINARY_INPUT and obj.value not in (0, 1):
            raise EncodeError(f"binary_value: binary input {obj.index} carries {obj.value}")
        if kind is PointKind.CROB and obj.value not in set(ControlCode):
            raise EncodeError(f"crob_code: {obj.value} is not a control code")


def encode(message: Dnp3Message) -> bytes:
    check_message(message)
    body = bytearray()
    body.append((int(message.direction) << 6) | message.seq)
    body.append(int(message.function))
    if message.direction != Direction.REQUEST:
        body += _U16.pack(message.iin)
    body += _U16.pack(len(message.objects))
    for obj in message.objects:
        body += _OBJ.pack(int(obj.kind), obj.index, obj.value, obj.timestamp)
    return PREAMBLE + _U16.pack(len(body)) + bytes(body)


def decode(data: bytes) -> Dnp3Message:
    data = bytes(data)
    if len(data) < 2:
        raise TruncatedError(f"need at least 2 marker bytes, got {len(data)}")
    if data[:2] != PREAMBLE:
        raise BadPreambleError(f"bad marker {data[:2].hex()}")
    if len(data) < 4:
        raise TruncatedError("missing length field")
    (length,) = _U16.unpack_from(data, 2)
    body = data[4:]
    if len(body) < length:
        raise TruncatedError(f"length field says {length} bytes, only {len(body)} present")
    if len(body) > length:
        raise DecodeError(f"{len(body) - length} trailing bytes after frame")
    if length < 2:
        raise TruncatedError("missing control or function octet")
    control, fcode = body[0], body[1]
    if control & 0x30:
        raise DecodeError("reserved control bits set")
    try:
        direction = Direction(control >> 6)
    except ValueError:
        raise DecodeError(f"unknown direction bits {control >> 6}") from None
    try:
        function = Function(fcode)
    except ValueError:
        raise UnknownFunctionError(f"unknown function code {fcode:#04x}") from None
    pos = 2
    iin = 0
    if direction is not Direction.REQUEST:
        if length < pos + 2:
            raise TruncatedError("missing IIN")
        (iin,) = _U16.unpack_from(body, pos)
        pos += 2
    if length < pos + 2:
        raise TruncatedError("missing object count")
    (count,) = _U16.unpack_from(body, pos)
    pos += 2
    if length != pos + count * _OBJ.size:
        raise TruncatedError(f"object payload holds {length - pos} bytes, expected {count * _OBJ.size}")
    objects = []
    for _ in range(count):
        kind, index, value, ts = _OBJ.unpack_from(body, pos)
        pos += _OBJ.size
        try:
            kind = PointKind(kind)
        except ValueError:
            raise DecodeError(f"unknown object kind {kind}") from None
        objects.append(PointValue(kind, index, value, ts))
    msg = Dnp3Message(direction, control & 0x0F, function, iin, tuple(objects))
    try:
        check_message(msg)
    except EncodeError as exc:
        raise DecodeError(str(exc)) from None
    return msg


def request(function: Function, seq: int, objects: Iterable[PointValue] = ()) -> Dnp3Message:
    return Dnp3Message(Direction.REQUEST, seq % 16, function, 0, tuple(objects))


def class0_poll(seq: int) -> Dnp3Message:
    return request(Function.READ, seq)


# --- timing -----------------------------------------------------------------


@dataclass(frozen=True)
class TimingProfile:
    base_latency: float = 40.0  # milliseconds
    jitter_bound: float = 8.0

    def __post_init__(self):
        if self.jitter_bound < 0:
            raise ValueError("jitter_bound must be >= 0")

    def draw(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.base_latency - self.jitter_bound, self.base_latency + self.jitter_bound))

    def in_bounds(self, latency: float) -> bool:
        return self.base_latency - self.jitter_bound <= latency <= self.base_latency + self.jitter_bound


# --- sessions and validation -----------------------------------------------


class Violation(str, enum.Enum):
    SEQ_MISMATCH = "seq_mismatch"
    MISSING_POINTS = "missing_points"
    TYPE_MISMATCH = "type_mismatch"
    TIMING_OUT_OF_BOUNDS = "timing_out_of_bounds"
    IIN_INCONSISTENT = "iin_inconsistent"


@dataclass(frozen=True)
class SessionState:
    """What the requesting side knows about one master-outstation session."""

    point_table: tuple[tuple[int, int], ...]
    timing: TimingProfile = field(default_factory=TimingProfile)
    select_before_operate: bool = True
    allowed_functions: frozenset[Function] | None = None
    # (seq, object keys) of the last acknowledged SELECT
    pending_select: tuple[int, tuple[tuple[int, int], ...]] | None = None

    def select_matches(self, req: Dnp3Message) -> bool:
        return self.pending_select == (req.seq, req.keys())

    def after(self, req: Dnp3Message, resp: Dnp3Message) -> "SessionState":
        """Session bookkeeping once ``resp`` answered ``req``."""
        if req.function == Function.SELECT and not (resp.iin & ERROR_IIN):
            return replace(self, pending_select=(req.seq, req.keys()))
        if req.function in (Function.OPERATE, Function.DIRECT_OPERATE) or req.function == Function.SELECT:
            return replace(self, pending_select=None)
        return self


def expects_select_required(req: Dnp3Message, session: SessionState) -> bool:
    return (
        req.function == Function.OPERATE
        and session.select_before_operate
        and not session.select_matches(req)
    )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)


def validate_response(
    request_msg: Dnp3Message,
    response_msg: Dnp3Message,
    session: SessionState,
    latency: float,
) -> ValidationReport:
    """Structural, stateful and timing checks of one exchange."""
    found: list[Violation] = []
    if response_msg.direction == Direction.RESPONSE and response_msg.seq != request_msg.seq:
        found.append(Violation.SEQ_MISMATCH)

    iin = IIN(response_msg.iin)
    errored = bool(iin & ERROR_IIN)
    want_sbo = expects_select_required(request_msg, session)
    unsupported = (
        session.allowed_functions is not None and request_msg.function not in session.allowed_functions
    )
    if bool(iin & IIN.SELECT_REQUIRED) != want_sbo or bool(iin & IIN.FUNC_NOT_SUPPORTED) != unsupported:
        found.append(Violation.IIN_INCONSISTENT)

    table = set(session.point_table)
    got = [o.key for o in response_msg.objects]
    if not errored:
        if request_msg.function == Function.READ:
            expected = table if request_msg.is_class0_poll else set(request_msg.keys())
        elif request_msg.function in CONTROL_FUNCTIONS:
            expected = set(request_msg.keys())
        else:
            expected = set()
        if not expected <= set(got):
            found.append(Violation.MISSING_POINTS)

    if request_msg.function == Function.READ:
        crob = int(PointKind.CROB)
        if any(k[0] == crob or (table and k not in table) for k in got):
            found.append(Violation.TYPE_MISMATCH)
    elif request_msg.function in CONTROL_FUNCTIONS:
        if any(k not in set(request_msg.keys()) for k in got):
            found.append(Violation.TYPE_MISMATCH)

    if not session.timing.in_bounds(latency):
        found.append(Violation.TIMING_OUT_OF_BOUNDS)
    return ValidationReport(tuple(found))


# --- text rendering for the language model ---------------------------------

_KIND_TAG = {PointKind.BINARY_INPUT: "BI", PointKind.ANALOG_INPUT: "AI", PointKind.CROB: "CROB"}


def render_text(message: Dnp3Message) -> str:
    """Line-oriented rendering used as language-model text. Omits seq and timestamps."""
    parts = [Function(message.function).name]
    if message.direction != Direction.REQUEST:
        parts.append(f"IIN {message.iin:04x}")
    if message.is_class0_poll:
        parts.append("CLASS0")
    for obj in message.objects:
        tag = _KIND_TAG[PointKind(obj.kind)]
        if message.direction == Direction.REQUEST and obj.kind != PointKind.CROB:
            parts.append(f"{tag}{obj.index}")
        else:
            parts.append(f"; {tag}{obj.index} = {obj.value}")
    return " ".join(parts)
