"""Shared builders for randomized DNP3 traffic."""

import numpy as np

from otdeception.dnp3 import ControlCode, Direction, Dnp3Message, Function, PointKind, PointValue

REQ_FNS = [Function.READ, Function.WRITE, Function.SELECT, Function.OPERATE, Function.DIRECT_OPERATE]


def random_point(rng, kind=None):
    kind = kind or PointKind(int(rng.integers(1, 4)))
    if kind == PointKind.BINARY_INPUT:
        value = int(rng.integers(2))
    elif kind == PointKind.CROB:
        value = int(rng.choice([int(c) for c in ControlCode]))
    else:
        value = int(rng.integers(-(2**31), 2**31))
    return PointValue(kind, int(rng.integers(0, 2**16)), value, int(rng.integers(0, 2**32)))


def random_message(rng):
    direction = Direction(int(rng.integers(3)))
    if direction == Direction.REQUEST:
        fn, iin = REQ_FNS[int(rng.integers(len(REQ_FNS)))], 0
    else:
        fn = Function.RESPONSE if direction == Direction.RESPONSE else Function.UNSOLICITED
        iin = int(rng.integers(0, 2**16))
    objects = tuple(random_point(rng) for _ in range(int(rng.integers(0, 6))))
    return Dnp3Message(direction, int(rng.integers(16)), fn, iin, objects)
