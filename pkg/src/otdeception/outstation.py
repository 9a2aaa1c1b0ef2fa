"""Ground-truth outstation: what a real RTU answers given the feeder state."""

from __future__ import annotations

from dataclasses import dataclass

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
    expects_select_required,
)
from .grid_sim import GridState

NOMINAL_VOLTAGE = 10000  # 1.0 p.u. x 1e4


def bus_voltage(bus: int) -> int:
    return NOMINAL_VOLTAGE - 25 * (bus % 5) - 10 * (bus // 5)


def bus_load(bus: int) -> int:
    # MW x 100
    return 150 + 40 * (bus % 4) + 15 * bus


@dataclass(frozen=True)
class RealRtu:
    """A real outstation monitoring a contiguous block of critical buses.

    Point map per local bus ``k``: binary input ``k`` is the feeder breaker,
    analog input ``2k`` the bus voltage and ``2k+1`` the delivered load.
    """

    node_id: int
    buses: tuple[int, ...]
    timing: TimingProfile = TimingProfile()
    select_before_operate: bool = True

    @property
    def point_table(self) -> tuple[tuple[int, int], ...]:
        bi = [(int(PointKind.BINARY_INPUT), k) for k in range(len(self.buses))]
        ai = [(int(PointKind.ANALOG_INPUT), i) for i in range(2 * len(self.buses))]
        return tuple(bi + ai)

    def session(self) -> SessionState:
        return SessionState(
            point_table=self.point_table,
            timing=self.timing,
            select_before_operate=self.select_before_operate,
        )

    def point_values(self, grid: GridState) -> dict[tuple[int, int], int]:
        values: dict[tuple[int, int], int] = {}
        for k, bus in enumerate(self.buses):
            up = grid.restored[bus] if bus < len(grid.restored) else True
            values[(int(PointKind.BINARY_INPUT), k)] = int(up)
            values[(int(PointKind.ANALOG_INPUT), 2 * k)] = bus_voltage(bus) if up else 0
            values[(int(PointKind.ANALOG_INPUT), 2 * k + 1)] = bus_load(bus) if up else 0
        return values

    def breaker_bus(self, crob_index: int) -> int | None:
        return self.buses[crob_index] if 0 <= crob_index < len(self.buses) else None


def split_buses(n_critical: int, n_rtus: int) -> list[tuple[int, ...]]:
    """Partition bus ids into contiguous blocks, one per real RTU."""
    blocks = np.array_split(np.arange(n_critical), n_rtus)
    return [tuple(int(b) for b in block) for block in blocks]


def response_from_values(
    req: Dnp3Message,
    point_table: tuple[tuple[int, int], ...],
    values: dict[tuple[int, int], int],
    session: SessionState,
    step: int = 0,
) -> Dnp3Message:
    """Correct outstation behaviour for ``req`` given the current point values."""
    iin = IIN.NONE
    objects: list[PointValue] = []
    if req.function == Function.READ:
        keys = list(point_table) if req.is_class0_poll else list(req.keys())
        for key in keys:
            if key in values:
                objects.append(PointValue(PointKind(key[0]), key[1], values[key], step))
            else:
                iin |= IIN.OBJECT_UNKNOWN
    elif req.function in CONTROL_FUNCTIONS:
        if expects_select_required(req, session):
            iin |= IIN.SELECT_REQUIRED
        else:
            objects = [PointValue(o.kind, o.index, o.value, step) for o in req.objects]
    return Dnp3Message(Direction.RESPONSE, req.seq, Function.RESPONSE, int(iin), tuple(objects))


def ground_truth_response(
    req: Dnp3Message,
    rtu: RealRtu,
    grid: GridState,
    session: SessionState | None = None,
    step: int = 0,
) -> Dnp3Message:
    """The response a correctly behaving outstation gives to ``req``."""
    return response_from_values(req, rtu.point_table, rtu.point_values(grid), session or rtu.session(), step)
