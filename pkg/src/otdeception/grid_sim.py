"""Bus-status bookkeeping for the critical loads of a radial feeder.

No power flow is solved; the physical reward only needs the number of
critical buses still waiting for restoration.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class GridConfig:
    n_critical: int = 14
    n_initial_outages: int = 11
    # outages applied when a malicious command reaches a real RTU
    compromise_outages: int = 2


@dataclass(frozen=True)
class GridState:
    restored: tuple[bool, ...]
    outage_lines: frozenset[int] = frozenset()

    @property
    def critical_buses(self) -> list[tuple[int, bool]]:
        return list(enumerate(self.restored))

    @property
    def n_res(self) -> int:
        return sum(1 for ok in self.restored if not ok)


def init_grid(n_critical: int, n_initial_outages: int) -> GridState:
    """Fresh feeder with the highest-id ``n_initial_outages`` buses out of service."""
    if n_critical < 0 or n_initial_outages < 0:
        raise ConfigError("bus counts must be non-negative")
    if n_initial_outages > n_critical:
        raise ConfigError(f"n_initial_outages={n_initial_outages} exceeds n_critical={n_critical}")
    up = n_critical - n_initial_outages
    restored = (True,) * up + (False,) * n_initial_outages
    return GridState(restored=restored, outage_lines=frozenset(range(up, n_critical)))


def restoration_tick(state: GridState, attacker_contained: bool) -> GridState:
    """Restore the lowest-id unrestored bus when the attacker was contained this step."""
    if not attacker_contained or state.n_res == 0:
        return state
    idx = state.restored.index(False)
    restored = state.restored[:idx] + (True,) + state.restored[idx + 1:]
    return GridState(restored=restored, outage_lines=state.outage_lines - {idx})


def apply_compromise(state: GridState, n_new_outages: int) -> GridState:
    """Trip up to ``n_new_outages`` restored buses, highest id first."""
    restored = list(state.restored)
    lines = set(state.outage_lines)
    remaining = n_new_outages
    for idx in range(len(restored) - 1, -1, -1):
        if remaining <= 0:
            break
        if restored[idx]:
            restored[idx] = False
            lines.add(idx)
            remaining -= 1
    return GridState(restored=tuple(restored), outage_lines=frozenset(lines))
