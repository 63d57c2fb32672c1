# This code is part of SwarmTune.
#
# (C) Copyright SwarmTune developers, 2026.
#
# This code is licensed under the Apache License, Version 2.0. You may
# obtain a copy of this license in the LICENSE.txt file in the root directory
# of this source tree or at http://www.apache.org/licenses/LICENSE-2.0.
#
# Any modifications or derivative works of this code must retain this
# copyright notice, and modified files need to carry a notice indicating
# that they have been altered from the originals.

"""Master/slave state machines, evaluation slot assignment, cost aggregation
and the simulated time accounting of a swarm tuning run."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence

import numpy as np

from ..config import MASTER_ID
from ..exceptions import BarrierTimeoutError, ProtocolViolationError
from .eql import GainPoint, SchedulePlan


class MavRole(str, Enum):
    MASTER = "MASTER"
    SLAVE = "SLAVE"


class MavState(str, Enum):
    IDLE = "IDLE"
    FLYING = "FLYING"
    OPTIMIZE = "OPTIMIZE"


class Strategy(str, Enum):
    AVG = "AVG"
    DIST = "DIST"


class Event(str, Enum):
    GAINS_PUBLISHED = "gains-published"
    FLIGHT_DONE = "flight-done"
    ALL_REPORTS_IN = "all-reports-in"
    EXPERIMENT_IDLE = "experiment-idle"


_COMMON = {
    (MavState.IDLE, Event.GAINS_PUBLISHED): MavState.FLYING,
    (MavState.FLYING, Event.FLIGHT_DONE): MavState.IDLE,
    (MavState.IDLE, Event.EXPERIMENT_IDLE): MavState.IDLE,
}

_TRANSITIONS = {
    MavRole.SLAVE: dict(_COMMON),
    MavRole.MASTER: {
        **_COMMON,
        (MavState.IDLE, Event.ALL_REPORTS_IN): MavState.OPTIMIZE,
        (MavState.OPTIMIZE, Event.GAINS_PUBLISHED): MavState.FLYING,
        (MavState.OPTIMIZE, Event.EXPERIMENT_IDLE): MavState.IDLE,
    },
}


def role_of(mav_id: int) -> MavRole:
    return MavRole.MASTER if mav_id == MASTER_ID else MavRole.SLAVE


def transition(role: MavRole, state: MavState, event: Event) -> MavState:
    """Applies one protocol event to a MAV's state.

    Parameters
    ----------
    role : MavRole
        Role of the MAV. Only the master owns the OPTIMIZE state.
    state : MavState
        The current state.
    event : Event
        The event.

    Raises
    ------
    ProtocolViolationError
        If the event is not legal for this role and state.

    Returns
    -------
    MavState
        The next state.
    """
    role, state, event = MavRole(role), MavState(state), Event(event)
    try:
        return _TRANSITIONS[role][(state, event)]
    except KeyError:
        raise ProtocolViolationError(
            f"Illegal event {event.value} for {role.value} in state {state.value}",
            role=role,
            state=state,
            event=event,
        ) from None


@dataclass(frozen=True)
class EvalSlot:
    """One synchronized flight period and who flew what in it."""

    seq: int
    assignments: Dict[int, GainPoint]
    t_start: float
    t_end: float


def assign_evaluations(
    strategy: Strategy, probes: Sequence[GainPoint], nb_mavs: int, replicate: bool = False
) -> List[Dict[int, GainPoint]]:
    """Packs a probe batch into evaluation slots.

    MAV ids run from 1 to ``nb_mavs``.

    Parameters
    ----------
    strategy : Strategy
        AVG gives every probe its own slot, flown by the whole swarm. DIST
        hands out consecutive probes to consecutive MAVs, up to
        ``nb_mavs`` probes per slot.
    probes : Sequence[GainPoint]
        The batch, in order.
    nb_mavs : int
        Swarm size.
    replicate : bool, optional
        Under DIST, let MAVs left without a probe re-fly the slot's probes
        round-robin. The default is False.

    Raises
    ------
    ValueError
        If ``probes`` is empty or the swarm is too small.

    Returns
    -------
    List[Dict[int, GainPoint]]
        One MAV id to probe map per slot.
    """
    if not probes:
        raise ValueError("Cannot assign an empty probe batch!")
    strategy = Strategy(strategy)
    if nb_mavs < 1 or (strategy is Strategy.DIST and nb_mavs < 2):
        raise ValueError(f"Swarm of {nb_mavs} MAVs is too small for {strategy.value}")

    ids = range(1, nb_mavs + 1)
    if strategy is Strategy.AVG:
        return [{mav_id: probe for mav_id in ids} for probe in probes]

    slots = []
    for start in range(0, len(probes), nb_mavs):
        chunk = list(probes[start:start + nb_mavs])
        nb_mavs_used = nb_mavs if replicate else len(chunk)
        slots.append({ids[i]: chunk[i % len(chunk)] for i in range(nb_mavs_used)})
    return slots


def aggregate(strategy: Strategy, assignments: Dict[int, GainPoint], reports, seq: int):
    """Turns the cost reports of one slot into one cost per probe.

    Reports of MAVs that flew the same probe are averaged, in MAV id order.

    Parameters
    ----------
    strategy : Strategy
        Under AVG the slot must hold a single probe.
    assignments : Dict[int, GainPoint]
        Who flew what.
    reports : Iterable
        Objects with ``seq``, ``mav_id`` and ``j`` attributes.
    seq : int
        Sequence number of the slot.

    Raises
    ------
    ProtocolViolationError
        On a stale, duplicate or unexpected report.
    BarrierTimeoutError
        If an assigned MAV did not report.

    Returns
    -------
    Dict[GainPoint, float]
        Aggregated cost of every probe of the slot.
    """
    by_mav = {}
    for report in reports:
        if report.seq != seq:
            raise ProtocolViolationError(
                f"Report of MAV {report.mav_id} carries seq {report.seq}, expected {seq}"
            )
        if report.mav_id not in assignments:
            raise ProtocolViolationError(f"MAV {report.mav_id} was not assigned in seq {seq}")
        if report.mav_id in by_mav:
            raise ProtocolViolationError(f"Duplicate report of MAV {report.mav_id} in seq {seq}")
        by_mav[report.mav_id] = report.j

    missing = sorted(set(assignments) - set(by_mav))
    if missing:
        raise BarrierTimeoutError(f"No report from MAVs {missing} for seq {seq}", seq, missing)

    if Strategy(strategy) is Strategy.AVG and len(set(assignments.values())) != 1:
        raise ValueError("An AVG slot must assign the same gains to every MAV")

    groups: Dict[GainPoint, List[float]] = {}
    for mav_id in sorted(assignments):
        groups.setdefault(assignments[mav_id], []).append(by_mav[mav_id])
    return {probe: float(np.mean(costs)) for probe, costs in groups.items()}


class ReportBarrier:
    """Counts the COST_REPORTs of one slot.

    The master may only enter OPTIMIZE once ``complete`` is True.
    """

    def __init__(self, seq: int, expected: Sequence[int]):
        self.__seq = seq
        self.__expected = frozenset(expected)
        self.__arrived: Dict[int, object] = {}

    @property
    def seq(self) -> int:
        return self.__seq

    @property
    def complete(self) -> bool:
        return len(self.__arrived) == len(self.__expected)

    @property
    def reports(self) -> List:
        """Arrived reports, in MAV id order."""
        return [self.__arrived[mav_id] for mav_id in sorted(self.__arrived)]

    def missing(self) -> List[int]:
        return sorted(self.__expected - set(self.__arrived))

    def add(self, report) -> bool:
        """Registers a report and returns True once every MAV has reported.

        Raises
        ------
        ProtocolViolationError
            If the report belongs to another slot, to an unexpected MAV,
            or repeats an earlier one.
        """
        if report.seq != self.__seq:
            raise ProtocolViolationError(
                f"Report for seq {report.seq} reached the barrier of seq {self.__seq}"
            )
        if report.mav_id not in self.__expected:
            raise ProtocolViolationError(f"Unexpected report from MAV {report.mav_id}")
        if report.mav_id in self.__arrived:
            raise ProtocolViolationError(f"Duplicate report from MAV {report.mav_id}")
        self.__arrived[report.mav_id] = report
        return self.complete


class SimulatedClock:
    """Experiment time, in simulated seconds. Only slots move it."""

    def __init__(self, start_s: float = 0.0):
        if start_s < 0:
            raise ValueError("start_s must be non-negative")
        self.__now_s = float(start_s)

    @property
    def now_s(self) -> float:
        return self.__now_s

    def advance(self, delta_s: float) -> float:
        if delta_s < 0:
            raise ValueError("delta_s must be non-negative")
        self.__now_s += delta_s
        return self.__now_s


def slots_per_batch(strategy: Strategy, batch_size: int, nb_mavs: int) -> int:
    if Strategy(strategy) is Strategy.AVG:
        return batch_size
    return math.ceil(batch_size / nb_mavs)


def simulated_duration(plan: SchedulePlan, strategy: Strategy, nb_mavs: int) -> float:
    """Planned length of a tuning run, in simulated seconds.

    Every EQL run flies one endpoint batch and K interior pairs.

    Parameters
    ----------
    plan : SchedulePlan
        The schedule.
    strategy : Strategy
        AVG or DIST.
    nb_mavs : int
        Swarm size.

    Returns
    -------
    float
        Number of slots times the slot duration.
    """
    batches = [2] * (plan.nb_steps + 1)
    per_run = sum(slots_per_batch(strategy, size, nb_mavs) for size in batches)
    slots = per_run * plan.nb_params * plan.bootstraps
    return slots * plan.slot_duration_s
