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

import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import BARRIER_TIMEOUT_SLOTS, DEFAULT_KD_INIT, DEFAULT_LISTEN
from .exceptions import ProtocolViolationError, SwarmTuneError
from .lib.eql import (
    BootstrapTrace,
    GainPoint,
    SchedulePlan,
    SlotTiming,
    bootstrap,
    compute_schedule,
)
from .lib.plant import CostAccumulator, GainMap, PlantParams, accumulate, fly_primitive
from .lib.protocol import (
    EvalSlot,
    Event,
    MavRole,
    MavState,
    ReportBarrier,
    SimulatedClock,
    Strategy,
    aggregate,
    assign_evaluations,
    role_of,
    transition,
)
from .lib.transport import (
    AgentLink,
    CostReport,
    GainUpdate,
    Message,
    StartFlight,
    StateNotify,
    channel_pair,
)
from .lib.utils import derive_seed

logger = logging.getLogger(__name__)

PRIMITIVE_ID = 0


class MavAgent:
    """Flight agent of one MAV.

    The agent answers GAIN_UPDATE with STATE_NOTIFY(FLYING) and
    START_FLIGHT with a flight, STATE_NOTIFY(IDLE) and a COST_REPORT. A
    STATE_NOTIFY(IDLE) from the master ends the experiment.

    Every flight draws its noise from a seed derived from the experiment
    seed, the MAV id and the sequence number, so results do not depend on
    the order in which agents run.

    Parameters
    ----------
    mav_id : int
        Id of the MAV, 1 being the master.
    link : AgentLink
        The agent's end of the channel.
    params : PlantParams
        The MAV's plant.
    gain_map : GainMap
        Map to physical gains.
    experiment_seed : int
        Seed of the experiment.
    """

    def __init__(
        self,
        mav_id: int,
        link: AgentLink,
        params: PlantParams,
        gain_map: GainMap,
        experiment_seed: int,
    ):
        self.__mav_id = mav_id
        self.__role = role_of(mav_id)
        self.__link = link
        self.__params = params
        self.__gain_map = gain_map
        self.__experiment_seed = experiment_seed

        self.__state = MavState.IDLE
        self.__gains: Optional[GainPoint] = None
        self.__accumulator = CostAccumulator()
        self.__history: List[Tuple[int, float]] = []
        self.__error: Optional[BaseException] = None

    @property
    def mav_id(self) -> int:
        return self.__mav_id

    @property
    def state(self) -> MavState:
        return self.__state

    @property
    def history(self) -> List[Tuple[int, float]]:
        """(seq, cost) of every flight, in flight order."""
        return list(self.__history)

    @property
    def error(self) -> Optional[BaseException]:
        return self.__error

    def __notify(self, seq: int):
        self.__link.send(StateNotify(seq=seq, mav_id=self.__mav_id, state=self.__state.value))

    def handle(self, msg: Message) -> bool:
        """Processes one message and returns False once the experiment ended.

        Raises
        ------
        ProtocolViolationError
            If the message is not legal in the current state.
        """
        if isinstance(msg, GainUpdate):
            self.__gains = GainPoint(msg.k_p, msg.k_d)
            self.__accumulator = CostAccumulator()
            self.__state = transition(self.__role, self.__state, Event.GAINS_PUBLISHED)
            self.__notify(msg.seq)
        elif isinstance(msg, StartFlight):
            if self.__state is not MavState.FLYING or self.__gains is None:
                raise ProtocolViolationError(
                    f"MAV {self.__mav_id} got START_FLIGHT in state {self.__state.value}",
                    role=self.__role,
                    state=self.__state,
                )
            seed = derive_seed(self.__experiment_seed, self.__mav_id, msg.seq)
            outcome = fly_primitive(self.__gains, self.__params, self.__gain_map, seed)
            self.__accumulator = accumulate(self.__accumulator, outcome.cost)
            self.__history.append((msg.seq, self.__accumulator.j))
            self.__state = transition(self.__role, self.__state, Event.FLIGHT_DONE)
            self.__notify(msg.seq)
            self.__link.send(
                CostReport(seq=msg.seq, mav_id=self.__mav_id, j=self.__accumulator.j)
            )
        elif isinstance(msg, StateNotify) and msg.state == MavState.IDLE.value:
            self.__state = transition(self.__role, self.__state, Event.EXPERIMENT_IDLE)
            return False
        else:
            raise ProtocolViolationError(f"MAV {self.__mav_id} cannot handle {msg.kind}")
        return True

    def run(self):
        """Announces the agent, then serves the master until it hangs up."""
        try:
            self.__notify(0)
            while True:
                msg = self.__link.receive()
                if msg is None or not self.handle(msg):
                    break
        except Exception as err:
            logger.error("Agent %d stopped: %s", self.__mav_id, err)
            self.__error = err
            self.__link.fail(err)
        finally:
            self.__link.close()


@dataclass(frozen=True)
class SlotRecord:
    slot: EvalSlot
    costs: Dict[int, float]
    aggregated: Dict[GainPoint, float]


@dataclass
class ExperimentResult:
    """Everything a tuning run produced.

    Attributes
    ----------
    final_gains : GainPoint
        The tuned gains.
    trace : BootstrapTrace
        Estimates and EQL traces of every bootstrap round.
    slots : list of SlotRecord
        Assignments, per-MAV costs and aggregated costs of every slot.
    simulated_duration : float
        Sum of the slot durations, in s.
    total_evals : int
        Number of cost evaluations the optimizer requested.
    cost_history : dict
        (seq, cost) of every flight, per MAV id.
    final_cost : float
        Mean cost of the final gains over the swarm's plants, flown once
        more outside the schedule.
    events : list of tuple
        (seq, event, state before, state after) of the master.
    """

    seed: int
    strategy: Strategy
    nb_mavs: int
    final_gains: GainPoint
    trace: BootstrapTrace
    slots: List[SlotRecord]
    simulated_duration: float
    total_evals: int
    cost_history: Dict[int, List[Tuple[int, float]]]
    final_cost: float
    events: List[Tuple[int, str, str, str]] = field(default_factory=list)


class SwarmCoordinator:
    """The master of a swarm tuning run.

    The coordinator runs bootstrap coordinate descent over a cost oracle
    that flies every probe batch on the swarm: it packs the batch into
    evaluation slots, publishes gains and flight starts, waits at the
    barrier for every cost report, aggregates them and advances the
    simulated clock by one slot.

    Example: >>>coordinator = SwarmCoordinator(nb_mavs=2, strategy="DIST")
             >>>result = coordinator.run(seed=3)

    Parameters
    ----------
    nb_mavs : int, optional
        Swarm size. The default is 2.
    strategy : Strategy or str, optional
        "AVG" or "DIST". The default is "AVG".
    plan : SchedulePlan, optional
        The schedule. The default is epsilon 0.125 with two bootstraps.
    plants : Sequence[PlantParams], optional
        One plant per MAV. The default is identical default plants.
    gain_map : GainMap, optional
        Map to physical gains.
    kd_init : float, optional
        Initial normalized derivative gain. The default is 0.2.
    reuse : bool, optional
        Reuse retained EQL points. The default is False.
    replicate : bool, optional
        Let idle MAVs re-fly probes in DIST slots. The default is False.
    transport : str, optional
        "inproc" or "tcp". The default is "inproc".
    listen, connect : str, optional
        Addresses used in tcp mode.
    barrier_timeout_s : float, optional
        Real seconds to wait at a barrier. The default is 10 slot durations.
    allow_odd : bool, optional
        Accept an odd swarm size. The default is False.

    Raises
    ------
    ValueError
        If the swarm size is invalid or the plants do not match it.
    """

    def __init__(
        self,
        nb_mavs: int = 2,
        strategy: Strategy = Strategy.AVG,
        plan: Optional[SchedulePlan] = None,
        plants: Optional[Sequence[PlantParams]] = None,
        gain_map: Optional[GainMap] = None,
        kd_init: float = DEFAULT_KD_INIT,
        reuse: bool = False,
        replicate: bool = False,
        transport: str = "inproc",
        listen: str = DEFAULT_LISTEN,
        connect: Optional[str] = None,
        barrier_timeout_s: Optional[float] = None,
        allow_odd: bool = False,
    ):
        if nb_mavs < 2:
            raise ValueError(f"A swarm needs at least 2 MAVs, got {nb_mavs}")
        if nb_mavs % 2:
            if not allow_odd:
                raise ValueError(f"The swarm size must be even, got {nb_mavs}")
            logger.warning("Running with an odd swarm of %d MAVs", nb_mavs)

        self.__nb_mavs = nb_mavs
        self.__strategy = Strategy(strategy)
        self.__plan = plan or compute_schedule(0.125, 2)
        self.__plants = list(plants) if plants is not None else [PlantParams()] * nb_mavs
        if len(self.__plants) != nb_mavs:
            raise ValueError(f"Got {len(self.__plants)} plants for {nb_mavs} MAVs")
        self.__gain_map = gain_map or GainMap()
        self.__kd_init = kd_init
        self.__reuse = reuse
        self.__replicate = replicate
        self.__transport = transport
        self.__listen = listen
        self.__connect = connect
        self.__barrier_timeout_s = (
            barrier_timeout_s or BARRIER_TIMEOUT_SLOTS * self.__plan.slot_duration_s
        )

    @classmethod
    def from_config(cls, config, transport: Optional[str] = None) -> "SwarmCoordinator":
        """Builds a coordinator from an ExperimentConfig.

        Parameters
        ----------
        config : ExperimentConfig
            The validated config.
        transport : str, optional
            Overrides ``config.transport.mode``.

        Returns
        -------
        SwarmCoordinator
            The coordinator.
        """
        plant = config.plant
        timing = config.timing
        plants = [
            PlantParams(
                m_nominal=plant.m_nominal,
                m_payload=config.payload_of(mav_id),
                g=plant.g,
                disturb_amp=plant.disturb_amp,
                noise_sigma=plant.noise_sigma,
                filter_alpha=plant.filter_alpha,
                dt=plant.dt,
            )
            for mav_id in range(1, config.nb_mavs + 1)
        ]
        plan = compute_schedule(
            config.epsilon,
            config.bootstraps,
            SlotTiming(timing.fly_s, timing.decay_s, timing.overhead_s),
        )
        return cls(
            nb_mavs=config.nb_mavs,
            strategy=config.strategy,
            plan=plan,
            plants=plants,
            gain_map=GainMap(tuple(config.gain_map.kp_range), tuple(config.gain_map.kd_range)),
            kd_init=config.kd_init,
            reuse=config.reuse,
            replicate=config.replicate,
            transport=transport or config.transport.mode,
            listen=config.transport.listen,
            connect=config.transport.connect,
            barrier_timeout_s=config.transport.barrier_timeout_s,
            allow_odd=config.allow_odd,
        )

    @property
    def nb_mavs(self) -> int:
        return self.__nb_mavs

    @property
    def strategy(self) -> Strategy:
        return self.__strategy

    @property
    def plan(self) -> SchedulePlan:
        return self.__plan

    @property
    def plants(self) -> List[PlantParams]:
        return list(self.__plants)

    @property
    def gain_map(self) -> GainMap:
        return self.__gain_map

    def __master(self, event: Event, seq: int):
        before = self.__state
        self.__state = transition(MavRole.MASTER, before, event)
        self.__events.append((seq, event.value, before.value, self.__state.value))

    def __fly_slot(self, assignments: Dict[int, GainPoint]) -> Dict[GainPoint, float]:
        self.__seq += 1
        seq = self.__seq
        mav_ids = sorted(assignments)
        t_start = self.__clock.now_s

        for mav_id in mav_ids:
            p = assignments[mav_id]
            self.__publisher.publish(GainUpdate(seq=seq, mav_id=mav_id, k_p=p.k_p, k_d=p.k_d))
        self.__master(Event.GAINS_PUBLISHED, seq)
        for mav_id in mav_ids:
            self.__publisher.publish(
                StartFlight(seq=seq, mav_id=mav_id, primitive_id=PRIMITIVE_ID)
            )

        reports = self.__collector.wait_for_all(
            seq, len(mav_ids), self.__barrier_timeout_s, expected=mav_ids
        )
        barrier = ReportBarrier(seq, mav_ids)
        for report in reports:
            barrier.add(report)

        states = self.__collector.states
        busy = [mav_id for mav_id in mav_ids if states.get(mav_id) != MavState.IDLE.value]
        if busy:
            raise ProtocolViolationError(f"MAVs {busy} reported without returning to IDLE")

        self.__master(Event.FLIGHT_DONE, seq)
        if barrier.complete:
            self.__master(Event.ALL_REPORTS_IN, seq)

        aggregated = aggregate(self.__strategy, assignments, barrier.reports, seq)
        t_end = self.__clock.advance(self.__plan.slot_duration_s)
        slot = EvalSlot(seq, dict(assignments), t_start, t_end)
        self.__slots.append(
            SlotRecord(slot, {r.mav_id: r.j for r in barrier.reports}, aggregated)
        )
        logger.debug("Slot %d [%.0f s, %.0f s]: %s", seq, t_start, t_end, aggregated)
        return aggregated

    def __evaluate(self, points: Sequence[GainPoint]) -> List[float]:
        costs: Dict[GainPoint, float] = {}
        for assignments in assign_evaluations(
            self.__strategy, points, self.__nb_mavs, self.__replicate
        ):
            costs.update(self.__fly_slot(assignments))
        return [costs[p] for p in points]

    def __final_cost(self, gains: GainPoint, seed: int) -> float:
        costs = [
            fly_primitive(gains, plant, self.__gain_map, derive_seed(seed, mav_id, 0)).cost
            for mav_id, plant in enumerate(self.__plants, start=1)
        ]
        return float(np.mean(costs))

    def run(self, seed: int = 0) -> ExperimentResult:
        """Runs one tuning experiment.

        Parameters
        ----------
        seed : int, optional
            Experiment seed. The default is 0.

        Raises
        ------
        ProtocolViolationError
            If a MAV breaks the protocol.
        BarrierTimeoutError
            If a slot's reports did not all arrive.
        TransportError
            If a link fails.
        SwarmTuneError
            The error an agent stopped on, when one did.

        Returns
        -------
        ExperimentResult
            The result.
        """
        self.__state = MavState.IDLE
        self.__seq = 0
        self.__clock = SimulatedClock()
        self.__slots: List[SlotRecord] = []
        self.__events: List[Tuple[int, str, str, str]] = []

        mav_ids = list(range(1, self.__nb_mavs + 1))
        self.__publisher, self.__collector = channel_pair(
            self.__transport, self.__listen, self.__connect
        )
        agents = []
        threads = []
        failure = None
        try:
            for mav_id in mav_ids:
                agent = MavAgent(
                    mav_id,
                    self.__publisher.open_link(mav_id),
                    self.__plants[mav_id - 1],
                    self.__gain_map,
                    seed,
                )
                thread = threading.Thread(
                    target=agent.run, name=f"swarmtune-mav-{mav_id}", daemon=True
                )
                thread.start()
                agents.append(agent)
                threads.append(thread)
            self.__collector.wait_for_agents(mav_ids, self.__barrier_timeout_s)

            logger.info(
                "Experiment seed=%d: %d MAVs, %s, K=%d",
                seed, self.__nb_mavs, self.__strategy.value, self.__plan.nb_steps,
            )
            gains, trace = bootstrap(self.__evaluate, self.__kd_init, self.__plan, self.__reuse)
            self.__master(Event.EXPERIMENT_IDLE, self.__seq)
            for mav_id in mav_ids:
                self.__publisher.publish(
                    StateNotify(seq=self.__seq, mav_id=mav_id, state=MavState.IDLE.value)
                )
        except (SwarmTuneError, OSError) as err:
            failure = err
        finally:
            self.__publisher.close()
            for thread in threads:
                thread.join(timeout=self.__barrier_timeout_s)
        if failure is not None:
            # An agent that stopped on its own error is the root cause.
            agent_error = next((a.error for a in agents if a.error is not None), None)
            if agent_error is not None and agent_error is not failure:
                raise agent_error
            raise failure

        result = ExperimentResult(
            seed=seed,
            strategy=self.__strategy,
            nb_mavs=self.__nb_mavs,
            final_gains=gains,
            trace=trace,
            slots=self.__slots,
            simulated_duration=self.__clock.now_s,
            total_evals=trace.evaluations,
            cost_history={agent.mav_id: agent.history for agent in agents},
            final_cost=self.__final_cost(gains, seed),
            events=self.__events,
        )
        logger.info(
            "Experiment seed=%d done: k_P=%.4f k_D=%.4f after %.0f s",
            seed, gains.k_p, gains.k_d, result.simulated_duration,
        )
        return result


def run_experiment(config, seed: int, transport: Optional[str] = None) -> ExperimentResult:
    """Runs one seeded tuning experiment described by an ExperimentConfig."""
    return SwarmCoordinator.from_config(config, transport).run(seed)

