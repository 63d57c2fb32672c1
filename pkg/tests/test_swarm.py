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

import itertools

import numpy as np
import pytest

from swarmtune.config import ExperimentConfig
from swarmtune.exceptions import EvaluationError, ProtocolViolationError
from swarmtune.lib.eql import GainPoint, SlotTiming, compute_schedule
from swarmtune.lib.plant import GainMap, PlantParams, fly_batch, fly_primitive
from swarmtune.lib.protocol import MavState, Strategy
from swarmtune.lib.transport import Collector, GainUpdate, InProcPublisher, StartFlight
from swarmtune.swarm import MavAgent, SwarmCoordinator, run_experiment


def grid_argmin(params, grid=25, seeds=(1000,)):
    values = np.linspace(0.0, 1.0, grid)
    points = [GainPoint(float(kp), float(kd)) for kp in values for kd in values]
    costs = np.mean(
        [fly_batch(points, params, GainMap(), [seed] * len(points))[0] for seed in seeds], axis=0
    )
    index = int(np.argmin(costs))
    return divmod(index, grid), float(costs[index])


def test_init_1():
    coordinator = SwarmCoordinator()

    assert coordinator.nb_mavs == 2
    assert coordinator.strategy is Strategy.AVG
    assert coordinator.plan.total_evals == 56
    assert coordinator.plants == [PlantParams(), PlantParams()]


def test_init_2():
    with pytest.raises(ValueError):
        SwarmCoordinator(nb_mavs=1)
    with pytest.raises(ValueError):
        SwarmCoordinator(nb_mavs=3)
    with pytest.raises(ValueError):
        SwarmCoordinator(nb_mavs=2, plants=[PlantParams()])
    with pytest.raises(ValueError):
        SwarmCoordinator(strategy="BEST")

    assert SwarmCoordinator(nb_mavs=3, allow_odd=True).nb_mavs == 3


def test_from_config():
    config = ExperimentConfig(
        nb_mavs=4,
        strategy="DIST",
        epsilon=0.08,
        mav_payloads=[0.0, 0.9, 0.0, 0.9],
        timing={"overhead_s": 0.0},
    )
    coordinator = SwarmCoordinator.from_config(config)

    assert coordinator.strategy is Strategy.DIST
    assert coordinator.plan.nb_steps == 7
    assert coordinator.plan.slot_duration_s == 9.0
    assert [p.m_payload for p in coordinator.plants] == [0.0, 0.9, 0.0, 0.9]


def test_run_1():
    result = SwarmCoordinator().run(seed=0)

    assert result.total_evals == 56
    assert result.simulated_duration == 560.0
    assert len(result.slots) == 56
    assert result.slots[0].slot.seq == 1
    assert result.slots[0].slot.t_start == 0.0
    assert result.slots[-1].slot.t_end == 560.0
    assert all(len(flights) == 56 for flights in result.cost_history.values())
    assert 0 <= result.final_gains.k_p <= 1
    assert result.final_cost > 0


def test_run_2():
    result = SwarmCoordinator(strategy="DIST").run(seed=0)

    assert result.total_evals == 56
    assert result.simulated_duration == 280.0
    assert len(result.slots) == 28
    assert all(len(record.slot.assignments) == 2 for record in result.slots)


def test_run_3():
    plan = compute_schedule(0.125, 2, SlotTiming(8.0, 1.0, 0.0))
    result = SwarmCoordinator(plan=plan).run(seed=0)

    assert result.simulated_duration == 504.0


def test_run_4():
    result = SwarmCoordinator().run(seed=2)
    events = result.events

    assert events[0] == (1, "gains-published", "IDLE", "FLYING")
    assert events[1] == (1, "flight-done", "FLYING", "IDLE")
    assert events[2] == (1, "all-reports-in", "IDLE", "OPTIMIZE")
    assert events[3] == (2, "gains-published", "OPTIMIZE", "FLYING")
    assert events[-1] == (56, "experiment-idle", "OPTIMIZE", "IDLE")
    # The master only optimizes once every report is in.
    for before, after in zip(events, events[1:]):
        if after[3] == MavState.OPTIMIZE.value:
            assert after[1] == "all-reports-in"
            assert before[1] == "flight-done"


def test_run_5():
    first = SwarmCoordinator(strategy="DIST").run(seed=5)
    second = SwarmCoordinator(strategy="DIST").run(seed=5)

    assert first.final_gains == second.final_gains
    assert first.trace == second.trace
    assert first.cost_history == second.cost_history


def test_run_6():
    plants = [PlantParams(noise_sigma=0.0)] * 2
    avg = SwarmCoordinator(strategy="AVG", plants=plants).run(seed=1)
    dist = SwarmCoordinator(strategy="DIST", plants=plants).run(seed=1)

    assert avg.final_gains == dist.final_gains
    assert avg.trace.estimates == dist.trace.estimates
    assert avg.simulated_duration == 2 * dist.simulated_duration


def test_run_7():
    inproc = SwarmCoordinator(transport="inproc").run(seed=4)
    tcp = SwarmCoordinator(transport="tcp").run(seed=4)

    assert inproc.final_gains == tcp.final_gains
    assert inproc.cost_history == tcp.cost_history
    assert [r.aggregated for r in inproc.slots] == [r.aggregated for r in tcp.slots]


def test_run_8():
    result = SwarmCoordinator(strategy="DIST", nb_mavs=4, replicate=True).run(seed=0)

    for record in result.slots:
        assignments = record.slot.assignments
        assert sorted(assignments) == [1, 2, 3, 4]
        for probe, cost in record.aggregated.items():
            flown = [record.costs[m] for m, p in assignments.items() if p == probe]
            assert len(flown) == 2
            assert cost == pytest.approx(np.mean(flown))


def test_run_9():
    result = SwarmCoordinator(strategy="DIST", nb_mavs=3, allow_odd=True).run(seed=0)

    assert result.simulated_duration == 280.0


def test_run_10():
    full = SwarmCoordinator().run(seed=0)
    reused = SwarmCoordinator(reuse=True).run(seed=0)

    assert reused.total_evals < full.total_evals
    assert reused.simulated_duration < full.simulated_duration


def test_run_experiment():
    config = ExperimentConfig(strategy="DIST", bootstraps=1)
    result = run_experiment(config, seed=3)

    assert result.seed == 3
    assert result.total_evals == 28
    assert result.simulated_duration == 140.0


def test_agent_1():
    publisher = InProcPublisher(Collector())
    agent = MavAgent(2, publisher.open_link(2), PlantParams(), GainMap(), 0)

    with pytest.raises(ProtocolViolationError):
        agent.handle(StartFlight(seq=1, mav_id=2, primitive_id=0))


def test_agent_2():
    collector = Collector()
    publisher = InProcPublisher(collector)
    agent = MavAgent(2, publisher.open_link(2), PlantParams(), GainMap(), 0)

    assert agent.handle(GainUpdate(seq=1, mav_id=2, k_p=0.5, k_d=0.5))
    assert agent.state is MavState.FLYING
    assert agent.handle(StartFlight(seq=1, mav_id=2, primitive_id=0))
    assert agent.state is MavState.IDLE

    (report,) = collector.wait_for_all(1, 1, timeout=1.0)
    assert report.j == agent.history[0][1]
    assert collector.states == {2: "IDLE"}
    with pytest.raises(ProtocolViolationError):
        agent.handle(StartFlight(seq=2, mav_id=2, primitive_id=0))


def test_agent_3():
    # Agents fly with their own noise streams.
    collector = Collector()
    publisher = InProcPublisher(collector)
    agents = [
        MavAgent(mav_id, publisher.open_link(mav_id), PlantParams(noise_sigma=0.05), GainMap(), 0)
        for mav_id in (1, 2)
    ]
    for agent in agents:
        agent.handle(GainUpdate(seq=1, mav_id=agent.mav_id, k_p=0.5, k_d=0.5))
        agent.handle(StartFlight(seq=1, mav_id=agent.mav_id, primitive_id=0))

    assert agents[0].history[0][1] != agents[1].history[0][1]


@pytest.mark.parametrize("transport", ["inproc", "tcp"])
def test_agent_failure(monkeypatch, transport):
    flights = itertools.count(1)

    def failing_flight(*args, **kwargs):
        if next(flights) == 6:
            raise EvaluationError("motor fault")
        return fly_primitive(*args, **kwargs)

    monkeypatch.setattr("swarmtune.swarm.fly_primitive", failing_flight)
    coordinator = SwarmCoordinator(transport=transport, barrier_timeout_s=4)

    with pytest.raises(EvaluationError, match="motor fault"):
        coordinator.run(seed=0)


def test_oracle_equivalence():
    params = PlantParams(noise_sigma=0.0)
    _, j_grid = grid_argmin(params)

    for seed in range(10):
        result = SwarmCoordinator(plants=[params] * 2).run(seed=seed)
        j_tuned = fly_primitive(result.final_gains, params, GainMap()).cost
        assert j_tuned <= 1.10 * j_grid


def test_variance_reduction():
    plants = [PlantParams(noise_sigma=0.05)] * 2
    avg = [SwarmCoordinator(strategy="AVG", plants=plants).run(seed).final_gains.k_p
           for seed in range(20)]
    dist = [SwarmCoordinator(strategy="DIST", plants=plants).run(seed).final_gains.k_p
            for seed in range(20)]

    assert np.std(avg, ddof=1) <= np.std(dist, ddof=1)


def test_payload_shift():
    # Noise dominates the bare plant, so its best k_P is low. An unmodeled
    # payload adds a steady altitude offset that only a stiffer loop removes.
    bare = PlantParams(disturb_amp=0.0, filter_alpha=1.0, noise_sigma=0.05)
    loaded = PlantParams(disturb_amp=0.0, filter_alpha=1.0, noise_sigma=0.05, m_payload=0.9)
    sweep_seeds = tuple(range(1000, 1020))

    (kp_bare, kd_bare), _ = grid_argmin(bare, seeds=sweep_seeds)
    (kp_loaded, kd_loaded), _ = grid_argmin(loaded, seeds=sweep_seeds)
    assert max(abs(kp_bare - kp_loaded), abs(kd_bare - kd_loaded)) >= 1

    seeds = range(10)
    tuned_bare = [SwarmCoordinator(plants=[bare] * 2).run(s).final_gains for s in seeds]
    tuned_loaded = [SwarmCoordinator(plants=[loaded] * 2).run(s).final_gains for s in seeds]
    check_seeds = [5000 + s for s in seeds]

    j_bare, _ = fly_batch(tuned_bare, loaded, GainMap(), check_seeds)
    j_loaded, _ = fly_batch(tuned_loaded, loaded, GainMap(), check_seeds)
    assert j_loaded.mean() <= j_bare.mean()
