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

import math

import numpy as np
import pytest

from swarmtune.exceptions import ContractViolationError, OutOfRangeError, UnknownSurfaceError
from swarmtune.lib.eql import GainPoint
from swarmtune.lib.plant import (
    OMEGA,
    CostAccumulator,
    GainMap,
    PlantParams,
    PlantState,
    accumulate,
    fly_batch,
    fly_primitive,
    map_gains,
    pd_thrust,
    reference_primitive,
    step_dynamics,
    synthetic_cost,
)


def test_reference_primitive_1():
    z, v, a = reference_primitive(0.0)

    assert z == 0.0
    assert v == 0.0
    assert a == pytest.approx(0.5 * OMEGA**2)


def test_reference_primitive_2():
    z, v, _ = reference_primitive(4.0)
    assert z == pytest.approx(1.0)
    assert v == pytest.approx(0.0, abs=1e-12)

    z, _, _ = reference_primitive(8.0)
    assert z == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("t", [-0.01, 8.01, float("nan")])
def test_reference_primitive_3(t):
    with pytest.raises(OutOfRangeError):
        reference_primitive(t)


def test_map_gains():
    gm = GainMap()

    assert map_gains(GainPoint(0.0, 0.0), gm) == (0.5, 0.1)
    assert map_gains(GainPoint(1.0, 1.0), gm) == pytest.approx((10.0, 6.0))
    assert map_gains(GainPoint(0.5, 0.5), gm) == pytest.approx((5.25, 3.05))


def test_gain_map_init():
    with pytest.raises(ValueError):
        GainMap(kp_phys_range=(2.0, 1.0))


def test_pd_thrust_1():
    # No error and no reference acceleration: hover thrust.
    assert pd_thrust(3.0, 2.0, 0.0, 0.0, 0.0, 2.3, 9.81) == pytest.approx(2.3 * 9.81)


def test_pd_thrust_2():
    assert pd_thrust(10.0, 6.0, 100.0, 0.0, 0.0, 2.3, 9.81) == pytest.approx(2 * 2.3 * 9.81)
    assert pd_thrust(10.0, 6.0, -100.0, 0.0, 0.0, 2.3, 9.81) == 0.0


def test_pd_thrust_3():
    u = pd_thrust(np.array([1.0, 1.0]), np.array([0.0, 0.0]), np.array([-100.0, 0.5]),
                  np.zeros(2), 0.0, 2.3, 9.81)

    assert u[0] == 0.0
    assert u[1] == pytest.approx(2.3 * (9.81 + 0.5))


def test_step_dynamics_1():
    params = PlantParams(disturb_amp=0.0)
    s = PlantState()
    for k in range(100):
        s = step_dynamics(s, params.m_total * params.g, k * params.dt, params)

    assert s.z == pytest.approx(0.0, abs=1e-12)
    assert s.v == pytest.approx(0.0, abs=1e-12)
    assert s.t == pytest.approx(1.0)


def test_step_dynamics_2():
    # Unmodeled payload: nominal hover thrust sinks the MAV.
    params = PlantParams(m_payload=0.5, disturb_amp=0.0)
    s = step_dynamics(PlantState(), params.m_nominal * params.g, 0.0, params)

    assert s.v < 0
    assert s.z < 0


def test_step_dynamics_3():
    params = PlantParams(filter_alpha=1.0, disturb_amp=0.0)
    s = step_dynamics(PlantState(), 30.0, 0.0, params)

    assert s.z_meas_filtered == s.z
    assert s.v_est == pytest.approx(s.z / params.dt)


def test_step_dynamics_4():
    # Without filtering the measurement is the noisy altitude itself.
    params = PlantParams(filter_alpha=1.0, noise_sigma=0.05)
    kp, kd = map_gains(GainPoint(0.5, 0.5), GainMap())
    noise = np.random.default_rng(7).normal(0.0, params.noise_sigma, 200)
    s = PlantState()
    for k, eta in enumerate(noise):
        z_ref, v_ref, a_ref = reference_primitive(k * params.dt)
        u = pd_thrust(kp, kd, z_ref - s.z_meas_filtered, v_ref - s.v_est, a_ref,
                      params.m_nominal, params.g)
        s = step_dynamics(s, u, k * params.dt, params, eta=float(eta))
        assert s.z_meas_filtered == s.z + eta


def test_velocity_bound():
    params = PlantParams(m_payload=0.9, noise_sigma=0.05)
    bound = 2.0 * params.g * 8.0
    noise = np.random.default_rng(11).normal(0.0, params.noise_sigma, 800)

    for k_p in np.linspace(0.0, 1.0, 5):
        for k_d in np.linspace(0.0, 1.0, 5):
            kp, kd = map_gains(GainPoint(float(k_p), float(k_d)), GainMap())
            s = PlantState()
            for k, eta in enumerate(noise):
                z_ref, v_ref, a_ref = reference_primitive(k * params.dt)
                u = pd_thrust(kp, kd, z_ref - s.z_meas_filtered, v_ref - s.v_est, a_ref,
                              params.m_nominal, params.g)
                s = step_dynamics(s, u, k * params.dt, params, eta=float(eta))
                assert abs(s.v) < bound


def test_noise_variance():
    seeds = list(range(20))
    points = [GainPoint(0.5, 0.5)] * len(seeds)
    variances = []
    for sigma in (0.0, 0.01, 0.05):
        params = PlantParams(disturb_amp=0.0, noise_sigma=sigma)
        costs, diverged = fly_batch(points, params, GainMap(), seeds)
        assert not diverged.any()
        variances.append(np.var(costs))

    assert variances[0] == 0.0
    assert variances[0] < variances[1] < variances[2]


def test_plant_params_init():
    assert PlantParams(m_payload=0.5).m_total == pytest.approx(2.8)
    with pytest.raises(ValueError):
        PlantParams(filter_alpha=0.0)
    with pytest.raises(ValueError):
        PlantParams(dt=0.0)
    with pytest.raises(ValueError):
        PlantParams(m_payload=-1.0)
    with pytest.raises(ValueError):
        PlantParams(noise_sigma=-0.1)


def test_fly_primitive_1():
    params, gm = PlantParams(), GainMap()
    p = GainPoint(0.6, 0.4)

    assert fly_primitive(p, params, gm, seed=3) == fly_primitive(p, params, gm, seed=3)


def test_fly_primitive_2():
    params, gm = PlantParams(noise_sigma=0.05), GainMap()
    p = GainPoint(0.6, 0.4)

    assert fly_primitive(p, params, gm, seed=1).cost != fly_primitive(p, params, gm, seed=2).cost


def test_fly_primitive_3():
    params, gm = PlantParams(noise_sigma=0.0), GainMap()
    p = GainPoint(0.6, 0.4)

    assert fly_primitive(p, params, gm, seed=1) == fly_primitive(p, params, gm, seed=2)


def test_fly_primitive_4():
    params, gm = PlantParams(), GainMap()
    stiff = fly_primitive(GainPoint(0.95, 0.95), params, gm)
    soft = fly_primitive(GainPoint(0.0, 0.0), params, gm)

    assert not stiff.diverged
    assert 0 <= stiff.cost < soft.cost


def test_fly_primitive_5():
    gm = GainMap()
    p = GainPoint(0.2, 0.5)
    bare = fly_primitive(p, PlantParams(), gm).cost
    loaded = fly_primitive(p, PlantParams(m_payload=0.5), gm).cost

    assert loaded > bare


def test_fly_primitive_6():
    params = PlantParams(seed=7)
    p = GainPoint(0.5, 0.5)

    assert fly_primitive(p, params, GainMap()) == fly_primitive(p, params, GainMap(), seed=7)


def test_fly_batch_1():
    params, gm = PlantParams(noise_sigma=0.05), GainMap()
    points = [GainPoint(0.1, 0.9), GainPoint(0.5, 0.5), GainPoint(0.9, 0.2), GainPoint(0.5, 0.5)]
    seeds = [4, 4, 11, 12]
    costs, diverged = fly_batch(points, params, gm, seeds)

    assert costs.shape == (4,)
    assert not diverged.any()
    for p, seed, cost in zip(points, seeds, costs):
        assert cost == pytest.approx(fly_primitive(p, params, gm, seed).cost, rel=1e-12)


def test_fly_batch_2():
    with pytest.raises(ValueError):
        fly_batch([GainPoint(0.5, 0.5)], PlantParams(), GainMap(), [1, 2])


def test_accumulate_1():
    acc = accumulate(accumulate(CostAccumulator(), 1.5), 2.0)

    assert acc.j == 3.5
    assert acc.samples == 2


@pytest.mark.parametrize("dj", [-0.001, float("nan")])
def test_accumulate_2(dj):
    with pytest.raises(ContractViolationError):
        accumulate(CostAccumulator(), dj)


def test_synthetic_cost_1():
    assert synthetic_cost("quadratic-bowl", GainPoint(0.5, 0.5)) == 0.0
    assert synthetic_cost("quadratic-bowl", GainPoint(0.0, 0.5)) == 0.25
    assert synthetic_cost("constant", GainPoint(0.1, 0.9)) == 1.0


def test_synthetic_cost_2():
    corner = synthetic_cost("flat-log-bowl", GainPoint(0.0, 0.0), GainPoint(1.0, 1.0))
    center = synthetic_cost("flat-log-bowl", GainPoint(0.5, 0.5))

    assert corner == pytest.approx(0.01)
    assert center == 0.0
    assert 0 < synthetic_cost("flat-log-bowl", GainPoint(0.3, 0.6)) < 0.01
    assert math.isfinite(corner)


def test_synthetic_cost_3():
    with pytest.raises(UnknownSurfaceError):
        synthetic_cost("saddle", GainPoint(0.5, 0.5))
