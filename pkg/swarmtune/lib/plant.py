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

"""Altitude channel of one MAV flying the 8 s reference primitive under PD
thrust control, and the tracking cost it accumulates."""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..config import (
    DEFAULT_DISTURB_AMP,
    DEFAULT_DT,
    DEFAULT_FILTER_ALPHA,
    DEFAULT_M_NOMINAL,
    DEFAULT_NOISE_SIGMA,
    DIVERGENCE_COST,
    GRAVITY,
    KD_PHYS_RANGE,
    KP_PHYS_RANGE,
    PRIMITIVE_DURATION_S,
)
from ..exceptions import ContractViolationError, OutOfRangeError, UnknownSurfaceError
from .eql import GainPoint

logger = logging.getLogger(__name__)

OMEGA = 2.0 * math.pi / PRIMITIVE_DURATION_S
SURFACES = ("quadratic-bowl", "flat-log-bowl", "constant")


@dataclass(frozen=True)
class PlantParams:
    """Physical and sensing parameters of one simulated MAV.

    Parameters
    ----------
    m_nominal : float
        Mass the controller assumes, in kg.
    m_payload : float
        Extra mass the controller does not know about, in kg.
    g : float
        Gravity, in m/s^2.
    disturb_amp : float
        Amplitude of the sinusoidal disturbance, in m/s^2.
    noise_sigma : float
        Standard deviation of the altitude measurement noise, in m.
    filter_alpha : float
        Coefficient of the first-order low-pass filter, in (0, 1].
    dt : float
        Integration and sampling step, in s.
    seed : int
        Seed of the measurement noise stream.
    """

    m_nominal: float = DEFAULT_M_NOMINAL
    m_payload: float = 0.0
    g: float = GRAVITY
    disturb_amp: float = DEFAULT_DISTURB_AMP
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    filter_alpha: float = DEFAULT_FILTER_ALPHA
    dt: float = DEFAULT_DT
    seed: int = 0

    def __post_init__(self):
        if not self.m_nominal > 0:
            raise ValueError(f"m_nominal must be positive, got {self.m_nominal}")
        if self.m_payload < 0:
            raise ValueError(f"m_payload must be non-negative, got {self.m_payload}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 0 < self.filter_alpha <= 1:
            raise ValueError(f"filter_alpha must lie in (0, 1], got {self.filter_alpha}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def m_total(self) -> float:
        return self.m_nominal + self.m_payload


@dataclass(frozen=True)
class GainMap:
    """Affine map from the normalized unit box to physical gains."""

    kp_phys_range: Tuple[float, float] = KP_PHYS_RANGE
    kd_phys_range: Tuple[float, float] = KD_PHYS_RANGE

    def __post_init__(self):
        for name, (lo, hi) in (
            ("kp_phys_range", self.kp_phys_range),
            ("kd_phys_range", self.kd_phys_range),
        ):
            if not lo < hi:
                raise ValueError(f"{name} needs lo < hi, got [{lo}, {hi}]")


@dataclass(frozen=True)
class PlantState:
    z: float = 0.0
    v: float = 0.0
    z_meas_filtered: float = 0.0
    # Backward difference of the filtered altitude.
    v_est: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class CostAccumulator:
    j: float = 0.0
    samples: int = 0


class FlightOutcome(NamedTuple):
    cost: float
    diverged: bool


def reference_primitive(t: float) -> Tuple[float, float, float]:
    """Altitude profile of the circular primitive: up 1 m and back in 8 s.

    Parameters
    ----------
    t : float
        Time since the start of the primitive, in [0, 8] s.

    Raises
    ------
    OutOfRangeError
        If ``t`` lies outside [0, 8].

    Returns
    -------
    Tuple[float, float, float]
        Reference altitude, velocity and acceleration.
    """
    if not 0.0 <= t <= PRIMITIVE_DURATION_S:
        raise OutOfRangeError(f"t must lie in [0, {PRIMITIVE_DURATION_S}], got {t}")
    phase = OMEGA * t
    z_ref = 0.5 * (1.0 - math.cos(phase))
    v_ref = 0.5 * OMEGA * math.sin(phase)
    a_ref = 0.5 * OMEGA**2 * math.cos(phase)
    return z_ref, v_ref, a_ref


def map_gains(p: GainPoint, gm: GainMap) -> Tuple[float, float]:
    """Maps normalized gains to (kP in s^-2, kD in s^-1)."""
    kp_lo, kp_hi = gm.kp_phys_range
    kd_lo, kd_hi = gm.kd_phys_range
    return kp_lo + p.k_p * (kp_hi - kp_lo), kd_lo + p.k_d * (kd_hi - kd_lo)


def _clip(x, lo, hi):
    if isinstance(x, np.ndarray):
        return np.minimum(np.maximum(x, lo), hi)
    return min(max(x, lo), hi)


def pd_thrust(kp_phys, kd_phys, e_z, e_v, a_ref, m_nominal: float, g: float):
    """Altitude projection of the geometric thrust law.

    Works on floats and, elementwise, on numpy arrays.

    Parameters
    ----------
    kp_phys, kd_phys : float or np.ndarray
        Physical gains.
    e_z : float or np.ndarray
        Altitude error z_ref - z_meas_filtered, in m.
    e_v : float or np.ndarray
        Velocity error v_ref - v_est, in m/s.
    a_ref : float
        Reference acceleration, in m/s^2.
    m_nominal : float
        Mass the controller assumes, in kg.
    g : float
        Gravity, in m/s^2.

    Returns
    -------
    float or np.ndarray
        Thrust, clamped to [0, 2 m_nominal g], in N.
    """
    u = m_nominal * (g + a_ref + kp_phys * e_z + kd_phys * e_v)
    return _clip(u, 0.0, 2.0 * m_nominal * g)


def _advance(z, v, z_f, u, d, eta, m_total, g, alpha, dt):
    # Semi-implicit Euler, then the noisy measurement through the filter.
    a = u / m_total - g + d
    v = v + a * dt
    z = z + v * dt
    z_f_new = (1.0 - alpha) * z_f + alpha * (z + eta)
    v_est = (z_f_new - z_f) / dt
    return z, v, z_f_new, v_est


def step_dynamics(
    s: PlantState, u: float, t: float, params: PlantParams, eta: float = 0.0
) -> PlantState:
    """Integrates the altitude channel over one step of ``params.dt``.

    Parameters
    ----------
    s : PlantState
        The current state.
    u : float
        Thrust, in N.
    t : float
        Time at which the disturbance is evaluated, in s.
    params : PlantParams
        The plant.
    eta : float, optional
        Measurement noise sample for this step, in m. The default is 0.

    Returns
    -------
    PlantState
        The state one step later.
    """
    d = params.disturb_amp * math.sin(OMEGA * t)
    z, v, z_f, v_est = _advance(
        s.z, s.v, s.z_meas_filtered, u, d, eta,
        params.m_total, params.g, params.filter_alpha, params.dt,
    )
    return PlantState(z, v, z_f, v_est, s.t + params.dt)


@lru_cache(maxsize=8)
def _reference_table(dt: float):
    n = int(round(PRIMITIVE_DURATION_S / dt))
    t = np.minimum(np.arange(n + 1) * dt, PRIMITIVE_DURATION_S)
    phase = OMEGA * t
    z_ref = 0.5 * (1.0 - np.cos(phase))
    v_ref = 0.5 * OMEGA * np.sin(phase)
    a_ref = 0.5 * OMEGA**2 * np.cos(phase)
    for arr in (z_ref, v_ref, a_ref, phase):
        arr.setflags(write=False)
    return n, z_ref, v_ref, a_ref, np.sin(phase)


def _noise(params: PlantParams, seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, params.noise_sigma, n)


def fly_primitive(
    p: GainPoint, params: PlantParams, gm: GainMap, seed: Optional[int] = None
) -> FlightOutcome:
    """Flies the reference primitive once and returns its cost increment.

    The cost is the sum, over samples taken every ``dt`` after each step,
    of the absolute error between reference and true altitude.

    Parameters
    ----------
    p : GainPoint
        Normalized gains.
    params : PlantParams
        The plant.
    gm : GainMap
        Map to physical gains.
    seed : int, optional
        Noise seed. The default is ``params.seed``.

    Returns
    -------
    FlightOutcome
        The cost, or the divergence sentinel when the state blew up.
    """
    seed = params.seed if seed is None else seed
    n, z_ref, v_ref, a_ref, sin_t = _reference_table(params.dt)
    kp, kd = map_gains(p, gm)
    eta = _noise(params, seed, n).tolist()
    z_ref, v_ref, a_ref, sin_t = z_ref.tolist(), v_ref.tolist(), a_ref.tolist(), sin_t.tolist()

    m_nominal, m_total, g = params.m_nominal, params.m_total, params.g
    alpha, dt, amp = params.filter_alpha, params.dt, params.disturb_amp

    z = v = z_f = v_est = 0.0
    cost = 0.0
    for k in range(n):
        u = pd_thrust(kp, kd, z_ref[k] - z_f, v_ref[k] - v_est, a_ref[k], m_nominal, g)
        z, v, z_f, v_est = _advance(z, v, z_f, u, amp * sin_t[k], eta[k], m_total, g, alpha, dt)
        cost += abs(z_ref[k + 1] - z)

    if not (math.isfinite(cost) and math.isfinite(v)):
        logger.warning("Flight at %s diverged (seed %d)", p, seed)
        return FlightOutcome(DIVERGENCE_COST, True)
    return FlightOutcome(cost, False)


def fly_batch(
    points: Sequence[GainPoint], params: PlantParams, gm: GainMap, seeds: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized fly_primitive, one flight per (point, seed) pair.

    Each flight gives the same cost, bit for bit, as fly_primitive.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Costs and the diverged flags.
    """
    if len(points) != len(seeds):
        raise ValueError(f"Got {len(points)} points for {len(seeds)} seeds")
    n, z_ref, v_ref, a_ref, sin_t = _reference_table(params.dt)

    gains = np.array([map_gains(p, gm) for p in points], dtype=float).reshape(-1, 2)
    kp, kd = gains[:, 0], gains[:, 1]

    unique, index = np.unique(np.asarray(seeds, dtype=np.int64), return_inverse=True)
    streams = np.stack([_noise(params, int(s), n) for s in unique]).reshape(len(unique), n)
    eta = streams[index.reshape(-1)]

    m_nominal, m_total, g = params.m_nominal, params.m_total, params.g
    alpha, dt, amp = params.filter_alpha, params.dt, params.disturb_amp

    size = len(points)
    z, v, z_f, v_est = (np.zeros(size) for _ in range(4))
    cost = np.zeros(size)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            u = pd_thrust(kp, kd, z_ref[k] - z_f, v_ref[k] - v_est, a_ref[k], m_nominal, g)
            z, v, z_f, v_est = _advance(
                z, v, z_f, u, amp * sin_t[k], eta[:, k], m_total, g, alpha, dt
            )
            cost += np.abs(z_ref[k + 1] - z)

    diverged = ~(np.isfinite(cost) & np.isfinite(v))
    if diverged.any():
        logger.warning("%d of %d flights diverged", int(diverged.sum()), size)
        cost[diverged] = DIVERGENCE_COST
    return cost, diverged


def accumulate(acc: CostAccumulator, dj: float) -> CostAccumulator:
    """Adds one flight's cost increment to a MAV's running cost.

    Raises
    ------
    ContractViolationError
        If ``dj`` is negative or not a number.
    """
    if not dj >= 0:
        raise ContractViolationError(f"Cost increments must be non-negative, got {dj}")
    return CostAccumulator(acc.j + dj, acc.samples + 1)


def synthetic_cost(surface: str, p: GainPoint, p_star: GainPoint = GainPoint(0.5, 0.5)) -> float:
    """Analytic stand-ins for the flight cost, for optimizer-only runs.

    Parameters
    ----------
    surface : str
        One of "quadratic-bowl", "flat-log-bowl" or "constant".
    p : GainPoint
        Where to evaluate.
    p_star : GainPoint, optional
        Minimizer of the bowls. The default is (0.5, 0.5).

    Raises
    ------
    UnknownSurfaceError
        If ``surface`` is not known.

    Returns
    -------
    float
        The cost. The flat bowl stays within [0, 0.01] on the unit box.
    """
    r2 = (p.k_p - p_star.k_p) ** 2 + (p.k_d - p_star.k_d) ** 2
    if surface == "quadratic-bowl":
        return r2
    if surface == "flat-log-bowl":
        # r2 <= 2 on the unit box.
        return math.expm1(r2) * 0.01 / math.expm1(2.0)
    if surface == "constant":
        return 1.0
    raise UnknownSurfaceError(f"Unknown surface {surface!r}, expected one of {SURFACES}")
