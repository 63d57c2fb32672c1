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
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PROGRAM_NAME = "swarmtune"

# Flight model.
GRAVITY = 9.81
DEFAULT_M_NOMINAL = 2.3
DEFAULT_DISTURB_AMP = 0.3
DEFAULT_NOISE_SIGMA = 0.01
DEFAULT_FILTER_ALPHA = 0.2
DEFAULT_DT = 0.01
PRIMITIVE_DURATION_S = 8.0
DIVERGENCE_COST = 1e9

# Physical gain ranges the unit box maps onto.
KP_PHYS_RANGE = (0.5, 10.0)  # s^-2
KD_PHYS_RANGE = (0.1, 6.0)  # s^-1

# Schedule.
DEFAULT_EPSILON = 0.125
DEFAULT_KD_INIT = 0.2
DEFAULT_BOOTSTRAPS = 2
SLOT_FLY_S = 8.0
SLOT_DECAY_S = 1.0
SLOT_OVERHEAD_S = 1.0

# Swarm.
DEFAULT_NB_MAVS = 2
MASTER_ID = 1
BARRIER_TIMEOUT_SLOTS = 10
DEFAULT_LISTEN = "127.0.0.1:0"

# Harness.
DEFAULT_SEEDS = tuple(range(10))
DEFAULT_GRID = 25
DEFAULT_REPS = 20
DEFAULT_SWEEP_BASE_SEED = 1000
DEFAULT_DELTA = 0.10


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantSection(_Section):
    m_nominal: float = Field(DEFAULT_M_NOMINAL, gt=0)
    m_payload: float = Field(0.0, ge=0)
    g: float = Field(GRAVITY, gt=0)
    disturb_amp: float = Field(DEFAULT_DISTURB_AMP, ge=0)
    noise_sigma: float = Field(DEFAULT_NOISE_SIGMA, ge=0)
    filter_alpha: float = Field(DEFAULT_FILTER_ALPHA, gt=0, le=1)
    dt: float = Field(DEFAULT_DT, gt=0, le=1)


class GainMapSection(_Section):
    kp_range: Tuple[float, float] = KP_PHYS_RANGE
    kd_range: Tuple[float, float] = KD_PHYS_RANGE

    @field_validator("kp_range", "kd_range")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not value[0] < value[1]:
            raise ValueError(f"range needs lo < hi, got {list(value)}")
        return value


class TimingSection(_Section):
    fly_s: float = Field(SLOT_FLY_S, gt=0)
    decay_s: float = Field(SLOT_DECAY_S, ge=0)
    overhead_s: float = Field(SLOT_OVERHEAD_S, ge=0)


class TransportSection(_Section):
    mode: Literal["inproc", "tcp"] = "inproc"
    listen: str = DEFAULT_LISTEN
    # Address the agents dial, defaults to wherever the master is bound.
    connect: Optional[str] = None
    # Real seconds to wait at a barrier, defaults to 10 slot durations.
    barrier_timeout_s: Optional[float] = Field(None, gt=0)

    @field_validator("listen", "connect")
    @classmethod
    def _host_port(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            parse_address(value)
        return value


class SweepSection(_Section):
    grid: int = Field(DEFAULT_GRID, ge=2)
    reps: int = Field(DEFAULT_REPS, ge=1)
    base_seed: int = Field(DEFAULT_SWEEP_BASE_SEED, ge=0)


class VerifySection(_Section):
    delta: float = Field(DEFAULT_DELTA, ge=0)


class ExperimentConfig(_Section):
    """Validated description of an experiment.

    One file drives ``run``, ``sweep`` and ``verify``, so the tuner and the
    grid oracle always share the same plant.
    """

    nb_mavs: int = Field(DEFAULT_NB_MAVS, ge=2)
    strategy: Literal["AVG", "DIST"] = "AVG"
    epsilon: float = Field(DEFAULT_EPSILON, gt=0, lt=1)
    kd_init: float = Field(DEFAULT_KD_INIT, ge=0, le=1)
    bootstraps: int = Field(DEFAULT_BOOTSTRAPS, ge=1)
    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS), min_length=1)
    reuse: bool = False
    replicate: bool = False
    allow_odd: bool = False
    mav_payloads: Optional[List[float]] = None

    plant: PlantSection = Field(default_factory=PlantSection)
    gain_map: GainMapSection = Field(default_factory=GainMapSection)
    timing: TimingSection = Field(default_factory=TimingSection)
    transport: TransportSection = Field(default_factory=TransportSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    verify: VerifySection = Field(default_factory=VerifySection)

    @field_validator("seeds")
    @classmethod
    def _non_negative_seeds(cls, value: List[int]) -> List[int]:
        if any(seed < 0 for seed in value):
            raise ValueError("seeds must be non-negative")
        return value

    @field_validator("mav_payloads")
    @classmethod
    def _non_negative_payloads(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(not math.isfinite(m) or m < 0 for m in value):
            raise ValueError("payloads must be finite and non-negative")
        return value

    @model_validator(mode="after")
    def _check_swarm(self) -> "ExperimentConfig":
        if self.nb_mavs % 2 and not self.allow_odd:
            raise ValueError(
                f"nb_mavs must be even, got {self.nb_mavs} (set allow_odd to override)"
            )
        if self.mav_payloads is not None and len(self.mav_payloads) != self.nb_mavs:
            raise ValueError(
                f"mav_payloads needs {self.nb_mavs} entries, got {len(self.mav_payloads)}"
            )
        return self

    def payload_of(self, mav_id: int) -> float:
        """Returns the payload carried by MAV ``mav_id`` (1-based)."""
        if self.mav_payloads is None:
            return self.plant.m_payload
        return self.mav_payloads[mav_id - 1]


def parse_address(address: str) -> Tuple[str, int]:
    """Splits ``HOST:PORT`` into its parts.

    Raises
    ------
    ValueError
        If the port is missing or not in [0, 65535].
    """
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"expected HOST:PORT, got {address!r}")
    return host, int(port)


def load_config(path: Union[str, Path, None] = None) -> ExperimentConfig:
    """Reads an experiment config from a JSON file.

    Parameters
    ----------
    path : str or Path, optional
        The file. Without a path the defaults are returned.

    Raises
    ------
    pydantic.ValidationError
        If a field is invalid or unknown.
    OSError
        If the file cannot be read.

    Returns
    -------
    ExperimentConfig
        The validated config.
    """
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
