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

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .lib.eql import (
    GainPoint,
    Interval,
    SchedulePlan,
    SlotTiming,
    bootstrap,
    compute_schedule,
    eql_minimize,
)
from .lib.plant import GainMap, PlantParams, fly_primitive, synthetic_cost
from .lib.protocol import Strategy, simulated_duration
from .swarm import ExperimentResult, SwarmCoordinator, run_experiment
