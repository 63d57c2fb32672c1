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

import hashlib
import json
from typing import Sequence, Tuple

import numpy as np


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Returns the mean and the sample standard deviation of ``values``.

    The deviation uses the n - 1 denominator. A single value has a
    deviation of 0.

    Parameters
    ----------
    values : Sequence[float]
        At least one value.

    Raises
    ------
    ValueError
        If ``values`` is empty.

    Returns
    -------
    Tuple[float, float]
        Mean and sample standard deviation.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("Cannot summarize an empty sequence!")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(np.mean(arr)), float(np.std(arr, ddof=1))


def config_digest(config) -> str:
    """SHA-256 over the plant and gain map sections of an ExperimentConfig.

    Runs and sweeps made with the same digest fly the same plant.
    """
    payload = {
        "plant": config.plant.model_dump(mode="json"),
        "gain_map": config.gain_map.model_dump(mode="json"),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derive_seed(*entropy: int) -> int:
    """Derives a 32-bit flight seed from integer entropy words."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])
