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

"""Exceptions raised by SwarmTune."""

from typing import Optional, Sequence


class SwarmTuneError(Exception):
    """Base class for every error raised by the package."""


class InvalidToleranceError(SwarmTuneError, ValueError):
    """The relative tolerance is outside the open interval (0, 1)."""


class EvaluationError(SwarmTuneError):
    """A cost evaluation failed or returned a non-finite value.

    Parameters
    ----------
    message : str
        Description of the failure.
    trace : EqlTrace, optional
        The part of the EQL trace recorded before the failure.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class ContractViolationError(SwarmTuneError, ValueError):
    """A cost increment was negative."""


class OutOfRangeError(SwarmTuneError, ValueError):
    """A time instant lies outside the reference primitive."""


class UnknownSurfaceError(SwarmTuneError, ValueError):
    """The synthetic cost surface identifier is not known."""


class ProtocolViolationError(SwarmTuneError):
    """An event is not legal for the current role and state."""

    def __init__(self, message: str, role=None, state=None, event=None):
        super().__init__(message)
        self.role = role
        self.state = state
        self.event = event


class BarrierTimeoutError(SwarmTuneError):
    """Not every cost report of a slot arrived in time."""

    def __init__(self, message: str, seq: int = -1, missing: Optional[Sequence[int]] = None):
        super().__init__(message)
        self.seq = seq
        self.missing = list(missing or [])


class MalformedLineError(SwarmTuneError, ValueError):
    """A wire line could not be decoded.

    Attributes
    ----------
    offset : int
        Byte offset in the line where decoding failed.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownKindError(SwarmTuneError, ValueError):
    """A wire line names a message kind that does not exist."""


class TransportError(SwarmTuneError, ConnectionError):
    """A connection could not be established or was lost."""


class ConfigMismatchError(SwarmTuneError):
    """Run outputs and sweep outputs were produced with different plants."""
