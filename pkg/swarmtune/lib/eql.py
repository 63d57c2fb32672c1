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

"""EQL equal-division interval reduction, bootstrap coordinate descent and
the schedule arithmetic that makes a tuning run deterministic in time."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from numbers import Real
from typing import Callable, List, Optional, Sequence, Tuple

from ..exceptions import EvaluationError, InvalidToleranceError

logger = logging.getLogger(__name__)

REDUCTION_FACTOR = 2.0 / 3.0
DEGENERATE_WIDTH = 1e-12
NB_PARAMS = 2

# Bounds on where a retained point may sit (as a fraction of the new
# interval) and still be reused without losing the 2/3 shrink bound.
_REUSE_LOW = 1.0 / 3.0 - 1e-9
_REUSE_HIGH = 2.0 / 3.0 + 1e-9


def _check_unit(name: str, value: float):
    if not isinstance(value, Real) or not math.isfinite(value):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if value < 0.0 or value > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class Interval:
    """A closed search range [lo, hi] for one normalized gain.

    Parameters
    ----------
    lo : float
        Lower bound, in [0, 1].
    hi : float
        Upper bound, in [0, 1], strictly greater than ``lo``.

    Raises
    ------
    ValueError
        If a bound is outside [0, 1] or ``lo >= hi``.
    """

    lo: float
    hi: float

    def __post_init__(self):
        _check_unit("lo", self.lo)
        _check_unit("hi", self.hi)
        if not self.lo < self.hi:
            raise ValueError(f"An interval needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, other) -> bool:
        """Returns True if a point or another interval lies inside this one."""
        if isinstance(other, Interval):
            return self.lo <= other.lo and other.hi <= self.hi
        return self.lo <= other <= self.hi


UNIT_INTERVAL = Interval(0.0, 1.0)


@dataclass(frozen=True)
class GainPoint:
    """Normalized controller gains, the decision variable of the tuner.

    Parameters
    ----------
    k_p : float
        Normalized proportional gain, in [0, 1].
    k_d : float
        Normalized derivative gain, in [0, 1].
    """

    k_p: float
    k_d: float

    def __post_init__(self):
        _check_unit("k_p", self.k_p)
        _check_unit("k_d", self.k_d)


@dataclass(frozen=True)
class SlotTiming:
    """Durations of one evaluation slot, in seconds."""

    fly_s: float = 8.0
    decay_s: float = 1.0
    overhead_s: float = 1.0

    def __post_init__(self):
        if not self.fly_s > 0:
            raise ValueError(f"fly_s must be positive, got {self.fly_s}")
        if self.decay_s < 0 or self.overhead_s < 0:
            raise ValueError("decay_s and overhead_s must be non-negative!")

    @property
    def slot_s(self) -> float:
        return self.fly_s + self.decay_s + self.overhead_s


@dataclass(frozen=True)
class SchedulePlan:
    """Evaluation and time budget of a tuning run, derived from epsilon.

    Attributes
    ----------
    epsilon : float
        Relative tolerance on the optimal gain.
    nb_steps : int
        Number K of reduction steps per parameter.
    evals_per_param : int
        Cost evaluations of one EQL run, 2K + 2.
    nb_params : int
        Number of tuned gains.
    bootstraps : int
        Maximum number of bootstrap rounds.
    slot_fly_s, slot_decay_s, slot_overhead_s : float
        Durations making up one evaluation slot.
    """

    epsilon: float
    nb_steps: int
    evals_per_param: int
    nb_params: int
    bootstraps: int
    slot_fly_s: float
    slot_decay_s: float
    slot_overhead_s: float

    @property
    def total_evals(self) -> int:
        return self.evals_per_param * self.nb_params * self.bootstraps

    @property
    def slot_duration_s(self) -> float:
        return self.slot_fly_s + self.slot_decay_s + self.slot_overhead_s

    @property
    def timing(self) -> SlotTiming:
        return SlotTiming(self.slot_fly_s, self.slot_decay_s, self.slot_overhead_s)


def compute_schedule(
    epsilon: float, bootstraps: int, timing: Optional[SlotTiming] = None
) -> SchedulePlan:
    """Derives the deterministic schedule of a tuning run.

    K is the smallest integer with (2/3)^K <= epsilon.

    Parameters
    ----------
    epsilon : float
        Relative tolerance, in the open interval (0, 1).
    bootstraps : int
        Number of bootstrap rounds, at least 1.
    timing : SlotTiming, optional
        Slot durations. The default is 8 s flight, 1 s decay, 1 s overhead.

    Raises
    ------
    InvalidToleranceError
        If epsilon is not in (0, 1).
    ValueError
        If bootstraps is not a positive integer.

    Returns
    -------
    SchedulePlan
        The schedule.
    """
    if (
        isinstance(epsilon, bool)
        or not isinstance(epsilon, Real)
        or not math.isfinite(epsilon)
        or not 0.0 < epsilon < 1.0
    ):
        raise InvalidToleranceError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if isinstance(bootstraps, bool) or not isinstance(bootstraps, int) or bootstraps < 1:
        raise ValueError(f"bootstraps must be an integer >= 1, got {bootstraps!r}")

    timing = timing or SlotTiming()

    nb_steps = 1
    while REDUCTION_FACTOR**nb_steps > epsilon:
        nb_steps += 1

    return SchedulePlan(
        epsilon=float(epsilon),
        nb_steps=nb_steps,
        evals_per_param=2 * nb_steps + 2,
        nb_params=NB_PARAMS,
        bootstraps=bootstraps,
        slot_fly_s=timing.fly_s,
        slot_decay_s=timing.decay_s,
        slot_overhead_s=timing.overhead_s,
    )


def interior_points(iv: Interval) -> Tuple[float, float]:
    """Returns the two probes splitting ``iv`` into equal thirds."""
    width = iv.hi - iv.lo
    return iv.lo + width / 3.0, iv.lo + 2.0 * width / 3.0


def _check_costs(j_minus: float, j_plus: float):
    if not (math.isfinite(j_minus) and math.isfinite(j_plus)):
        raise EvaluationError(f"Non-finite cost pair ({j_minus}, {j_plus})")


def _shrink(
    iv: Interval, p_minus: float, p_plus: float, j_minus: float, j_plus: float
) -> Tuple[Interval, str]:
    # Ties go to branch b.
    if j_minus < j_plus:
        return Interval(iv.lo, p_plus), "a"
    return Interval(p_minus, iv.hi), "b"


def reduce(iv: Interval, j_minus: float, j_plus: float) -> Interval:
    """Performs one EQL reduction step.

    Parameters
    ----------
    iv : Interval
        The current interval.
    j_minus : float
        Cost at the lower interior point.
    j_plus : float
        Cost at the upper interior point.

    Raises
    ------
    EvaluationError
        If a cost is not finite.

    Returns
    -------
    Interval
        [lo, p_plus] when ``j_minus < j_plus``, otherwise [p_minus, hi].
    """
    _check_costs(j_minus, j_plus)
    p_minus, p_plus = interior_points(iv)
    return _shrink(iv, p_minus, p_plus, j_minus, j_plus)[0]


def estimate(iv: Interval) -> float:
    """Returns the midpoint of the final interval."""
    return 0.5 * (iv.lo + iv.hi)


@dataclass(frozen=True)
class EqlStep:
    k: int
    interval: Interval
    probes: Tuple[float, float]
    costs: Tuple[float, float]
    branch: str
    # "lower"/"upper" when one probe is a retained point, None otherwise.
    reused: Optional[str] = None


@dataclass
class EqlTrace:
    """Record of one EQL run.

    Attributes
    ----------
    initial : Interval
        The starting interval.
    endpoint_costs : tuple of float
        Costs of the two initial endpoints, the pre-tuning baseline.
    steps : list of EqlStep
        One entry per reduction step, holding the interval before the step.
    final : Interval
        The interval after the last step.
    evaluations : int
        Number of scalar cost evaluations performed.
    """

    initial: Interval
    endpoint_costs: Tuple[float, ...] = ()
    steps: List[EqlStep] = field(default_factory=list)
    final: Optional[Interval] = None
    evaluations: int = 0

    @property
    def intervals(self) -> List[Interval]:
        """Returns the nested interval sequence, starting with ``initial``."""
        ret = [step.interval for step in self.steps]
        if self.final is not None:
            ret.append(self.final)
        return ret


CostOracle = Callable[[Sequence[float]], Sequence[float]]


def _evaluate(evaluate: CostOracle, points: Sequence[float], trace: EqlTrace) -> List[float]:
    try:
        costs = [float(c) for c in evaluate(list(points))]
    except EvaluationError as err:
        raise EvaluationError(str(err), trace=trace) from err

    if len(costs) != len(points):
        raise EvaluationError(
            f"The oracle returned {len(costs)} costs for {len(points)} probes", trace=trace
        )
    for point, cost in zip(points, costs):
        if not math.isfinite(cost):
            raise EvaluationError(f"Non-finite cost {cost} at p={point}", trace=trace)

    trace.evaluations += len(points)
    return costs


def eql_minimize(
    evaluate: CostOracle,
    iv0: Interval = UNIT_INTERVAL,
    nb_steps: int = 6,
    reuse: bool = False,
) -> Tuple[float, EqlTrace]:
    """Minimizes a 1-D cost over ``iv0`` with K equal-division steps.

    The two endpoints are evaluated once, in one oracle call, for baseline
    reporting. Each step then evaluates its pair of interior points in one
    oracle call, so a swarm can fly the pair in parallel.

    With ``reuse`` enabled, a point kept from the previous step replaces
    the nearer fresh third whenever it lies within the middle third of the
    new interval, and only the other probe is evaluated.

    Parameters
    ----------
    evaluate : callable
        Takes a list of probe points and returns their costs, in order.
    iv0 : Interval, optional
        The initial range. The default is [0, 1].
    nb_steps : int, optional
        Number K of reduction steps. The default is 6.
    reuse : bool, optional
        Reuse retained interior points. The default is False.

    Raises
    ------
    EvaluationError
        If the oracle fails or returns a non-finite cost. The partial
        trace is attached as ``trace``.
    ValueError
        If nb_steps is smaller than 1.

    Returns
    -------
    tuple
        The midpoint estimate and the full EqlTrace.
    """
    if nb_steps < 1:
        raise ValueError(f"nb_steps must be >= 1, got {nb_steps}")

    trace = EqlTrace(initial=iv0)
    trace.endpoint_costs = tuple(_evaluate(evaluate, [iv0.lo, iv0.hi], trace))

    iv = iv0
    retained: Optional[Tuple[float, float]] = None

    for k in range(1, nb_steps + 1):
        if iv.width < DEGENERATE_WIDTH:
            logger.debug("Interval %s is degenerate, stopping after %d steps", iv, k - 1)
            break

        p_minus, p_plus = interior_points(iv)
        reused = None
        if retained is not None:
            point, cost = retained
            fraction = (point - iv.lo) / iv.width
            if _REUSE_LOW <= fraction <= _REUSE_HIGH:
                reused = "upper" if fraction >= 0.5 else "lower"

        if reused == "upper":
            p_plus, j_plus = retained
            (j_minus,) = _evaluate(evaluate, [p_minus], trace)
        elif reused == "lower":
            p_minus, j_minus = retained
            (j_plus,) = _evaluate(evaluate, [p_plus], trace)
        else:
            j_minus, j_plus = _evaluate(evaluate, [p_minus, p_plus], trace)

        new_iv, branch = _shrink(iv, p_minus, p_plus, j_minus, j_plus)
        trace.steps.append(
            EqlStep(k, iv, (p_minus, p_plus), (j_minus, j_plus), branch, reused)
        )
        logger.debug("EQL step %d: %s -> %s (branch %s)", k, iv, new_iv, branch)

        if reuse:
            retained = (p_minus, j_minus) if branch == "a" else (p_plus, j_plus)
        iv = new_iv

    trace.final = iv
    return estimate(iv), trace


class Termination(str, Enum):
    REPEAT_POINT = "repeat-point"
    BUDGET_EXHAUSTED = "budget-exhausted"


@dataclass(frozen=True)
class BootstrapRound:
    index: int
    k_p: float
    k_d: float
    k_p_trace: EqlTrace
    k_d_trace: EqlTrace


@dataclass
class BootstrapTrace:
    """Estimates of every bootstrap round and why the loop stopped."""

    rounds: List[BootstrapRound] = field(default_factory=list)
    termination: Optional[Termination] = None

    @property
    def estimates(self) -> List[Tuple[int, float, float]]:
        return [(r.index, r.k_p, r.k_d) for r in self.rounds]

    @property
    def evaluations(self) -> int:
        return sum(r.k_p_trace.evaluations + r.k_d_trace.evaluations for r in self.rounds)


GainOracle = Callable[[Sequence[GainPoint]], Sequence[float]]


def bootstrap(
    evaluate2d: GainOracle,
    kd_init: float,
    plan: SchedulePlan,
    reuse: bool = False,
    k_p_range: Interval = UNIT_INTERVAL,
    k_d_range: Interval = UNIT_INTERVAL,
) -> Tuple[GainPoint, BootstrapTrace]:
    """Tunes (k_P, k_D) one gain at a time, as in shoe lacing.

    Every round tunes k_P over its full range with k_D held, then k_D over
    its full range with k_P held at the fresh estimate. The loop stops
    after ``plan.bootstraps`` rounds, or earlier when a round reproduces
    the estimate pair of a previous round exactly.

    Parameters
    ----------
    evaluate2d : callable
        Takes a list of GainPoint and returns their costs, in order.
    kd_init : float
        Initial normalized derivative gain, in [0, 1].
    plan : SchedulePlan
        Provides K and the number of rounds.
    reuse : bool, optional
        Forwarded to eql_minimize. The default is False.
    k_p_range, k_d_range : Interval, optional
        Feasible ranges. The default is [0, 1] for both.

    Raises
    ------
    EvaluationError
        Propagated from the oracle.

    Returns
    -------
    tuple
        The final GainPoint and the BootstrapTrace.
    """
    _check_unit("kd_init", kd_init)

    trace = BootstrapTrace()
    seen = set()
    k_d = float(kd_init)
    point = None

    for index in range(1, plan.bootstraps + 1):
        k_d_held = k_d
        k_p_hat, k_p_trace = eql_minimize(
            lambda ps: evaluate2d([GainPoint(p, k_d_held) for p in ps]),
            k_p_range,
            plan.nb_steps,
            reuse,
        )
        k_d_hat, k_d_trace = eql_minimize(
            lambda ps: evaluate2d([GainPoint(k_p_hat, p) for p in ps]),
            k_d_range,
            plan.nb_steps,
            reuse,
        )
        trace.rounds.append(BootstrapRound(index, k_p_hat, k_d_hat, k_p_trace, k_d_trace))
        point = GainPoint(k_p_hat, k_d_hat)
        logger.info("Bootstrap %d: k_P=%.4f k_D=%.4f", index, k_p_hat, k_d_hat)

        if (k_p_hat, k_d_hat) in seen:
            trace.termination = Termination.REPEAT_POINT
            return point, trace
        seen.add((k_p_hat, k_d_hat))
        k_d = k_d_hat

    trace.termination = Termination.BUDGET_EXHAUSTED
    return point, trace
