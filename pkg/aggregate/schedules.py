"""Mixing-ratio and communication schedules for the global learner."""

import bisect
import logging
from dataclasses import dataclass

from numeric.errors import ConfigError, DomainError

log = logging.getLogger(__name__)

# Warm-up before the first redistribution, as a fraction of the run.
T_PRIME_FRACTION = 0.625
DEFAULT_PERIOD = 5


@dataclass(frozen=True)
class GammaSchedule:
    """Piecewise-linear schedule over training progress in [0, 1]."""

    breakpoints: tuple

    def __post_init__(self):
        points = tuple((float(f), float(v)) for f, v in self.breakpoints)
        if len(points) < 2:
            raise ConfigError("a gamma schedule needs at least two breakpoints")
        fractions = [f for f, _ in points]
        if fractions[0] != 0.0 or fractions[-1] != 1.0:
            raise ConfigError(f"gamma breakpoints must start at 0 and end at 1, got {fractions}")
        if any(b <= a for a, b in zip(fractions, fractions[1:])):
            raise ConfigError(f"gamma breakpoints must be strictly increasing, got {fractions}")
        if any(not 0.0 <= v <= 1.0 for _, v in points):
            raise ConfigError(f"gamma values must lie in [0, 1], got {[v for _, v in points]}")
        object.__setattr__(self, "breakpoints", points)

    @classmethod
    def constant(cls, value):
        return cls(((0.0, value), (1.0, value)))

    @classmethod
    def from_stages(cls, text):
        """
        Parse stage notation such as "1.0-1.0-1.0-0.0".

        Each value is the schedule at the end of one of n equal stages; the
        first value is also held from progress 0. A single value is constant.

        Args:
            text (str): dash-separated values in [0, 1]

        Returns:
            GammaSchedule: the interpolating schedule
        """
        try:
            values = [float(part) for part in str(text).split("-")]
        except ValueError as err:
            raise ConfigError(f"bad gamma stage notation {text!r}") from err
        if len(values) == 1:
            return cls.constant(values[0])
        n = len(values)
        points = [(0.0, values[0])] + [((k + 1) / n, v) for k, v in enumerate(values)]
        return cls(tuple(points))

    def to_stages(self):
        return [list(p) for p in self.breakpoints]


def gamma_at(schedule, progress):
    if not 0.0 <= progress <= 1.0:
        raise DomainError(f"training progress {progress} outside [0, 1]")
    fractions = [f for f, _ in schedule.breakpoints]
    i = bisect.bisect_right(fractions, progress) - 1
    if i >= len(fractions) - 1:
        return schedule.breakpoints[-1][1]
    (f0, v0), (f1, v1) = schedule.breakpoints[i], schedule.breakpoints[i + 1]
    if v0 == v1:
        return v0
    return v0 + (v1 - v0) * (progress - f0) / (f1 - f0)


@dataclass(frozen=True)
class SyncSchedule:
    """Redistribution gate: from epoch t_prime on, every c epochs."""

    t_prime: int
    c: int
    total_epochs: int

    def __post_init__(self):
        if self.c < 1:
            raise ConfigError(f"communication period must be >= 1, got {self.c}")
        if not 0 <= self.t_prime <= self.total_epochs:
            raise ConfigError(f"t_prime {self.t_prime} outside [0, {self.total_epochs}]")

    @classmethod
    def default(cls, total_epochs, c=DEFAULT_PERIOD):
        return cls(int(round(T_PRIME_FRACTION * total_epochs)), c, total_epochs)


def should_redistribute(sync, t):
    if t < 0:
        raise DomainError(f"epoch counter must be nonnegative, got {t}")
    return t >= sync.t_prime and t % sync.c == 0
