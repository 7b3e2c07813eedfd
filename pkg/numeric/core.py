import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from numeric.errors import ConfigError, DomainError, LayoutError, NumericError

log = logging.getLogger(__name__)

FLOAT = np.float64
WEIGHT_SUM_TOL = 1e-12

# Stream ids for RngStream; learner-owned streams add the learner index.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_DATA = 2
STREAM_CORRUPT = 3
STREAM_ATTACK = 100
STREAM_THEORY = 200


class Norm(str, Enum):
    LINF = "linf"
    L2 = "l2"

    @classmethod
    def parse(cls, value):
        """Accept 'linf', 'l2', 2, inf or a Norm and return the Norm."""
        if isinstance(value, Norm):
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if value == 2:
                return cls.L2
            if math.isinf(value):
                return cls.LINF
        text = str(value).strip().lower()
        if text in ("linf", "inf", "l_inf", "infinity"):
            return cls.LINF
        if text in ("l2", "2"):
            return cls.L2
        raise DomainError(f"unsupported norm {value!r}; only l2 and linf are implemented")


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Flat float64 parameter array bound to a model layout.

    The array is copied on construction and made read-only, so a vector can be
    shared between the coordinator and worker threads without locking.
    """

    values: np.ndarray
    layout_id: str

    def __post_init__(self):
        arr = np.array(self.values, dtype=FLOAT, copy=True).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite entry in parameter vector {self.layout_id}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.shape[0]

    def check_layout(self, other):
        if self.layout_id != other.layout_id or len(self) != len(other):
            raise LayoutError(f"layout {self.layout_id}[{len(self)}] vs {other.layout_id}[{len(other)}]")

    def replace(self, values):
        return ParameterVector(values, self.layout_id)

    def equals(self, other):
        """Bit-identical comparison, layout included."""
        return self.layout_id == other.layout_id and np.array_equal(self.values, other.values)

    @classmethod
    def zeros(cls, size, layout_id):
        return cls(np.zeros(size, dtype=FLOAT), layout_id)


class RngStream:
    """Seeded PCG64 stream identified by (seed, stream_id, substream).

    The same triple yields the same draw sequence on every run and platform.
    A stream is owned by a single worker; it is never shared across threads.
    """

    def __init__(self, seed, stream_id, substream=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.substream = int(substream)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, self.substream))
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, substream={self.substream})"

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    @property
    def state(self):
        return self.generator.bit_generator.state

    @state.setter
    def state(self, value):
        self.generator.bit_generator.state = value

    def clone(self):
        twin = RngStream(self.seed, self.stream_id, self.substream)
        twin.state = self.state
        return twin


def convex_combine(params, weights):
    """
    Weighted sum of parameter vectors with convex weights.

    Args:
        params (list[ParameterVector]): vectors sharing one layout
        weights (list[float]): nonnegative weights summing to 1 within 1e-12

    Returns:
        ParameterVector: the combination, clipped coordinatewise into the
        [min, max] envelope of the inputs
    """
    if len(params) == 0 or len(params) != len(weights):
        raise ConfigError(f"{len(params)} vectors for {len(weights)} weights")
    weights = [float(w) for w in weights]
    if any(w < 0.0 or not math.isfinite(w) for w in weights):
        raise ConfigError(f"mixing weights must be nonnegative, got {weights}")
    if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise ConfigError(f"mixing weights sum to {math.fsum(weights)!r}, not 1")
    first = params[0]
    for other in params[1:]:
        first.check_layout(other)

    # Canonical summation order keeps the result independent of input order.
    pairs = sorted(zip(weights, params), key=lambda pair: (pair[0], pair[1].values.tobytes()))
    out = np.zeros(len(first), dtype=FLOAT)
    for w, p in pairs:
        out += w * p.values

    stacked = np.stack([p.values for p in params])
    np.clip(out, stacked.min(axis=0), stacked.max(axis=0), out=out)
    return ParameterVector(out, first.layout_id)


def lp_norm(v, p):
    """
    Euclidean (p=2) or max-abs (p=inf) norm of a vector.

    Args:
        v (array-like): finite vector
        p: 2, inf, or a Norm

    Returns:
        float: the norm
    """
    arr = np.asarray(v, dtype=FLOAT).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NumericError("lp_norm of a non-finite vector")
    if arr.size == 0:
        return 0.0
    if Norm.parse(p) is Norm.LINF:
        return float(np.max(np.abs(arr)))
    return float(np.linalg.norm(arr))


def finite_diff_array(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of an array."""
    if h <= 0:
        raise DomainError(f"finite difference step must be positive, got {h}")
    base = np.array(x, dtype=FLOAT, copy=True)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = float(f(base))
        flat[i] = keep - h
        down = float(f(base))
        flat[i] = keep
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError(f"function returned a non-finite value probing coordinate {i}")
        out[i] = (up - down) / (2.0 * h)
    return grad


def finite_diff_grad(f, at, h=1e-5):
    """
    Central-difference gradient oracle for functions of a ParameterVector.

    Args:
        f (callable): ParameterVector -> float
        at (ParameterVector): evaluation point
        h (float): probe step, > 0

    Returns:
        ParameterVector: (f(at + h e_i) - f(at - h e_i)) / 2h per coordinate
    """
    grad = finite_diff_array(lambda arr: f(ParameterVector(arr, at.layout_id)), at.values, h)
    return ParameterVector(grad, at.layout_id)


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=FLOAT)
    n = np.asarray(numeric, dtype=FLOAT)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0
