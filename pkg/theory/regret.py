import logging
import math
from dataclasses import dataclass

import numpy as np

from numeric.errors import DomainError, NumericError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegretLedger:
    """Realized per-task losses (|A| x T) and each task's best-fixed cumulative loss."""

    per_task_losses: np.ndarray
    oracle_losses: tuple
    bounded: bool = False

    def __post_init__(self):
        rows = [np.asarray(row, dtype=np.float64).reshape(-1) for row in self.per_task_losses]
        if not rows:
            raise ShapeError("regret ledger has no tasks")
        if len({row.shape[0] for row in rows}) != 1:
            raise ShapeError(f"tasks have different horizons: {[row.shape[0] for row in rows]}")
        losses = np.stack(rows)
        oracle = tuple(float(v) for v in self.oracle_losses)
        if len(oracle) != losses.shape[0]:
            raise ShapeError(f"{len(oracle)} oracle values for {losses.shape[0]} tasks")
        if not (np.all(np.isfinite(losses)) and all(math.isfinite(v) for v in oracle)):
            raise NumericError("regret ledger holds non-finite losses")
        if self.bounded and (losses.min() < 0.0 or losses.max() > 1.0):
            raise DomainError("bounded ledger has losses outside [0, 1]")
        object.__setattr__(self, "per_task_losses", losses)
        object.__setattr__(self, "oracle_losses", oracle)

    @property
    def horizon(self):
        return self.per_task_losses.shape[1]


def regret(ledger):
    """(1/|A|) * sum over tasks of (cumulative realized loss - oracle loss)."""
    gaps = [math.fsum(row) - oracle for row, oracle in zip(ledger.per_task_losses, ledger.oracle_losses)]
    return math.fsum(gaps) / len(gaps)
