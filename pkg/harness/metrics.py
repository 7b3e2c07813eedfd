import json
import logging
import time
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from attack.pgd import pgd_attack
from harness.corrupt import Corruption, corrupt
from model.mlp import predict
from numeric.core import Norm
from numeric.errors import ConfigError, DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsRecord:
    """Accuracies of one evaluation; union is the mean of the two robust accuracies."""

    epoch: int
    natural_acc: float
    robust_acc_linf: float
    robust_acc_l2: float
    union: float = None
    per_class_correct: list = field(default_factory=list)
    per_class_total: list = field(default_factory=list)
    per_class_robust_linf: list = field(default_factory=list)
    per_class_robust_l2: list = field(default_factory=list)
    wall_time_ms: int = 0
    ood: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("natural_acc", "robust_acc_linf", "robust_acc_l2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name}={value} outside [0, 1]")
        union = (self.robust_acc_linf + self.robust_acc_l2) / 2
        if self.union is None:
            object.__setattr__(self, "union", union)
        elif self.union != union:
            raise DomainError(f"union {self.union} is not the mean of {self.robust_acc_linf} and {self.robust_acc_l2}")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def round_half_up(value, digits=2):
    """Round a decimal value the way tables print it (x.xx5 rounds up)."""
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(str(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def union_percent(linf_percent, l2_percent, digits=2):
    """Union robustness of two printed percentages, e.g. (46.65, 67.12) -> 56.89."""
    total = Decimal(str(linf_percent)) + Decimal(str(l2_percent))
    return round_half_up(total / 2, digits)


def class_union(record):
    """Per-class union robustness; classes absent from the test set give None."""
    out = []
    for total, r_inf, r_two in zip(record.per_class_total, record.per_class_robust_linf, record.per_class_robust_l2):
        out.append(None if total == 0 else (r_inf + r_two) / (2 * total))
    return out


def _per_class(correct, labels, K):
    return np.bincount(labels[correct], minlength=K).astype(int).tolist()


def evaluate(model, data, attacks, epoch=0, corruptions=(), wall_clock=True):
    """
    Natural, robust and union accuracy of a model on the test split.

    Args:
        model (Model): classifier to score
        data (DatasetHandle): dataset whose test split is used
        attacks (list[AttackSpec]): exactly one linf and one l2 attack
        epoch (int): stamped on the record
        corruptions (iterable): (kind, severity, seed) triples for OOD accuracy
        wall_clock (bool): record elapsed milliseconds, 0 when False

    Returns:
        MetricsRecord: the evaluation
    """
    started = time.perf_counter()
    by_norm = {}
    for spec in attacks:
        if spec.norm in by_norm:
            raise ConfigError(f"two evaluation attacks for {spec.norm.value}")
        by_norm[spec.norm] = spec
    if set(by_norm) != {Norm.LINF, Norm.L2}:
        raise ConfigError(f"evaluation needs one linf and one l2 attack, got {[n.value for n in by_norm]}")

    batch = data.test
    if len(batch) == 0:
        raise DomainError(f"{data.name} has an empty test split")
    labels = batch.labels
    natural = predict(model, batch.inputs) == labels
    robust = {
        norm: predict(model, pgd_attack(model, batch, spec)) == labels
        for norm, spec in by_norm.items()
    }
    ood = {}
    for kind, severity, seed in corruptions:
        shifted = corrupt(data, kind, severity, seed)
        ood[f"{Corruption(kind).value}{severity}"] = float(np.mean(predict(model, shifted.test_x) == shifted.test_y))

    elapsed = int(round((time.perf_counter() - started) * 1000)) if wall_clock else 0
    record = MetricsRecord(
        epoch=int(epoch),
        natural_acc=float(np.mean(natural)),
        robust_acc_linf=float(np.mean(robust[Norm.LINF])),
        robust_acc_l2=float(np.mean(robust[Norm.L2])),
        per_class_correct=_per_class(natural, labels, data.K),
        per_class_total=np.bincount(labels, minlength=data.K).astype(int).tolist(),
        per_class_robust_linf=_per_class(robust[Norm.LINF], labels, data.K),
        per_class_robust_l2=_per_class(robust[Norm.L2], labels, data.K),
        wall_time_ms=elapsed,
        ood=ood,
    )
    log.debug("epoch %d: natural %.4f linf %.4f l2 %.4f union %.4f", record.epoch, record.natural_acc,
              record.robust_acc_linf, record.robust_acc_l2, record.union)
    return record


def write_jsonl(records, path, append=False):
    with open(path, "a" if append else "w") as f:
        for record in records:
            f.write(record.to_json() + "\n")


def read_jsonl(path):
    with open(path) as f:
        return [MetricsRecord.from_json(line) for line in f if line.strip()]
