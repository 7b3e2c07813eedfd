"""Single-model joint-training baselines."""

import logging
from dataclasses import dataclass
from enum import Enum

from tqdm import tqdm

from learn.learner import Task, build_learner, learner_epoch
from model.mlp import Activation, init_model
from numeric.core import Norm, RngStream, STREAM_INIT
from numeric.errors import ConfigError

log = logging.getLogger(__name__)


class BaselineMode(str, Enum):
    NATURAL = "natural"
    AT_VANILLA = "at_vanilla"
    AT_HALFHALF = "at_halfhalf"
    AT_AVG_NORM = "at_avg_norm"


# (view, weight) pairs of the outer objective; None is the clean batch.
OBJECTIVES = {
    BaselineMode.NATURAL: ((None, 1.0),),
    BaselineMode.AT_VANILLA: ((Norm.LINF, 1.0),),
    BaselineMode.AT_HALFHALF: ((None, 0.5), (Norm.LINF, 0.5)),
    BaselineMode.AT_AVG_NORM: ((Norm.LINF, 0.5), (Norm.L2, 0.5)),
}


@dataclass(frozen=True)
class BaselineConfig:
    mode: BaselineMode
    learner: object  # LearnerSpec carrying every attack the mode needs
    layer_sizes: tuple
    total_epochs: int
    batch_size: int = 32
    seed: int = 0
    activation: Activation = Activation.RELU

    def __post_init__(self):
        object.__setattr__(self, "mode", BaselineMode(self.mode))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")


@dataclass
class BaselineResult:
    model: object
    records: list
    learner: object


def beta_objective(beta, norm=Norm.LINF):
    """(1 - beta) clean loss plus beta adversarial loss."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must be in [0, 1], got {beta}")
    return ((None, 1.0 - beta), (norm, beta))


def build_baseline_learner(config):
    rng = RngStream(config.seed, STREAM_INIT, 0)
    model = init_model(config.layer_sizes, config.activation, rng)
    learner = build_learner(config.learner, 0, model, config.total_epochs, config.seed,
                            objective=OBJECTIVES[config.mode], task=Task.JOINT)
    return learner


def train_baseline(mode, config, data, evaluator=None, on_step=None, on_epoch=None, progress=False):
    """
    Joint-train a single model with one of the baseline objectives.

    Args:
        mode (BaselineMode): natural, at_vanilla, at_halfhalf or at_avg_norm
        config (BaselineConfig): model, optimizer and attack settings; its mode is replaced by `mode`
        data (DatasetHandle): provides epoch_batches(epoch, batch_size, seed)
        evaluator (callable): evaluator(model, epoch) -> MetricsRecord
        on_step (callable): forwarded to learner_epoch
        on_epoch (callable): on_epoch(epoch, learner, record)
        progress (bool): show a tqdm bar

    Returns:
        BaselineResult: trained model, metrics records and the learner
    """
    mode = BaselineMode(mode)
    if config.mode is not mode:
        config = BaselineConfig(mode, config.learner, config.layer_sizes, config.total_epochs,
                                config.batch_size, config.seed, config.activation)
    learner = build_baseline_learner(config)
    log.info("training baseline %s for %d epochs", mode.value, config.total_epochs)
    records = []
    for epoch in tqdm(range(config.total_epochs), desc=mode.value, disable=not progress):
        batches = data.epoch_batches(epoch, config.batch_size, config.seed)
        learner_epoch(learner, batches, epoch, on_step=on_step)
        record = evaluator(learner.model, epoch + 1) if evaluator else None
        if record is not None:
            records.append(record)
        if on_epoch is not None:
            on_epoch(epoch + 1, learner, record)
    return BaselineResult(learner.model, records, learner)
