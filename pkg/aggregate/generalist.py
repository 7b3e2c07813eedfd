import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from tqdm import tqdm

from aggregate.schedules import GammaSchedule, SyncSchedule, gamma_at, should_redistribute
from learn.learner import Task, build_learner, learner_epoch, reseed
from model.mlp import Activation, init_model
from numeric.core import ParameterVector, RngStream, STREAM_INIT, convex_combine
from numeric.errors import ConfigError, DomainError

log = logging.getLogger(__name__)

DEFAULT_EMA_DECAY = 0.999
DEFAULT_B = 0.5


class Variant(str, Enum):
    D_NAT_LINF = "D_nat_linf"
    D_LINF_L2 = "D_linf_l2"
    T_NAT_LINF_L2 = "T_nat_linf_l2"

    @property
    def n_learners(self):
        return 3 if self is Variant.T_NAT_LINF_L2 else 2

    @property
    def tasks(self):
        return {
            Variant.D_NAT_LINF: (Task.NATURAL, Task.ADV_LINF),
            Variant.D_LINF_L2: (Task.ADV_LINF, Task.ADV_L2),
            Variant.T_NAT_LINF_L2: (Task.NATURAL, Task.ADV_LINF, Task.ADV_L2),
        }[self]


@dataclass(frozen=True)
class GeneralistConfig:
    """Everything train_generalist needs besides the data.

    shared_init starts every learner from the same initialization.
    reset_optimizer clears optimizer slots on redistribution.
    aggregate_wa mixes the learners' WA buffers instead of their raw parameters.
    shared_attack_streams gives every learner the attack streams of learner 0, so
    learners with the same task and init follow the same trajectory.
    """

    variant: Variant
    learners: tuple
    layer_sizes: tuple
    total_epochs: int
    batch_size: int = 32
    seed: int = 0
    activation: Activation = Activation.RELU
    gamma1: GammaSchedule = None
    b: float = DEFAULT_B
    ema_decay: float = DEFAULT_EMA_DECAY
    sync: SyncSchedule = None
    shared_init: bool = True
    reset_optimizer: bool = True
    aggregate_wa: bool = False
    shared_attack_streams: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "learners", tuple(self.learners))
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if len(self.learners) != self.variant.n_learners:
            raise ConfigError(f"variant {self.variant.value} needs {self.variant.n_learners} learners, got {len(self.learners)}")
        if not 0.0 <= self.b <= 1.0:
            raise ConfigError(f"b must be in [0, 1], got {self.b}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError(f"ema decay must be in [0, 1], got {self.ema_decay}")
        if self.gamma1 is None:
            object.__setattr__(self, "gamma1", GammaSchedule.from_stages("1.0-1.0-1.0-0.0"))
        if self.sync is None:
            object.__setattr__(self, "sync", SyncSchedule.default(self.total_epochs))
        if self.sync.total_epochs != self.total_epochs:
            raise ConfigError(f"sync schedule spans {self.sync.total_epochs} epochs, run has {self.total_epochs}")
        if self.aggregate_wa and any(spec.wa_decay is None for spec in self.learners):
            raise ConfigError("aggregate_wa needs a wa_decay on every learner")
        expected = self.variant.tasks
        actual = tuple(spec.task for spec in self.learners)
        if actual != expected:
            log.warning("variant %s normally runs tasks %s, configured %s",
                        self.variant.value, [t.value for t in expected], [t.value for t in actual])


@dataclass
class GlobalState:
    theta_g: ParameterVector
    theta_prev: ParameterVector = None
    epoch: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.theta_prev is None:
            self.theta_prev = self.theta_g

    def log_event(self, epoch, event, **extra):
        if self.history and epoch < self.history[-1]["epoch"]:
            raise DomainError(f"history epoch {epoch} after {self.history[-1]['epoch']}")
        self.history.append({"epoch": int(epoch), "event": event, **extra})

    def history_jsonl(self):
        return history_jsonl(self.history)


def history_jsonl(history):
    return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in history)


@dataclass
class GeneralistResult:
    model: object
    records: list
    state: GlobalState
    learners: list
    # Learner parameters at the end of the last epoch, before any redistribution.
    final_learner_params: list = None


def mixing_weights(config, epoch):
    """
    Convex weights of the base learners at a 0-based epoch.

    Args:
        config (GeneralistConfig): variant, gamma1 schedule and b
        epoch (int): 0 <= epoch < total_epochs

    Returns:
        list[float]: (g1, 1 - g1) for two learners;
        (g1, b(1 - g1), (1 - b)(1 - g1)) for three
    """
    if not 0 <= epoch < config.total_epochs:
        raise DomainError(f"epoch {epoch} outside [0, {config.total_epochs})")
    g1 = gamma_at(config.gamma1, epoch / config.total_epochs)
    if config.variant is Variant.T_NAT_LINF_L2:
        rest = 1.0 - g1
        weights = [g1, config.b * rest, (1.0 - config.b) * rest]
    else:
        weights = [g1, 1.0 - g1]
    if any(w < 0.0 for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-12:
        raise ConfigError(f"mixing weights {weights} at epoch {epoch} are not convex")
    return weights


def ema_aggregate(state, mixed, alpha_prime, epoch=None, weights=None, log_history=True):
    """theta_g <- alpha' * theta_g + (1 - alpha') * mixed, logged to the history unless log_history is False."""
    if not 0.0 <= alpha_prime <= 1.0:
        raise DomainError(f"ema decay {alpha_prime} outside [0, 1]")
    state.theta_g.check_layout(mixed)
    state.theta_prev = state.theta_g
    state.theta_g = convex_combine([state.theta_g, mixed], [alpha_prime, 1.0 - alpha_prime])
    if log_history:
        extra = {} if weights is None else {"weights": [float(w) for w in weights]}
        state.log_event(state.epoch if epoch is None else epoch, "ema", **extra)
    return state


def redistribute(state, learners, reset_optimizer=True):
    """Overwrite every learner's parameters with theta_g."""
    for learner in learners:
        reseed(learner, state.theta_g, reset_optimizer)
    state.log_event(state.epoch, "redistribute")
    log.info("redistributed global parameters to %d learners after epoch %d", len(learners), state.epoch)
    return learners


def init_learners(config):
    """Initialize models and base learners for a fresh run."""
    learners = []
    for i, spec in enumerate(config.learners):
        rng = RngStream(config.seed, STREAM_INIT, 0 if config.shared_init else i)
        model = init_model(config.layer_sizes, config.activation, rng)
        stream_id = 0 if config.shared_attack_streams else i
        learners.append(build_learner(spec, i, model, config.total_epochs, config.seed, stream_id=stream_id))
    return learners


def _aggregate_source(config, learner):
    return learner.wa_buffer if config.aggregate_wa else learner.params


def _run_learner(learner, batches, epoch, config):
    trajectory = []

    def record(lrn, step, loss):
        trajectory.append(_aggregate_source(config, lrn))

    learner_epoch(learner, batches, epoch, on_step=record)
    return trajectory


def snapshot_state(state, learners):
    """Plain-data snapshot of a run, enough to resume it bit-exactly."""
    return {
        "epoch": state.epoch,
        "theta_g": state.theta_g.values.copy(),
        "theta_prev": state.theta_prev.values.copy(),
        "history": list(state.history),
        "learners": [
            {
                "params": lrn.params.values.copy(),
                "optimizer": lrn.optimizer.snapshot(),
                "wa_buffer": None if lrn.wa_buffer is None else lrn.wa_buffer.values.copy(),
                "rng": lrn.rng_states(),
            }
            for lrn in learners
        ],
    }


def restore_state(config, snap):
    learners = init_learners(config)
    if len(snap["learners"]) != len(learners):
        raise ConfigError(f"snapshot has {len(snap['learners'])} learners, config {len(learners)}")
    layout = learners[0].params.layout_id
    for lrn, saved in zip(learners, snap["learners"]):
        lrn.model = lrn.model.with_params(ParameterVector(saved["params"], layout))
        lrn.optimizer.restore(saved["optimizer"])
        if saved["wa_buffer"] is not None:
            lrn.wa_buffer = ParameterVector(saved["wa_buffer"], layout)
        lrn.restore_rng_states(saved["rng"])
    state = GlobalState(
        theta_g=ParameterVector(snap["theta_g"], layout),
        theta_prev=ParameterVector(snap["theta_prev"], layout),
        epoch=int(snap["epoch"]),
        history=list(snap["history"]),
    )
    return state, learners


def train_generalist(config, data, evaluator=None, on_epoch=None, resume=None, progress=False):
    """
    Train the base learners and the EMA-aggregated global learner.

    Per epoch every learner runs learner_epoch on the same minibatch sequence.
    Their per-step parameter trajectories are then replayed by the
    coordinator: for each step the learners are mixed with that epoch's
    weights and folded into theta_g by EMA. After epoch t (1-based) the
    global parameters are redistributed when should_redistribute(t) holds.

    Args:
        config (GeneralistConfig): run configuration
        data (DatasetHandle): provides epoch_batches(epoch, batch_size, seed)
        evaluator (callable): evaluator(global_model, epoch) -> MetricsRecord
        on_epoch (callable): on_epoch(epoch, state, learners, record) after each epoch
        resume (dict): snapshot from snapshot_state to continue from
        progress (bool): show a tqdm bar

    Returns:
        GeneralistResult: global model, metrics records, final state and learners
    """
    if resume is None:
        learners = init_learners(config)
        theta0 = convex_combine([lrn.params for lrn in learners], mixing_weights(config, 0))
        state = GlobalState(theta_g=theta0)
    else:
        state, learners = restore_state(config, resume)
        log.info("resuming generalist run at epoch %d", state.epoch)

    template = learners[0].model
    records = []
    last_params = [lrn.params for lrn in learners]
    workers = max(1, int(config.workers))
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        epochs = range(state.epoch, config.total_epochs)
        for epoch in tqdm(epochs, desc="generalist", disable=not progress):
            batches = list(data.epoch_batches(epoch, config.batch_size, config.seed))
            if pool is None:
                trajectories = [_run_learner(lrn, batches, epoch, config) for lrn in learners]
            else:
                futures = [pool.submit(_run_learner, lrn, batches, epoch, config) for lrn in learners]
                # Results are collected in learner order so the first failure is deterministic.
                trajectories = [f.result() for f in futures]

            last_params = [lrn.params for lrn in learners]
            weights = mixing_weights(config, epoch)
            for step in range(len(batches)):
                mixed = convex_combine([traj[step] for traj in trajectories], weights)
                ema_aggregate(state, mixed, config.ema_decay, log_history=False)
            if batches:
                # One history entry per epoch, not per step.
                state.log_event(epoch, "ema", weights=[float(w) for w in weights], steps=len(batches))

            state.epoch = epoch + 1
            if should_redistribute(config.sync, state.epoch):
                redistribute(state, learners, config.reset_optimizer)

            record = evaluator(template.with_params(state.theta_g), state.epoch) if evaluator else None
            if record is not None:
                records.append(record)
            if on_epoch is not None:
                on_epoch(state.epoch, state, learners, record)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    return GeneralistResult(template.with_params(state.theta_g), records, state, learners, last_params)


def parameter_distance(a, b):
    a.check_layout(b)
    return float(np.linalg.norm(a.values - b.values))
