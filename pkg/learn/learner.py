import logging
from dataclasses import dataclass, field
from enum import Enum

from attack.pgd import AttackSpec, TRAIN_STEP_FRACTION, TRAIN_STEPS, pgd_attack
from learn.optim import OptimizerKind, OptimizerState, ScheduleSpec, lr_at, optimizer_step, wa_update
from model.mlp import backward
from numeric.core import Norm, RngStream, STREAM_ATTACK
from numeric.errors import ConfigError, DomainError, LearnerDivergedError, NumericError

log = logging.getLogger(__name__)

NORM_SUBSTREAM = {Norm.LINF: 0, Norm.L2: 1}


class Task(str, Enum):
    NATURAL = "natural"
    ADV_LINF = "adv_linf"
    ADV_L2 = "adv_l2"
    JOINT = "joint"  # single-model baselines mixing several views


TASK_OBJECTIVE = {
    Task.NATURAL: ((None, 1.0),),
    Task.ADV_LINF: ((Norm.LINF, 1.0),),
    Task.ADV_L2: ((Norm.L2, 1.0),),
}


@dataclass(frozen=True)
class AttackConfig:
    """Training-time PGD settings for one norm; step_size defaults to epsilon / 4."""

    epsilon: float
    step_size: float = None
    steps: int = TRAIN_STEPS
    random_start: bool = True

    def build(self, norm, rng):
        step = self.epsilon * TRAIN_STEP_FRACTION if self.step_size is None else self.step_size
        return AttackSpec(norm, self.epsilon, step, self.steps, random_start=self.random_start, rng=rng)


@dataclass(frozen=True)
class LearnerSpec:
    task: Task
    optimizer: OptimizerKind = OptimizerKind.SGD_MOMENTUM
    lr0: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    weight_decay: float = 0.0
    wa_decay: float = None
    constant_until: int = 0
    terminal_fraction: float = 0.0
    attacks: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))


@dataclass
class BaseLearner:
    """One model with its own optimizer, schedule, attacks and optional WA buffer.

    `objective` lists (norm or None, weight) views of each batch; None is the
    clean batch. Gradients of the views are summed with those weights.
    """

    id: int
    task: Task
    model: object
    optimizer: OptimizerState
    schedule: ScheduleSpec
    attacks: dict = field(default_factory=dict)
    objective: tuple = None
    wa_decay: float = None
    wa_buffer: object = None

    def __post_init__(self):
        self.task = Task(self.task)
        if self.objective is None:
            if self.task is Task.JOINT:
                raise ConfigError("joint learners need an explicit objective")
            self.objective = TASK_OBJECTIVE[self.task]
        if self.task is Task.NATURAL and self.attacks:
            raise ConfigError(f"learner {self.id}: natural task takes no attack")
        for norm, weight in self.objective:
            if weight < 0:
                raise ConfigError(f"learner {self.id}: negative objective weight {weight}")
            if norm is not None and norm not in self.attacks:
                raise ConfigError(f"learner {self.id}: objective uses {norm.value} but no attack is configured")
        if self.wa_decay is not None:
            if not 0.0 <= self.wa_decay <= 1.0:
                raise ConfigError(f"learner {self.id}: wa decay {self.wa_decay} outside [0, 1]")
            if self.wa_buffer is None:
                self.wa_buffer = self.model.params
            self.model.params.check_layout(self.wa_buffer)

    @property
    def params(self):
        return self.model.params

    def rng_states(self):
        return {norm.value: spec.rng.state for norm, spec in self.attacks.items() if spec.rng is not None}

    def restore_rng_states(self, states):
        for norm, spec in self.attacks.items():
            if spec.rng is not None and norm.value in states:
                spec.rng.state = states[norm.value]


def build_learner(spec, learner_id, model, total_epochs, seed, objective=None, task=None, stream_id=None):
    """
    Turn a LearnerSpec into a BaseLearner bound to an initialized model.

    Args:
        spec (LearnerSpec): per-task optimizer, schedule, WA and attack settings
        learner_id (int): index of the learner; selects its attack RngStreams unless stream_id is given
        model (Model): starting model
        total_epochs (int): length of the learning-rate schedule
        seed (int): experiment seed
        objective (tuple): override of the task's (norm, weight) views
        task (Task): override of spec.task, e.g. Task.JOINT for baselines
        stream_id (int): attack stream offset; learners sharing it draw identical random starts

    Returns:
        BaseLearner: ready to train
    """
    objective = objective if objective is not None else TASK_OBJECTIVE.get(spec.task)
    if objective is None:
        raise ConfigError(f"task {spec.task.value} needs an explicit objective")
    attacks = {}
    for norm, _ in objective:
        if norm is None:
            continue
        if norm not in spec.attacks:
            raise ConfigError(f"no {norm.value} attack configured for task {spec.task.value}")
        offset = learner_id if stream_id is None else stream_id
        rng = RngStream(seed, STREAM_ATTACK + offset, NORM_SUBSTREAM[norm])
        attacks[norm] = spec.attacks[norm].build(norm, rng)
    optimizer = OptimizerState(
        kind=spec.optimizer,
        lr0=spec.lr0,
        momentum=spec.momentum,
        beta1=spec.beta1,
        beta2=spec.beta2,
        eps_hat=spec.eps_hat,
        weight_decay=spec.weight_decay,
    )
    schedule = ScheduleSpec(min(spec.constant_until, total_epochs), total_epochs, spec.terminal_fraction)
    return BaseLearner(
        id=learner_id,
        task=spec.task if task is None else task,
        model=model,
        optimizer=optimizer,
        schedule=schedule,
        attacks=attacks,
        objective=tuple(objective),
        wa_decay=spec.wa_decay,
    )


def objective_gradient(learner, batch):
    """Weighted loss and parameter gradient over the learner's views of one batch."""
    total_loss = 0.0
    total_grad = None
    for norm, weight in learner.objective:
        if weight == 0.0:
            continue
        view = batch
        if norm is not None:
            view = batch.with_inputs(pgd_attack(learner.model, batch, learner.attacks[norm]))
        loss, grad, _ = backward(learner.model, view)
        scaled = weight * grad.values
        total_loss += weight * loss
        total_grad = scaled if total_grad is None else total_grad + scaled
    if total_grad is None:
        raise ConfigError(f"learner {learner.id}: objective has no positive weight")
    return total_loss, learner.params.replace(total_grad)


def learner_epoch(learner, batches, epoch, on_step=None, hook=None):
    """
    Run one epoch of updates for a single base learner.

    Each batch is (optionally) passed through `hook`, attacked for every
    adversarial view of the objective, and used for one optimizer step at
    lr_at(epoch). The WA buffer, when present, is updated after every step.

    Args:
        learner (BaseLearner): updated in place
        batches (iterable[Batch]): minibatches for this epoch
        epoch (int): 0-based epoch index
        on_step (callable): called as on_step(learner, step, loss) after each step
        hook (callable): optional batch transform hook(learner, batch) -> Batch

    Returns:
        BaseLearner: the same learner, advanced by one epoch
    """
    lr = lr_at(learner.schedule, learner.optimizer.lr0, epoch)
    steps = 0
    for step, batch in enumerate(batches):
        if hook is not None:
            batch = hook(learner, batch)
        try:
            loss, grad = objective_gradient(learner, batch)
            params = optimizer_step(learner.optimizer, learner.params, grad, lr)
        except NumericError as err:
            log.error("learner %d diverged at epoch %d step %d: %s", learner.id, epoch, step, err)
            raise LearnerDivergedError(learner.id, err) from err
        learner.model = learner.model.with_params(params)
        if learner.wa_decay is not None:
            learner.wa_buffer = wa_update(learner.wa_buffer, params, learner.wa_decay)
        steps += 1
        if on_step is not None:
            on_step(learner, step, loss)
    if steps == 0:
        raise DomainError(f"learner {learner.id}: epoch {epoch} had no batches")
    log.debug("learner %d finished epoch %d (%d steps, lr %.4g)", learner.id, epoch, steps, lr)
    return learner


def reseed(learner, theta, reset_optimizer=True):
    """Overwrite a learner's parameters with theta; optionally clear optimizer slots."""
    learner.params.check_layout(theta)
    learner.model = learner.model.with_params(theta)
    if reset_optimizer:
        learner.optimizer.reset_slots()
    if learner.wa_decay is not None:
        learner.wa_buffer = theta
    return learner
