import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from numeric.core import FLOAT, ParameterVector, convex_combine
from numeric.errors import ConfigError, DomainError, LayoutError

log = logging.getLogger(__name__)


class OptimizerKind(str, Enum):
    SGD_MOMENTUM = "sgd_momentum"
    ADAM = "adam"


SLOT_NAMES = {
    OptimizerKind.SGD_MOMENTUM: ("velocity",),
    OptimizerKind.ADAM: ("m", "v"),
}


@dataclass
class OptimizerState:
    """Optimizer hyperparameters plus per-parameter slots.

    Mutable; owned by exactly one learner. Slots are created lazily on the
    first step and are bound to the layout of the parameters they were
    created for.
    """

    kind: OptimizerKind = OptimizerKind.SGD_MOMENTUM
    lr0: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    weight_decay: float = 0.0
    slots: dict = field(default_factory=dict)
    step: int = 0
    layout_id: str = None

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError(f"adam betas must be in (0, 1), got {self.beta1}, {self.beta2}")
        if self.lr0 < 0 or self.weight_decay < 0 or self.eps_hat < 0:
            raise ConfigError("lr0, weight_decay and eps_hat must be nonnegative")

    def _slots_for(self, params):
        if not self.slots:
            self.slots = {name: np.zeros(len(params), dtype=FLOAT) for name in SLOT_NAMES[self.kind]}
            self.layout_id = params.layout_id
        elif self.layout_id != params.layout_id or len(next(iter(self.slots.values()))) != len(params):
            raise LayoutError(f"optimizer slots bound to {self.layout_id}, got {params.layout_id}")
        return self.slots

    def reset_slots(self):
        self.slots = {}
        self.step = 0
        self.layout_id = None

    def snapshot(self):
        return {
            "step": self.step,
            "layout_id": self.layout_id,
            "slots": {name: arr.copy() for name, arr in self.slots.items()},
        }

    def restore(self, snap):
        self.step = int(snap["step"])
        self.layout_id = snap["layout_id"]
        self.slots = {name: np.array(arr, dtype=FLOAT) for name, arr in snap["slots"].items()}


def _check_pair(params, grad):
    params.check_layout(grad)


def sgd_step(state, params, grad, lr):
    """
    SGD with heavy-ball momentum and coupled weight decay.

    v <- momentum * v + (grad + weight_decay * params); params <- params - lr * v

    Args:
        state (OptimizerState): holds the velocity slot, updated in place
        params (ParameterVector): current parameters
        grad (ParameterVector): gradient at params
        lr (float): learning rate for this step

    Returns:
        ParameterVector: updated parameters
    """
    _check_pair(params, grad)
    velocity = state._slots_for(params)["velocity"]
    g = grad.values + state.weight_decay * params.values
    velocity *= state.momentum
    velocity += g
    state.step += 1
    return params.replace(params.values - lr * velocity)


def adam_step(state, params, grad, lr):
    """Bias-corrected Adam step; weight decay is added to the gradient."""
    _check_pair(params, grad)
    slots = state._slots_for(params)
    g = grad.values + state.weight_decay * params.values
    state.step += 1
    m, v = slots["m"], slots["v"]
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** state.step)
    v_hat = v / (1.0 - state.beta2 ** state.step)
    return params.replace(params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps_hat))


def optimizer_step(state, params, grad, lr):
    if state.kind is OptimizerKind.ADAM:
        return adam_step(state, params, grad, lr)
    return sgd_step(state, params, grad, lr)


@dataclass(frozen=True)
class ScheduleSpec:
    """Constant learning rate until `constant_until`, then linear decay to terminal_fraction * lr0."""

    constant_until: int
    total_epochs: int
    terminal_fraction: float = 0.0

    def __post_init__(self):
        if self.total_epochs < 0 or not 0 <= self.constant_until <= self.total_epochs:
            raise ConfigError(f"need 0 <= constant_until <= total_epochs, got {self.constant_until}, {self.total_epochs}")
        if not 0.0 <= self.terminal_fraction <= 1.0:
            raise ConfigError(f"terminal_fraction must be in [0, 1], got {self.terminal_fraction}")


def lr_at(schedule, lr0, epoch):
    if not 0 <= epoch <= schedule.total_epochs:
        raise DomainError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    if epoch <= schedule.constant_until:
        return float(lr0)
    span = schedule.total_epochs - schedule.constant_until
    progress = (epoch - schedule.constant_until) / span
    return float(lr0) * (1.0 - (1.0 - schedule.terminal_fraction) * progress)


def wa_update(buffer, current, decay):
    """Weight-averaging buffer update: decay * buffer + (1 - decay) * current."""
    if not 0.0 <= decay <= 1.0:
        raise DomainError(f"weight averaging decay must be in [0, 1], got {decay}")
    buffer.check_layout(current)
    return convex_combine([buffer, current], [decay, 1.0 - decay])
