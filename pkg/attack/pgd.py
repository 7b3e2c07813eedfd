import logging
from dataclasses import dataclass, replace

import numpy as np

from model.mlp import _check_inputs, forward, input_gradient, per_example_ce
from numeric.core import FLOAT, Norm, RngStream
from numeric.errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

# Training attacks: 10 steps at eps/4. Evaluation attacks: 20 steps at eps/8.
TRAIN_STEPS = 10
TRAIN_STEP_FRACTION = 0.25
EVAL_STEPS = 20
EVAL_STEP_FRACTION = 0.125


@dataclass(frozen=True)
class AttackSpec:
    """PGD configuration for one norm.

    keep_best returns, per example, the iterate with the highest loss seen
    (the start point included) instead of the last one.
    """

    norm: Norm
    epsilon: float
    step_size: float
    steps: int
    random_start: bool = False
    rng: RngStream = None
    keep_best: bool = False

    def __post_init__(self):
        object.__setattr__(self, "norm", Norm.parse(self.norm))
        if self.epsilon < 0 or self.step_size < 0 or self.steps < 0:
            raise ConfigError(f"attack needs epsilon, step_size, steps >= 0, got {self.epsilon}, {self.step_size}, {self.steps}")
        if int(self.steps) != self.steps:
            raise ConfigError(f"attack steps must be an integer, got {self.steps}")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "step_size", float(self.step_size))
        object.__setattr__(self, "steps", int(self.steps))
        if self.random_start and self.rng is None:
            raise ConfigError("random_start requires an RngStream")

    def with_rng(self, rng):
        return replace(self, rng=rng)


def training_attack(norm, epsilon, rng, steps=TRAIN_STEPS, step_size=None, random_start=True):
    if step_size is None:
        step_size = epsilon * TRAIN_STEP_FRACTION
    return AttackSpec(norm, epsilon, step_size, steps, random_start=random_start, rng=rng)


def evaluation_attack(norm, epsilon, steps=EVAL_STEPS, step_size=None):
    if step_size is None:
        step_size = epsilon * EVAL_STEP_FRACTION
    return AttackSpec(norm, epsilon, step_size, steps, random_start=False, keep_best=True)


def _row_norms(arr):
    return np.sqrt(np.sum(arr * arr, axis=1, keepdims=True))


def step_direction(grad, norm):
    """
    Steepest-ascent direction for a norm-bounded step.

    Args:
        grad (np.ndarray): n x d input gradients
        norm (Norm): linf gives sign(grad), l2 gives grad / ||grad||_2 per row

    Returns:
        np.ndarray: directions; zero rows stay zero
    """
    g = np.asarray(grad, dtype=FLOAT)
    if Norm.parse(norm) is Norm.LINF:
        return np.sign(g)
    if g.ndim == 1:
        g = g[None, :]
        return step_direction(g, Norm.L2)[0]
    norms = _row_norms(g)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, g / safe, 0.0)


def project(candidate, anchor, norm, epsilon):
    """Project onto the epsilon-ball around anchor, then clamp into [0, 1]."""
    x = np.asarray(candidate, dtype=FLOAT)
    a = np.asarray(anchor, dtype=FLOAT)
    if x.shape != a.shape:
        raise ShapeError(f"candidate {x.shape} vs anchor {a.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x, a = x[None, :], a[None, :]
    delta = x - a
    if Norm.parse(norm) is Norm.LINF:
        delta = np.clip(delta, -epsilon, epsilon)
    else:
        norms = _row_norms(delta)
        factor = np.where(norms > epsilon, epsilon / np.where(norms > 0.0, norms, 1.0), 1.0)
        delta = delta * factor
    out = np.clip(a + delta, 0.0, 1.0)
    return out[0] if squeeze else out


def random_start_point(anchor, norm, epsilon, rng):
    """Uniform draw from the epsilon-ball around each anchor row, projected into the box."""
    n, d = anchor.shape
    if Norm.parse(norm) is Norm.LINF:
        delta = rng.uniform(-epsilon, epsilon, (n, d))
    else:
        direction = step_direction(rng.normal((n, d)), Norm.L2)
        radius = epsilon * rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / d)
        delta = direction * radius
    return project(anchor + delta, anchor, norm, epsilon)


def pgd_attack(model, batch, spec):
    """
    Projected gradient ascent on the cross-entropy inside the attack budget.

    Args:
        model (Model): classifier under attack
        batch (Batch): clean examples (the anchors)
        spec (AttackSpec): norm, budget, step size, steps and start policy

    Returns:
        np.ndarray: adversarial inputs, within epsilon of the anchors and inside [0, 1]
    """
    anchor = _check_inputs(model, batch.inputs)
    if spec.epsilon == 0.0 and not spec.random_start:
        return anchor.copy()

    if spec.random_start:
        x_adv = random_start_point(anchor, spec.norm, spec.epsilon, spec.rng)
    else:
        x_adv = anchor.copy()

    if spec.keep_best:
        best = x_adv.copy()
        best_loss = per_example_ce(forward(model, x_adv), batch.labels)

    for _ in range(spec.steps):
        _, grad = input_gradient(model, x_adv, batch.labels)
        x_adv = project(x_adv + spec.step_size * step_direction(grad, spec.norm), anchor, spec.norm, spec.epsilon)
        if spec.keep_best:
            loss = per_example_ce(forward(model, x_adv), batch.labels)
            better = loss > best_loss
            best[better] = x_adv[better]
            best_loss = np.where(better, loss, best_loss)

    return best if spec.keep_best else x_adv
