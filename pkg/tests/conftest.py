import os

import pytest

from aggregate.generalist import GeneralistConfig, Variant
from aggregate.schedules import GammaSchedule, SyncSchedule
from harness.datasets import gen_gaussians
from learn.learner import AttackConfig, LearnerSpec, Task
from numeric.core import Norm

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.fixture
def smoke_config_path():
    return os.path.join(CONFIG_DIR, "smoke.cfg")


@pytest.fixture
def default_config_path():
    return os.path.join(CONFIG_DIR, "default.cfg")


@pytest.fixture
def tiny_data():
    return gen_gaussians(0, 32, 2, 2, 0.8, sigma=0.1, n_test=16)


def learner_spec(task, epsilon=0.1, steps=2, **kwargs):
    task = Task(task)
    attacks = {}
    if task is not Task.NATURAL:
        attacks = {
            Norm.LINF: AttackConfig(epsilon=epsilon, steps=steps),
            Norm.L2: AttackConfig(epsilon=2 * epsilon, steps=steps),
        }
    return LearnerSpec(task=task, attacks=attacks, **kwargs)


@pytest.fixture
def make_learner_spec():
    return learner_spec


@pytest.fixture
def make_generalist():
    """Factory for small GeneralistConfigs over 2-d inputs and a 2-4-2 MLP."""

    def build(variant=Variant.D_NAT_LINF, tasks=None, epochs=3, gamma1=None, ema_decay=0.9,
              sync=None, batch_size=8, **kwargs):
        variant = Variant(variant)
        tasks = tasks or variant.tasks
        return GeneralistConfig(
            variant=variant,
            learners=tuple(learner_spec(task) for task in tasks),
            layer_sizes=(2, 4, 2),
            total_epochs=epochs,
            batch_size=batch_size,
            gamma1=GammaSchedule.constant(gamma1) if isinstance(gamma1, float) else gamma1,
            ema_decay=ema_decay,
            sync=sync if sync is not None else SyncSchedule.default(epochs),
            **kwargs,
        )

    return build
