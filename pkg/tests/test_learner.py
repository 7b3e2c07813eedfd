import numpy as np
import pytest

from learn.learner import (
    AttackConfig,
    BaseLearner,
    LearnerSpec,
    Task,
    build_learner,
    learner_epoch,
    reseed,
)
from learn.optim import OptimizerState, ScheduleSpec
from model.mlp import Batch, backward, init_model, model_from_layers
from numeric.core import Norm
from numeric.errors import ConfigError, DomainError, LearnerDivergedError


def batches_of(data, size=8):
    return data.epoch_batches(0, size, seed=0)


class TestLearnerEpoch:
    def test_natural_single_batch_is_one_gradient_step(self, tiny_data):
        model = init_model([2, 4, 2], seed=0)
        learner = build_learner(LearnerSpec(Task.NATURAL, momentum=0.0, lr0=0.2), 0, model, 1, seed=0)
        batch = tiny_data.train
        _, grad, _ = backward(model, batch)
        learner_epoch(learner, [batch], 0)
        np.testing.assert_array_equal(learner.params.values, model.params.values - 0.2 * grad.values)

    def test_zero_budget_attack_matches_natural(self, tiny_data, make_learner_spec):
        model = init_model([2, 4, 2], seed=3)
        natural = build_learner(make_learner_spec(Task.NATURAL), 0, model, 2, seed=0)
        adversarial = build_learner(make_learner_spec(Task.ADV_LINF, epsilon=0.0), 0, model, 2, seed=0)
        for epoch in range(2):
            learner_epoch(natural, tiny_data.epoch_batches(epoch, 8, 0), epoch)
            learner_epoch(adversarial, tiny_data.epoch_batches(epoch, 8, 0), epoch)
            assert natural.params.equals(adversarial.params)

    def test_two_batches_match_reference_loop(self, tiny_data):
        model = init_model([2, 3, 2], "tanh", seed=5)
        learner = build_learner(LearnerSpec(Task.NATURAL, lr0=0.1, momentum=0.9), 0, model, 4, seed=0)
        batches = batches_of(tiny_data, 16)
        assert len(batches) == 2

        theta = model.params.values.copy()
        velocity = np.zeros_like(theta)
        reference = model
        for batch in batches:
            _, grad, _ = backward(reference, batch)
            velocity = 0.9 * velocity + grad.values
            theta = theta - 0.1 * velocity
            reference = reference.with_params(reference.params.replace(theta))

        learner_epoch(learner, batches, 0)
        np.testing.assert_allclose(learner.params.values, theta, rtol=1e-12, atol=1e-15)

    def test_on_step_and_weight_averaging(self, tiny_data):
        model = init_model([2, 4, 2], seed=1)
        learner = build_learner(LearnerSpec(Task.NATURAL, wa_decay=0.5), 0, model, 1, seed=0)
        seen = []
        learner_epoch(learner, batches_of(tiny_data), 0, on_step=lambda lrn, step, loss: seen.append((step, loss)))
        assert [s for s, _ in seen] == [0, 1, 2, 3]
        assert all(loss > 0 for _, loss in seen)
        assert not learner.wa_buffer.equals(learner.params)
        assert not learner.wa_buffer.equals(model.params)

    def test_empty_epoch(self):
        learner = build_learner(LearnerSpec(Task.NATURAL), 0, init_model([2, 2]), 1, seed=0)
        with pytest.raises(DomainError):
            learner_epoch(learner, [], 0)

    def test_divergence_names_the_learner(self):
        model = model_from_layers([(np.full((2, 2), 1e308), np.zeros(2)), (np.eye(2), np.zeros(2))])
        learner = build_learner(LearnerSpec(Task.NATURAL), 3, model, 1, seed=0)
        with pytest.raises(LearnerDivergedError) as err:
            learner_epoch(learner, [Batch(np.ones((2, 2)), np.array([0, 1]))], 0)
        assert err.value.learner_id == 3


class TestBuildLearner:
    def test_attack_streams_are_per_learner(self, make_learner_spec):
        spec = make_learner_spec(Task.ADV_LINF)
        a = build_learner(spec, 0, init_model([2, 2]), 1, seed=0)
        b = build_learner(spec, 1, init_model([2, 2]), 1, seed=0)
        assert a.attacks[Norm.LINF].rng.state != b.attacks[Norm.LINF].rng.state
        assert a.attacks[Norm.LINF].step_size == pytest.approx(0.025)

    def test_missing_attack(self):
        with pytest.raises(ConfigError):
            build_learner(LearnerSpec(Task.ADV_L2), 0, init_model([2, 2]), 1, seed=0)

    def test_natural_task_rejects_attacks(self):
        attack = AttackConfig(0.1, random_start=False).build(Norm.LINF, None)
        with pytest.raises(ConfigError):
            BaseLearner(0, Task.NATURAL, init_model([2, 2]), OptimizerState(), ScheduleSpec(0, 1),
                        attacks={Norm.LINF: attack})

    def test_schedule_is_clamped_to_run_length(self):
        learner = build_learner(LearnerSpec(Task.NATURAL, constant_until=50), 0, init_model([2, 2]), 10, seed=0)
        assert learner.schedule.constant_until == 10


class TestReseed:
    def test_overwrites_params_and_resets_state(self, tiny_data):
        learner = build_learner(LearnerSpec(Task.NATURAL, wa_decay=0.9), 0, init_model([2, 4, 2], seed=0), 1, seed=0)
        learner_epoch(learner, batches_of(tiny_data), 0)
        theta = init_model([2, 4, 2], seed=7).params
        reseed(learner, theta)
        assert learner.params.equals(theta)
        assert learner.wa_buffer.equals(theta)
        assert learner.optimizer.slots == {}

    def test_keep_optimizer(self, tiny_data):
        learner = build_learner(LearnerSpec(Task.NATURAL), 0, init_model([2, 4, 2], seed=0), 1, seed=0)
        learner_epoch(learner, batches_of(tiny_data), 0)
        reseed(learner, init_model([2, 4, 2], seed=7).params, reset_optimizer=False)
        assert "velocity" in learner.optimizer.slots
