import numpy as np
import pytest

from aggregate.baselines import BaselineConfig, BaselineMode, beta_objective, train_baseline
from attack.pgd import pgd_attack
from learn.learner import AttackConfig, LearnerSpec, Task, NORM_SUBSTREAM
from model.mlp import backward, init_model
from numeric.core import Norm, RngStream, STREAM_ATTACK, STREAM_INIT
from numeric.errors import ConfigError


def baseline_config(epsilon, epochs=2, batch_size=8, momentum=0.9):
    spec = LearnerSpec(
        Task.ADV_LINF,
        momentum=momentum,
        attacks={Norm.LINF: AttackConfig(epsilon, steps=3), Norm.L2: AttackConfig(epsilon, steps=3)},
    )
    return BaselineConfig(BaselineMode.NATURAL, spec, (2, 4, 2), epochs, batch_size=batch_size, seed=0)


class TestBaselines:
    @pytest.mark.parametrize("mode", [BaselineMode.AT_HALFHALF, BaselineMode.AT_AVG_NORM, BaselineMode.AT_VANILLA])
    def test_zero_budget_matches_natural_training(self, mode, tiny_data):
        config = baseline_config(0.0)
        natural = train_baseline(BaselineMode.NATURAL, config, tiny_data)
        attacked = train_baseline(mode, config, tiny_data)
        assert attacked.model.params.equals(natural.model.params)

    def test_vanilla_single_step_uses_attacked_batch(self, tiny_data):
        config = baseline_config(0.1, epochs=1, batch_size=len(tiny_data.train), momentum=0.9)
        result = train_baseline(BaselineMode.AT_VANILLA, config, tiny_data)

        model = init_model(config.layer_sizes, config.activation, RngStream(0, STREAM_INIT, 0))
        (batch,) = tiny_data.epoch_batches(0, config.batch_size, config.seed)
        rng = RngStream(config.seed, STREAM_ATTACK, NORM_SUBSTREAM[Norm.LINF])
        spec = config.learner.attacks[Norm.LINF].build(Norm.LINF, rng)
        _, grad, _ = backward(model, batch.with_inputs(pgd_attack(model, batch, spec)))
        expected = model.params.values - config.learner.lr0 * grad.values
        np.testing.assert_array_equal(result.model.params.values, expected)

    def test_records_per_epoch(self, tiny_data):
        config = baseline_config(0.05, epochs=3)
        result = train_baseline("at_halfhalf", config, tiny_data, evaluator=lambda model, epoch: epoch)
        assert result.records == [1, 2, 3]
        assert result.learner.objective == ((None, 0.5), (Norm.LINF, 0.5))

    def test_beta_objective(self):
        assert beta_objective(0.25) == ((None, 0.75), (Norm.LINF, 0.25))
        with pytest.raises(ConfigError):
            beta_objective(1.5)
