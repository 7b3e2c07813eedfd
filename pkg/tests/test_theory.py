import math

import numpy as np
import pytest

from aggregate.generalist import Variant
from harness.datasets import gen_gaussians
from numeric.errors import DomainError, NumericError, ShapeError
from theory.bounds import ConvexTask, check_theorem1, concentration_term, oracle_best_fixed
from theory.mixing import STATED_COUNTEREXAMPLE, check_mixing_lemma, mixing_slack
from theory.regret import RegretLedger, regret
from theory.stability import stability_probe


class TestRegret:
    def test_matching_oracle(self):
        assert regret(RegretLedger([[0.2, 0.3]], [0.5])) == 0.0

    def test_single_task(self):
        assert regret(RegretLedger([[0.5, 0.4]], [0.6])) == pytest.approx(0.3)

    def test_averaged_over_tasks(self):
        ledger = RegretLedger([[1.0, 1.0], [0.5, 0.5]], [1.0, 0.0])
        assert regret(ledger) == pytest.approx(1.0)
        assert ledger.horizon == 2

    def test_reordering_rounds(self):
        rng = np.random.default_rng(0)
        losses = rng.uniform(size=(3, 50))
        shuffled = losses[:, rng.permutation(50)]
        assert regret(RegretLedger(losses, [1.0, 2.0, 3.0])) == regret(RegretLedger(shuffled, [1.0, 2.0, 3.0]))

    def test_inconsistent_horizon(self):
        with pytest.raises(ShapeError):
            RegretLedger([[0.1, 0.2], [0.1]], [0.0, 0.0])
        with pytest.raises(ShapeError):
            RegretLedger([[0.1, 0.2]], [0.0, 0.0])

    def test_bounded_and_finite(self):
        with pytest.raises(DomainError):
            RegretLedger([[1.5]], [0.0], bounded=True)
        with pytest.raises(NumericError):
            RegretLedger([[math.nan]], [0.0])


class TestOracle:
    def test_duplicated_point(self):
        T = 20
        task = ConvexTask(np.tile([[1.0, 0.0]], (T, 1)), np.ones(T), radius=2.0)
        assert oracle_best_fixed(task) == pytest.approx(T * math.log1p(math.exp(-2.0)), rel=1e-6)

    def test_separable_one_dimensional_box(self):
        x = np.array([[0.3], [0.9], [-0.5], [-0.2]])
        task = ConvexTask(x, np.sign(x[:, 0]), radius=1.5)
        grid = np.arange(-1.5, 1.5 + 1e-12, 1e-4)
        grid_best = float(np.min([np.sum(task.losses(np.array([w]))) for w in grid]))
        oracle = oracle_best_fixed(task)
        assert oracle <= grid_best + 1e-9
        assert oracle == pytest.approx(grid_best, abs=1e-6)
        assert oracle == pytest.approx(float(np.sum(task.losses(np.array([1.5])))), rel=1e-9)

    def test_symmetric_classes(self):
        task = ConvexTask([[1.0], [1.0]], [1.0, -1.0])
        assert oracle_best_fixed(task) == pytest.approx(2 * math.log(2.0), rel=1e-12)

    def test_prefix(self):
        task = ConvexTask([[1.0], [1.0], [1.0]], [1.0, -1.0, 1.0], radius=1.0)
        assert oracle_best_fixed(task, T=2) == pytest.approx(2 * math.log(2.0), rel=1e-12)


class TestExpectedErrorBound:
    def test_concentration_term(self):
        assert concentration_term(100, 0.5) == pytest.approx(0.2355, abs=1e-4)
        with pytest.raises(DomainError):
            concentration_term(100, 1.0)

    def test_small_run(self):
        report = check_theorem1(trials=3, delta=0.1, T=40, seed=1, heldout=2000)
        assert len(report.lhs) == len(report.rhs) == 3
        assert all(0.0 <= v <= 1.0 for v in report.lhs)
        assert report.violation_fraction == 0.0
        assert report.to_dict()["concentration"] == concentration_term(40, 0.1)

    def test_parallel_trials_match_serial(self):
        serial = check_theorem1(trials=3, T=30, seed=2, heldout=1000)
        parallel = check_theorem1(trials=3, T=30, seed=2, heldout=1000, workers=3)
        assert serial.lhs == parallel.lhs and serial.rhs == parallel.rhs

    @pytest.mark.slow
    def test_violation_fraction_full_run(self):
        report = check_theorem1(trials=200, delta=0.1, T=100, seed=0)
        assert report.violation_fraction <= 0.15


class TestMixingInequality:
    def test_single_learner_is_equality(self):
        rng = np.random.default_rng(1)
        u, v = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        assert mixing_slack(u, v, [1.0], 2) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("form", ["stated", "lipschitz"])
    def test_identical_predictions(self, form):
        u = np.random.default_rng(2).normal(size=(3, 5))
        assert mixing_slack(u, u, [0.2, 0.3, 0.5], 1, form) == 0.0

    def test_stated_form_fails_for_cross_entropy(self):
        slack = mixing_slack(**STATED_COUNTEREXAMPLE, form="stated")
        assert slack < -0.04

    def test_lipschitz_form_holds(self):
        report = check_mixing_lemma(trials=10_000, seed=0, form="lipschitz")
        assert report.violations == 0
        assert report.holds
        assert report.worst_slack >= -1e-9

    def test_stated_form_report(self):
        report = check_mixing_lemma(trials=2_000, seed=0, form="stated")
        assert report.holds == (report.violations == 0)
        if report.violations:
            assert report.counterexample["slack"] < 0


class TestStabilityProbe:
    @pytest.fixture
    def small_data(self):
        return gen_gaussians(0, 16, 2, 2, 0.8, n_test=8)

    def test_identical_replacement_is_exactly_stable(self, make_generalist, small_data):
        config = make_generalist(Variant.D_NAT_LINF, epochs=2, batch_size=8)
        probe = stability_probe(config, small_data, replacements=2, identical=True)
        assert probe.global_eps == 0.0
        assert probe.per_task_eps == [0.0, 0.0]
        assert probe.eps_oplus == 0.0

    def test_all_weight_on_first_learner(self, make_generalist, small_data):
        config = make_generalist(Variant.D_NAT_LINF, epochs=2, batch_size=8, gamma1=1.0, ema_decay=0.0)
        probe = stability_probe(config, small_data, replacements=3, seed=4)
        assert probe.gamma == [1.0, 0.0]
        assert probe.global_eps == probe.per_task_eps[0]

    def test_report_identities(self, make_generalist, small_data):
        config = make_generalist(Variant.T_NAT_LINF_L2, epochs=2, batch_size=8)
        probe = stability_probe(config, small_data, replacements=2, seed=1, kappa=0.5)
        assert probe.eps_oplus == float(sum(g * e for g, e in zip(probe.gamma, probe.per_task_eps)))
        assert math.isfinite(probe.global_eps)
        assert probe.within_kappa == (probe.global_eps <= probe.eps_oplus + 0.5 * probe.drift)
        if probe.drift > 0:
            assert probe.ratio == pytest.approx((probe.global_eps - probe.eps_oplus) / probe.drift)
        assert len(probe.swaps) == 2

    def test_dataset_size_limit(self, make_generalist):
        data = gen_gaussians(0, 65, 2, 2, 0.5)
        with pytest.raises(DomainError):
            stability_probe(make_generalist(), data, replacements=1)
