import numpy as np
import pytest

from learn.optim import (
    OptimizerKind,
    OptimizerState,
    ScheduleSpec,
    adam_step,
    lr_at,
    optimizer_step,
    sgd_step,
    wa_update,
)
from numeric.core import ParameterVector
from numeric.errors import ConfigError, DomainError, LayoutError


def pv(*values, layout="opt"):
    return ParameterVector(np.array(values, dtype=np.float64), layout)


class TestSGD:
    def test_plain_step_without_momentum(self):
        state = OptimizerState(momentum=0.0)
        params, grad = pv(1.0, -2.0, 0.5), pv(0.3, 0.1, -4.0)
        out = sgd_step(state, params, grad, 0.05)
        np.testing.assert_array_equal(out.values, params.values - 0.05 * grad.values)

    def test_zero_gradient_is_stationary(self):
        params = pv(1.0, 2.0)
        assert sgd_step(OptimizerState(), params, pv(0.0, 0.0), 0.1).equals(params)

    def test_momentum_recurrence(self):
        state = OptimizerState(momentum=0.9)
        params = pv(1.0)
        state._slots_for(params)["velocity"][:] = 1.0
        out = sgd_step(state, params, pv(2.0), 0.1)
        assert state.slots["velocity"][0] == pytest.approx(2.9)
        assert out.values[0] == pytest.approx(0.71)

    def test_weight_decay_is_added_to_gradient(self):
        state = OptimizerState(momentum=0.0, weight_decay=0.5)
        out = sgd_step(state, pv(2.0), pv(0.0), 0.1)
        assert out.values[0] == pytest.approx(2.0 - 0.1 * 1.0)

    def test_layout_mismatch(self):
        with pytest.raises(LayoutError):
            sgd_step(OptimizerState(), pv(1.0), pv(1.0, layout="other"), 0.1)
        state = OptimizerState()
        sgd_step(state, pv(1.0), pv(1.0), 0.1)
        with pytest.raises(LayoutError):
            sgd_step(state, pv(1.0, layout="other"), pv(1.0, layout="other"), 0.1)

    def test_validation(self):
        with pytest.raises(ConfigError):
            OptimizerState(momentum=1.0)
        with pytest.raises(ConfigError):
            OptimizerState(kind="adam", beta1=1.0)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        state = OptimizerState(kind=OptimizerKind.ADAM, eps_hat=1e-12)
        params = pv(0.5, -0.5, 2.0)
        out = adam_step(state, params, pv(3.0, -0.01, 100.0), 0.01)
        np.testing.assert_allclose(out.values - params.values, [-0.01, 0.01, -0.01], rtol=1e-6)

    def test_zero_gradient_is_stationary(self):
        params = pv(1.0, 2.0)
        state = OptimizerState(kind=OptimizerKind.ADAM)
        np.testing.assert_array_equal(adam_step(state, params, pv(0.0, 0.0), 0.1).values, params.values)

    def test_constant_gradient_second_step_not_larger(self):
        state = OptimizerState(kind=OptimizerKind.ADAM)
        p0 = pv(1.0, -1.0)
        g = pv(0.4, -2.0)
        p1 = adam_step(state, p0, g, 0.1)
        p2 = adam_step(state, p1, g, 0.1)
        first = np.abs(p1.values - p0.values)
        second = np.abs(p2.values - p1.values)
        assert np.all(second <= first + 1e-12)

    def test_dispatch_and_snapshot(self):
        state = OptimizerState(kind="adam")
        params = optimizer_step(state, pv(1.0), pv(0.5), 0.1)
        snap = state.snapshot()
        twin = OptimizerState(kind="adam")
        twin.restore(snap)
        a = optimizer_step(state, params, pv(0.5), 0.1)
        b = optimizer_step(twin, params, pv(0.5), 0.1)
        assert a.equals(b)
        state.reset_slots()
        assert state.slots == {} and state.step == 0


class TestSchedule:
    def test_start(self):
        assert lr_at(ScheduleSpec(40, 120), 0.1, 0) == 0.1

    def test_ramp_midpoint(self):
        assert lr_at(ScheduleSpec(40, 120), 0.1, 80) == pytest.approx(0.05)

    def test_endpoint(self):
        assert lr_at(ScheduleSpec(40, 120), 0.1, 120) == 0.0

    def test_terminal_fraction(self):
        assert lr_at(ScheduleSpec(0, 10, terminal_fraction=0.1), 1.0, 10) == pytest.approx(0.1)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            lr_at(ScheduleSpec(40, 120), 0.1, 121)
        with pytest.raises(DomainError):
            lr_at(ScheduleSpec(40, 120), 0.1, -1)

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            ScheduleSpec(50, 40)


class TestWeightAveraging:
    def test_no_memory(self):
        current = pv(0.3, 0.7)
        assert wa_update(pv(5.0, -5.0), current, 0.0).equals(current)

    def test_frozen(self):
        buffer = pv(5.0, -5.0)
        assert wa_update(buffer, pv(0.3, 0.7), 1.0).equals(buffer)

    def test_two_step_recurrence(self):
        buffer = wa_update(wa_update(pv(0.0), pv(1.0), 0.999), pv(1.0), 0.999)
        assert buffer.values[0] == pytest.approx(0.001999, abs=1e-15)

    def test_bad_decay_and_layout(self):
        with pytest.raises(DomainError):
            wa_update(pv(0.0), pv(1.0), 1.5)
        with pytest.raises(LayoutError):
            wa_update(pv(0.0), pv(1.0, layout="other"), 0.5)
