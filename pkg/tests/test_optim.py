from __future__ import annotations

import numpy as np
import pytest

from cpt.exceptions import ConfigError, NumericError
from cpt.models.config import ScheduleConfig
from cpt.optim import AdamState, adam_step, lr_at_step
from cpt.tensor import Tensor


def _state(**kw):
    defaults = dict(peak_lr=1e-3, warmup_steps=10, total_steps=110, weight_decay=0.0)
    return AdamState(**{**defaults, **kw})


class TestSchedule:
    def test_warmup_then_linear_decay(self):
        state = _state()
        assert lr_at_step(state, 0) == 0.0
        assert lr_at_step(state, 5) == pytest.approx(5e-4)
        assert lr_at_step(state, 10) == pytest.approx(1e-3)
        assert lr_at_step(state, 60) == pytest.approx(5e-4)
        assert lr_at_step(state, 110) == 0.0
        assert lr_at_step(state, 500) == 0.0

    def test_from_schedule(self):
        state = AdamState.from_schedule(ScheduleConfig(peak_lr=2e-4, warmup_steps=3, total_steps=9))
        assert (state.peak_lr, state.warmup_steps, state.total_steps) == (2e-4, 3, 9)

    def test_warmup_longer_than_run(self):
        with pytest.raises(ConfigError):
            _state(warmup_steps=200)


class TestAdamStep:
    def test_first_step_moves_by_lr(self):
        p = Tensor.parameter(np.array([1.0, -1.0]), name="w.weight")
        state = _state(warmup_steps=0)
        lr = adam_step({"w.weight": p}, {"w.weight": np.array([0.5, -2.0])}, state)
        # bias-corrected first step is sign(grad) * lr
        np.testing.assert_allclose(p.values, [1.0 - lr, -1.0 + lr], rtol=1e-6)
        assert state.step == 1

    def test_zero_gradient_without_decay_is_identity(self):
        p = Tensor.parameter(np.array([0.3, -1.2]), name="w.weight")
        state = _state(warmup_steps=0)
        for _ in range(3):
            adam_step({"w.weight": p}, {"w.weight": np.zeros(2)}, state)
        np.testing.assert_array_equal(p.values, [0.3, -1.2])

    def test_decay_skips_bias_and_gain(self):
        params = {
            "a.weight": Tensor.parameter(np.ones(2)),
            "a.bias": Tensor.parameter(np.ones(2)),
            "n.gain": Tensor.parameter(np.ones(2)),
        }
        grads = {name: np.zeros(2) for name in params}
        adam_step(params, grads, _state(warmup_steps=0, weight_decay=0.1))
        assert np.all(params["a.weight"].values < 1.0)
        np.testing.assert_array_equal(params["a.bias"].values, np.ones(2))
        np.testing.assert_array_equal(params["n.gain"].values, np.ones(2))

    def test_nan_gradient_leaves_everything_untouched(self):
        params = {"a.weight": Tensor.parameter(np.ones(2)), "b.weight": Tensor.parameter(np.ones(2))}
        state = _state()
        with pytest.raises(NumericError, match="b.weight"):
            adam_step(params, {"a.weight": np.ones(2), "b.weight": np.array([np.nan, 0.0])}, state)
        assert state.step == 0
        assert not state.m
        np.testing.assert_array_equal(params["a.weight"].values, np.ones(2))

    def test_unknown_parameter(self):
        with pytest.raises(ConfigError):
            adam_step({"a.weight": Tensor.parameter(np.ones(2))}, {"z.weight": np.ones(2)}, _state())

    def test_wrong_gradient_shape(self):
        with pytest.raises(ConfigError):
            adam_step({"a.weight": Tensor.parameter(np.ones(2))}, {"a.weight": np.ones(3)}, _state())
