"""Optimizer steps checked against hand-derived update formulas."""

import numpy as np
import pytest

from rfsearch.errors import MissingGrad, ShapeMismatch
from rfsearch.optim import ParamStore, adam_step, sgd_step
from rfsearch.tensor import Tensor


def make_param(store, name, value, grad):
    t = store.register(name, Tensor(np.full((1, 1, 1, 1), value, dtype=np.float32)))
    t.grad = np.full((1, 1, 1, 1), grad, dtype=np.float32)
    return t


class TestParamStore:
    def test_register_duplicate_rejected(self):
        store = ParamStore()
        make_param(store, "w", 1.0, 0.0)
        with pytest.raises(ShapeMismatch):
            store.register("w", Tensor(np.zeros((1, 1, 1, 1))))

    def test_missing_grad(self):
        store = ParamStore()
        store.register("w", Tensor(np.zeros((1, 1, 1, 1))))
        with pytest.raises(MissingGrad):
            sgd_step(store, 0.1)

    def test_param_count(self):
        store = ParamStore()
        store.register("a", Tensor(np.zeros((2, 3, 1, 1))))
        store.register("b", Tensor(np.zeros((1, 1, 4, 4))))
        assert store.param_count() == 6 + 16

    def test_state_dict_roundtrip(self):
        store = ParamStore()
        t = make_param(store, "w", 2.0, 0.0)
        snap = store.state_dict()
        t.data[...] = -1.0
        store.load_state_dict(snap)
        assert t.data.item() == 2.0


class TestSGD:
    def test_plain_step(self):
        store = ParamStore()
        t = make_param(store, "w", 1.0, 0.5)
        sgd_step(store, lr=0.1)
        assert t.data.item() == pytest.approx(1.0 - 0.1 * 0.5)

    def test_momentum_two_steps(self):
        """v1 = g, v2 = mu*v1 + g; w follows w - lr*v at each step."""
        store = ParamStore()
        t = make_param(store, "w", 0.0, 1.0)
        sgd_step(store, lr=0.1, momentum=0.9)
        t.grad = np.full((1, 1, 1, 1), 1.0, dtype=np.float32)
        sgd_step(store, lr=0.1, momentum=0.9)
        # w = -lr*(v1 + v2) = -0.1*(1 + 1.9)
        assert t.data.item() == pytest.approx(-0.29, abs=1e-6)

    def test_weight_decay_adds_to_grad(self):
        store = ParamStore()
        t = make_param(store, "w", 2.0, 0.0)
        sgd_step(store, lr=0.1, weight_decay=0.5)
        assert t.data.item() == pytest.approx(2.0 - 0.1 * (0.5 * 2.0))

    def test_step_count(self):
        store = ParamStore()
        make_param(store, "w", 0.0, 1.0)
        sgd_step(store, 0.1)
        assert store.step_count == 1


class TestAdam:
    def test_first_step_is_signlike(self):
        """After bias correction, step 1 is lr * g / (|g| + eps)."""
        store = ParamStore()
        t = make_param(store, "w", 0.0, 0.3)
        adam_step(store, lr=0.01, betas=(0.9, 0.999), eps=1e-8)
        assert t.data.item() == pytest.approx(-0.01 * 0.3 / (0.3 + 1e-8), rel=1e-5)

    def test_two_steps_match_reference(self):
        b1, b2, lr, eps = 0.5, 0.999, 0.02, 1e-8
        grads = [0.7, -0.2]
        # reference implementation
        m = v = 0.0
        w = 1.0
        for k, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**k)) / (np.sqrt(v / (1 - b2**k)) + eps)
        store = ParamStore()
        t = make_param(store, "w", 1.0, grads[0])
        adam_step(store, lr, (b1, b2), eps=eps)
        t.grad = np.full((1, 1, 1, 1), grads[1], dtype=np.float32)
        adam_step(store, lr, (b1, b2), eps=eps)
        assert t.data.item() == pytest.approx(w, rel=1e-5)

    def test_coupled_weight_decay(self):
        store = ParamStore()
        t = make_param(store, "w", 1.0, 0.0)
        adam_step(store, lr=0.1, weight_decay=0.01)
        # effective grad = 0.01*1.0, step = lr * sign-ish
        assert t.data.item() < 1.0

    def test_bad_eps(self):
        store = ParamStore()
        make_param(store, "w", 0.0, 1.0)
        with pytest.raises(ShapeMismatch):
            adam_step(store, 0.1, eps=0.0)
