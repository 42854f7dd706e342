import numpy as np
import pytest

from fedsim import kernels
from fedsim.clients import LocalRunConfig, client_delta, local_sgd
from fedsim.errors import DivergenceError
from fedsim.models import Batch, Model, gradient
from fedsim.params import ParamVector
from fedsim.rng import CLIENT, substream

UNIT_QUAD = Model.quadratic(np.array([1.0]))  # per-step map w <- (1-gamma)*w
DUMMY_SHARD = Batch(np.zeros((1, 1)), np.zeros(1))


class TestLocalRunConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            LocalRunConfig(gamma=-0.1, local_steps=1)
        with pytest.raises(ValueError):
            LocalRunConfig(gamma=0.1, local_steps=0)
        with pytest.raises(ValueError):
            LocalRunConfig(gamma=0.1, local_steps=1, batch_size=0)
        with pytest.raises(ValueError):
            LocalRunConfig(gamma=float("inf"), local_steps=1)

    def test_zero_gamma_allowed(self):
        cfg = LocalRunConfig(gamma=0.0, local_steps=1)
        assert cfg.gamma == 0.0


class TestLocalSgd:
    def test_one_exact_step(self):
        out = local_sgd(
            ParamVector.of(2.0), UNIT_QUAD, DUMMY_SHARD,
            LocalRunConfig(gamma=0.1, local_steps=1),
            np.random.default_rng(0),
        )
        assert out == ParamVector.of(1.8)

    def test_zero_gamma_is_identity(self):
        out = local_sgd(
            ParamVector.of(2.0), UNIT_QUAD, DUMMY_SHARD,
            LocalRunConfig(gamma=0.0, local_steps=1),
            np.random.default_rng(0),
        )
        assert out == ParamVector.of(2.0)

    def test_three_steps_iterate_the_map(self):
        out = local_sgd(
            ParamVector.of(2.0), UNIT_QUAD, DUMMY_SHARD,
            LocalRunConfig(gamma=0.1, local_steps=3),
            np.random.default_rng(0),
        )
        # independent replay of w <- w - 0.1*w, plus the hand value 2*0.9^3
        w = 2.0
        for _ in range(3):
            w = w - 0.1 * w
        assert out == ParamVector.of(w)
        assert out.values[0] == pytest.approx(1.458, rel=1e-14)

    def test_full_batch_single_step_matches_gradient(self):
        rng = np.random.default_rng(1)
        model = Model.logistic(4)
        shard = Batch(
            rng.standard_normal((9, 4)),
            np.where(rng.standard_normal(9) > 0, 1.0, -1.0),
        )
        w = ParamVector(rng.standard_normal(4))
        out = local_sgd(
            w, model, shard,
            LocalRunConfig(gamma=0.2, local_steps=1, full_batch=True),
            np.random.default_rng(0),
        )
        want = w.values - 0.2 * gradient(model, w, shard).values
        np.testing.assert_allclose(out.values, want, rtol=1e-14, atol=1e-15)

    def test_deterministic_given_stream(self):
        rng = np.random.default_rng(2)
        model = Model.least_squares(3)
        shard = Batch(rng.standard_normal((20, 3)), rng.standard_normal(20))
        w = ParamVector(rng.standard_normal(3))
        cfg = LocalRunConfig(gamma=0.05, local_steps=4, batch_size=5)
        a = local_sgd(w, model, shard, cfg, substream(9, CLIENT, 3, 1))
        b = local_sgd(w, model, shard, cfg, substream(9, CLIENT, 3, 1))
        c = local_sgd(w, model, shard, cfg, substream(9, CLIENT, 3, 2))
        assert a == b
        assert a != c  # different client stream draws different batches

    def test_telescoping_identity(self):
        # w0 - wH == gamma * sum of the per-step batch gradients
        rng = np.random.default_rng(3)
        model = Model.least_squares(3)
        shard = Batch(rng.standard_normal((15, 3)), rng.standard_normal(15))
        w0 = ParamVector(rng.standard_normal(3))
        gamma, steps, batch = 0.05, 6, 4
        cfg = LocalRunConfig(gamma=gamma, local_steps=steps, batch_size=batch)
        out = local_sgd(w0, model, shard, cfg, substream(7, CLIENT, 0, 0))
        # replay the same index stream manually
        idx = substream(7, CLIENT, 0, 0).integers(
            0, len(shard), size=(steps, batch), dtype=np.int64
        )
        w = w0.values.copy()
        acc = np.zeros(3)
        for h in range(steps):
            g = gradient(
                model, ParamVector(w), Batch(shard.x[idx[h]], shard.y[idx[h]])
            ).values
            acc += g
            w = w - gamma * g
        np.testing.assert_allclose(
            w0.values - out.values, gamma * acc, rtol=1e-12, atol=1e-14
        )

    def test_divergence_names_step(self):
        with pytest.raises(DivergenceError, match=r"step h=\d+") as err:
            local_sgd(
                ParamVector.of(1.0), UNIT_QUAD, DUMMY_SHARD,
                LocalRunConfig(gamma=1e200, local_steps=10),
                np.random.default_rng(0),
            )
        assert err.value.step is not None and 0 <= err.value.step < 10

    def test_empty_shard_rejected(self):
        with pytest.raises(ValueError):
            local_sgd(
                ParamVector.of(1.0), UNIT_QUAD, [],
                LocalRunConfig(gamma=0.1, local_steps=1),
                np.random.default_rng(0),
            )

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            local_sgd(
                ParamVector.of(1.0, 2.0), UNIT_QUAD, DUMMY_SHARD,
                LocalRunConfig(gamma=0.1, local_steps=1),
                np.random.default_rng(0),
            )

    def test_backend_choice_is_invisible(self):
        rng = np.random.default_rng(4)
        model = Model.logistic(3)
        shard = Batch(
            rng.standard_normal((12, 3)),
            np.where(rng.standard_normal(12) > 0, 1.0, -1.0),
        )
        w = ParamVector(rng.standard_normal(3))
        cfg = LocalRunConfig(gamma=0.3, local_steps=5, batch_size=4)
        previous = kernels.active
        try:
            kernels.use("pure")
            a = local_sgd(w, model, shard, cfg, substream(5, CLIENT, 0, 0))
        finally:
            kernels.active = previous
        b = local_sgd(w, model, shard, cfg, substream(5, CLIENT, 0, 0))
        assert a.values.tobytes() == b.values.tobytes()


class TestClientDelta:
    def test_arithmetic(self):
        d = client_delta(ParamVector.of(2.0), ParamVector.of(1.8))
        np.testing.assert_allclose(d.values, [0.2], rtol=1e-15)

    def test_inactive_convention_gives_zero(self):
        w = ParamVector.of(1.0, -2.0)
        assert client_delta(w, w) == ParamVector.zeros(2)

    def test_single_full_batch_step_recovers_scaled_gradient(self):
        rng = np.random.default_rng(5)
        model = Model.least_squares(4)
        shard = Batch(rng.standard_normal((7, 4)), rng.standard_normal(7))
        w = ParamVector(rng.standard_normal(4))
        out = local_sgd(
            w, model, shard,
            LocalRunConfig(gamma=0.12, local_steps=1, full_batch=True),
            np.random.default_rng(0),
        )
        delta = client_delta(w, out).values
        np.testing.assert_allclose(
            delta, 0.12 * gradient(model, w, shard).values, rtol=1e-13, atol=1e-15
        )

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match=r"\(2 vs 3\)"):
            client_delta(ParamVector.zeros(2), ParamVector.zeros(3))
