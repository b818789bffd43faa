import io

import numpy as np
import pytest
from scipy.stats import chi2

from pitchforge.nn import (
    GradientError,
    ParameterSet,
    RngStream,
    ValueArray,
    adam_step,
    backward,
    concat,
    conv1d,
    dense,
    gru_init,
    gru_step,
    load_params,
    matmul,
    sample_categorical,
    save_params,
    softmax_xent,
    stack_time,
)

EPS = 1e-6
REL_TOL = 1e-4


def check_gradients(build_loss, leaves, rel_tol=REL_TOL, n_coords=5, seed=0):
    """Central finite differences on sampled coordinates of every leaf."""
    rng = np.random.default_rng(seed)
    for leaf in leaves:
        leaf.grad = None
    loss = build_loss()
    backward(loss)
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        grad = np.zeros_like(flat) if leaf.grad is None else leaf.grad.reshape(-1)
        coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + EPS
            up = float(build_loss().data)
            flat[c] = keep - EPS
            down = float(build_loss().data)
            flat[c] = keep
            fd = (up - down) / (2 * EPS)
            denom = max(abs(fd), abs(grad[c]), 1e-4)
            assert abs(fd - grad[c]) / denom <= rel_tol, (
                f"grad mismatch at coord {c}: autodiff {grad[c]:.8g} vs fd {fd:.8g}"
            )


class TestDense:
    def test_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        w = ValueArray(np.eye(4))
        b = ValueArray(np.zeros(4))
        assert np.array_equal(dense(x, w, b).data, x)

    def test_relu_clamps_and_kills_gradient(self):
        x = ValueArray(-np.ones((2, 3)))
        w = ValueArray(np.eye(3))
        b = ValueArray(np.zeros(3))
        out = dense(x, w, b, activation="relu")
        assert np.all(out.data == 0.0)
        loss = softmax_xent(out, np.zeros(2, dtype=int))
        backward(loss)
        assert np.all(x.grad == 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            x = ValueArray(rng.normal(size=(3, 4)))
            w = ValueArray(rng.normal(size=(4, 2)))
            b = ValueArray(rng.normal(size=2))
            targets = rng.integers(0, 2, size=3)
            check_gradients(
                lambda: softmax_xent(dense(x, w, b, activation="relu"), targets),
                [x, w, b],
                seed=trial,
            )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))


class TestGruStep:
    def zero_params(self, i, h):
        rng = RngStream(0)
        p = gru_init(rng, i, h)
        for v in p.values():
            v.data[:] = 0.0
        return p

    def test_zero_parameters_halve_state(self):
        h0 = np.array([[2.0, -4.0, 6.0]])
        out = gru_step(np.ones((1, 2)), ValueArray(h0), self.zero_params(2, 3))
        assert np.allclose(out.data, 0.5 * h0)

    def test_zero_state_zero_params(self):
        out = gru_step(np.ones((1, 2)), np.zeros((1, 3)), self.zero_params(2, 3))
        assert np.all(out.data == 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            p = gru_init(RngStream(trial), 3, 4)
            x = ValueArray(rng.normal(size=(2, 3)))
            h = ValueArray(rng.normal(size=(2, 4)))
            targets = rng.integers(0, 4, size=2)
            leaves = [x, h] + list(p.values())
            check_gradients(lambda: softmax_xent(gru_step(x, h, p), targets), leaves, seed=trial)


class TestConv1d:
    def test_width_one_identity(self):
        x = np.arange(10.0).reshape(1, 5, 2)
        k = np.eye(2).reshape(1, 2, 2)
        assert np.array_equal(conv1d(x, k).data, x)

    def test_width_three_shift_with_zero_fill(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]]).reshape(1, 5, 1)
        k = np.array([0.0, 0.0, 1.0]).reshape(3, 1, 1)
        out = conv1d(x, k).data.reshape(-1)
        assert np.array_equal(out, [2.0, 3.0, 4.0, 5.0, 0.0])

    def test_even_width_rejected(self):
        with pytest.raises(ValueError):
            conv1d(np.zeros((1, 4, 2)), np.zeros((2, 2, 2)))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            x = ValueArray(rng.normal(size=(2, 6, 3)))
            k = ValueArray(rng.normal(size=(5, 3, 2)))
            targets = rng.integers(0, 2, size=12)

            def loss():
                out = conv1d(x, k)
                from pitchforge.nn import reshape

                return softmax_xent(reshape(out, (12, 2)), targets)

            check_gradients(loss, [x, k], seed=trial)


class TestSoftmaxXent:
    def test_uniform_loss_is_log_k(self):
        loss = softmax_xent(np.zeros((4, 128)), np.arange(4))
        assert float(loss.data) == pytest.approx(np.log(128.0), abs=1e-12)

    def test_saturated_target_loss_near_zero(self):
        logits = np.zeros((2, 8))
        logits[np.arange(2), [3, 5]] = 1e4
        assert float(softmax_xent(logits, np.array([3, 5])).data) < 1e-8

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(4)
        logits = ValueArray(rng.normal(size=(6, 10)))
        loss = softmax_xent(logits, rng.integers(0, 10, size=6))
        backward(loss)
        assert np.allclose(logits.grad.sum(axis=1), 0.0, atol=1e-15)

    def test_mask_excludes_rows(self):
        rng = np.random.default_rng(5)
        logits = ValueArray(rng.normal(size=(4, 6)))
        targets = rng.integers(0, 6, size=4)
        mask = np.array([True, False, True, False])
        loss = softmax_xent(logits, targets, mask)
        backward(loss)
        assert np.all(logits.grad[~mask] == 0.0)
        partial = softmax_xent(logits.data[mask], targets[mask])
        assert float(loss.data) == pytest.approx(float(partial.data))

    def test_target_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            softmax_xent(np.zeros((2, 4)), np.array([0, 4]))


class TestAdam:
    def test_first_step_is_signed_lr(self):
        params = ParameterSet()
        p = params.add("w", ValueArray(np.zeros(4)))
        p.grad = np.array([0.5, -2.0, 3.0, -0.1])
        adam_step(params, lr=1e-3)
        assert np.allclose(p.data, -1e-3 * np.array([1.0, -1.0, 1.0, -1.0]), atol=1e-6)

    def test_zero_gradient_is_noop(self):
        params = ParameterSet()
        p = params.add("w", ValueArray(np.ones(3)))
        p.grad = np.zeros(3)
        adam_step(params)
        assert np.array_equal(p.data, np.ones(3))

    def test_identical_steps_are_deterministic(self):
        def run():
            params = ParameterSet()
            p = params.add("w", ValueArray(np.ones(3)))
            for _ in range(2):
                p.grad = np.array([0.1, -0.2, 0.3])
                adam_step(params, lr=1e-2)
            return p.data.copy()

        assert np.array_equal(run(), run())

    def test_non_finite_gradient_aborts(self):
        params = ParameterSet()
        p = params.add("w", ValueArray(np.ones(2)))
        p.grad = np.array([1.0, np.nan])
        with pytest.raises(GradientError, match="w"):
            adam_step(params)


class TestSampleCategorical:
    def test_saturated_logit_always_wins(self):
        logits = np.zeros(8)
        logits[5] = 1e4
        rng = RngStream(0)
        assert all(sample_categorical(logits, rng) == 5 for _ in range(50))

    def test_fixed_seed_reproduces_sequence(self):
        logits = np.linspace(-1, 1, 6)
        a = [sample_categorical(logits, RngStream(7).child(i)) for i in range(20)]
        b = [sample_categorical(logits, RngStream(7).child(i)) for i in range(20)]
        assert a == b

    def test_uniform_draws_pass_chi_square(self):
        rng = RngStream(123)
        draws = np.array([sample_categorical(np.zeros(8), rng) for _ in range(10_000)])
        counts = np.bincount(draws, minlength=8)
        expected = 10_000 / 8
        stat = float(np.sum((counts - expected) ** 2 / expected))
        assert stat < chi2.ppf(0.999, df=7)

    def test_non_positive_temperature_rejected(self):
        with pytest.raises(ValueError):
            sample_categorical(np.zeros(3), RngStream(0), temperature=0.0)


class TestComposedGraph:
    def test_dense_gru_xent_chain_gradients(self):
        rng = np.random.default_rng(8)
        stream = RngStream(99)
        w = ValueArray(rng.normal(size=(3, 4)) * 0.5)
        b = ValueArray(np.zeros(4))
        p = gru_init(stream, 4, 5)
        wo = ValueArray(rng.normal(size=(5, 6)) * 0.5)
        bo = ValueArray(np.zeros(6))
        frames = rng.normal(size=(4, 1, 3))
        targets = rng.integers(0, 6, size=4)

        def loss():
            h = np.zeros((1, 5))
            logits = []
            for t in range(4):
                x = dense(frames[t], w, b, activation="relu")
                h = gru_step(x, h, p)
                logits.append(dense(h, wo, bo))
            seq = stack_time(logits)
            from pitchforge.nn import reshape

            return softmax_xent(reshape(seq, (4, 6)), targets)

        check_gradients(loss, [w, b, wo, bo] + list(p.values()), seed=1)


class TestCheckpoint:
    def test_round_trip_bytes_identical(self):
        rng = RngStream(11)
        params = ParameterSet()
        params.add("dense.W", ValueArray(rng.normal(size=(4, 3))))
        params.add("dense.b", ValueArray(rng.normal(size=3)))
        params.add_group("gru", gru_init(rng, 3, 2))
        for p in params.params.values():
            p.grad = np.ones_like(p.data)
        adam_step(params)

        first = io.BytesIO()
        save_params(first, params)
        loaded = load_params(io.BytesIO(first.getvalue()))
        assert loaded.names() == params.names()
        assert loaded.step == params.step
        second = io.BytesIO()
        save_params(second, loaded)
        assert first.getvalue() == second.getvalue()

    def test_bad_magic_rejected(self):
        from pitchforge.nn.checkpoint import CheckpointError

        with pytest.raises(CheckpointError):
            load_params(io.BytesIO(b"nope"))


class TestConcatStack:
    def test_concat_gradient_routing(self):
        a = ValueArray(np.ones((2, 3)))
        b = ValueArray(np.ones((2, 2)))
        out = concat([a, b], axis=1)
        loss = softmax_xent(out, np.array([0, 4]))
        backward(loss)
        assert a.grad.shape == (2, 3) and b.grad.shape == (2, 2)
