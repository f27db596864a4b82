"""Gradient correctness of every primitive plus layer and optimizer behavior.

All gradient checks run in float64 against central differences. Inputs are
kept away from kinks (relu at zero, clip boundaries) so the two-sided
difference is meaningful.
"""
import numpy as np
import pytest

from cyclesense.autodiff import (Adam, BatchNorm, ConvBlock, Dense, GRU,
                                 Parameter, ResidualBlock, Tensor, adam_step,
                                 bce_loss_weighted, grad_check, record,
                                 recalibrate_stats)
from cyclesense.autodiff import tensor as T


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, np.float64), requires_grad=grad)


def check(fn, *inputs, tol=1e-6, max_coords=None):
    report = grad_check(fn, list(inputs), tolerance=tol,
                        max_coords_per_input=max_coords)
    assert report.passed, (
        f"rel err {report.max_rel_error:.2e} at input {report.worst_input} "
        f"coord {report.worst_coord}: analytic {report.worst_analytic:.6g} "
        f"vs numeric {report.worst_numeric:.6g}")


class TestElementwiseGradients:
    def setup_method(self):
        self.rng = np.random.default_rng(42)

    def test_add_with_broadcast(self):
        a, b = t64(self.rng.normal(size=(3, 4))), t64(self.rng.normal(size=4))
        check(lambda a, b: T.mean(T.add(a, b)), a, b)

    def test_sub(self):
        a, b = t64(self.rng.normal(size=(2, 3))), t64(self.rng.normal(size=(2, 3)))
        check(lambda a, b: T.sum_(T.sub(a, b)), a, b)

    def test_mul_with_broadcast(self):
        a, b = t64(self.rng.normal(size=(3, 4))), t64(self.rng.normal(size=(3, 1)))
        check(lambda a, b: T.mean(T.mul(a, b)), a, b)

    def test_div(self):
        a = t64(self.rng.normal(size=(3, 3)))
        b = t64(self.rng.uniform(1.0, 2.0, size=(3, 3)))
        check(lambda a, b: T.mean(T.div(a, b)), a, b)

    def test_neg(self):
        a = t64(self.rng.normal(size=5))
        check(lambda a: T.sum_(T.neg(a)), a)

    def test_matmul(self):
        a, b = t64(self.rng.normal(size=(3, 4))), t64(self.rng.normal(size=(4, 2)))
        check(lambda a, b: T.mean(T.matmul(a, b)), a, b)

    def test_matmul_rejects_higher_rank(self):
        with pytest.raises(ValueError):
            T.matmul(t64(np.zeros((2, 2, 2))), t64(np.zeros((2, 2))))


class TestShapeOpGradients:
    def setup_method(self):
        self.rng = np.random.default_rng(7)

    def test_reshape(self):
        a = t64(self.rng.normal(size=(2, 6)))
        check(lambda a: T.mean(T.mul(T.reshape(a, (3, 4)), T.reshape(a, (3, 4)))), a)

    def test_transpose(self):
        a = t64(self.rng.normal(size=(2, 3, 4)))
        weight = self.rng.normal(size=(4, 3, 2))
        check(lambda a: T.sum_(T.mul(T.transpose(a, (2, 1, 0)), weight)), a)

    def test_concat(self):
        a, b = t64(self.rng.normal(size=(2, 3))), t64(self.rng.normal(size=(2, 2)))
        w = self.rng.normal(size=(2, 5))
        check(lambda a, b: T.sum_(T.mul(T.concat([a, b], axis=1), w)), a, b)

    def test_broadcast_to(self):
        a = t64(self.rng.normal(size=(1, 4)))
        w = self.rng.normal(size=(3, 4))
        check(lambda a: T.sum_(T.mul(T.broadcast_to(a, (3, 4)), w)), a)

    def test_select(self):
        a = t64(self.rng.normal(size=(2, 5, 3)))
        check(lambda a: T.mean(T.select(a, 2, axis=1)), a)


class TestReductionsAndNonlinearities:
    def setup_method(self):
        self.rng = np.random.default_rng(13)

    @pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False),
                                               ((0, 2), True), (1, True)])
    def test_mean(self, axis, keepdims):
        a = t64(self.rng.normal(size=(2, 3, 4)))
        check(lambda a: T.sum_(T.mean(a, axis=axis, keepdims=keepdims)), a)

    @pytest.mark.parametrize("axis", [None, 0, (0, 1)])
    def test_sum(self, axis):
        a = t64(self.rng.normal(size=(3, 4)))
        weight = 1.0 + self.rng.random()
        check(lambda a: T.mul(T.sum_(T.sum_(a, axis=axis)), weight), a)

    def test_relu_away_from_kink(self):
        vals = self.rng.normal(size=(4, 4))
        vals[np.abs(vals) < 0.1] += 0.2
        check(lambda a: T.sum_(T.relu(a)), t64(vals))

    def test_relu_blocks_gradient_below_zero(self):
        a = t64([-1.0, 2.0])
        with record() as tape:
            out = T.sum_(T.relu(a))
            tape.backward(out)
        assert a.grad.tolist() == [0.0, 1.0]

    def test_sigmoid(self):
        check(lambda a: T.mean(T.sigmoid(a)), t64(self.rng.normal(size=6)))

    def test_sigmoid_saturated_tails_stay_finite(self):
        out = T.sigmoid(Tensor(np.array([-500.0, 500.0], np.float32)))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(0.0, abs=1e-30)
        assert out.data[1] == pytest.approx(1.0)

    def test_tanh(self):
        check(lambda a: T.mean(T.tanh(a)), t64(self.rng.normal(size=6)))

    def test_log(self):
        a = t64(self.rng.uniform(0.5, 3.0, size=5))
        check(lambda a: T.sum_(T.log(a)), a)

    def test_sqrt(self):
        a = t64(self.rng.uniform(0.5, 3.0, size=5))
        check(lambda a: T.sum_(T.sqrt(a)), a)

    def test_clip_passes_gradient_only_inside(self):
        a = t64([-2.0, 0.5, 2.0])
        with record() as tape:
            out = T.sum_(T.clip(a, -1.0, 1.0))
            tape.backward(out)
        assert a.grad.tolist() == [0.0, 1.0, 0.0]

    def test_dropout_gradient(self):
        a = t64(self.rng.normal(size=(4, 5)))
        check(lambda a: T.mean(
            T.dropout(a, 0.4, np.random.default_rng(5), training=True)), a)

    def test_dropout_statistics_and_scaling(self):
        rng = np.random.default_rng(1)
        x = Tensor(np.ones((400, 250), np.float64))
        out = T.dropout(x, 0.3, rng, training=True)
        kept = out.data != 0.0
        frac = 1.0 - kept.mean()
        # binomial: sd of the zero fraction is ~0.00145; allow 5 sigma
        assert frac == pytest.approx(0.3, abs=0.0073)
        assert np.allclose(out.data[kept], 1.0 / 0.7)

    def test_dropout_identity_when_not_training(self):
        x = Tensor(np.ones(10))
        assert T.dropout(x, 0.5, np.random.default_rng(0), training=False) is x

    def test_dropout_rate_validation(self):
        with pytest.raises(ValueError):
            T.dropout(Tensor(np.ones(3)), 1.0, np.random.default_rng(0))


class TestConv3d:
    def setup_method(self):
        self.rng = np.random.default_rng(21)

    def test_valid_gradients(self):
        x = t64(self.rng.normal(size=(2, 3, 3, 4, 2)))
        w = t64(self.rng.normal(size=(2, 1, 3, 2, 2)) * 0.5)
        b = t64(self.rng.normal(size=2))
        check(lambda x, w, b: T.mean(T.conv3d(x, w, b, padding="valid")),
              x, w, b, max_coords=40)

    def test_same_gradients(self):
        x = t64(self.rng.normal(size=(1, 2, 3, 4, 1)))
        w = t64(self.rng.normal(size=(3, 3, 3, 1, 2)) * 0.5)
        check(lambda x, w: T.mean(T.conv3d(x, w, padding="same")),
              x, w, max_coords=40)

    def test_same_preserves_spatial_extents(self):
        out = T.conv3d(Tensor(np.zeros((1, 4, 5, 6, 2))),
                       Tensor(np.zeros((3, 2, 3, 2, 7))), padding="same")
        assert out.shape == (1, 4, 5, 6, 7)

    def test_valid_shrinks_by_kernel_minus_one(self):
        out = T.conv3d(Tensor(np.zeros((1, 4, 5, 6, 2))),
                       Tensor(np.zeros((3, 2, 3, 2, 7))), padding="valid")
        assert out.shape == (1, 2, 4, 4, 7)

    def test_identity_kernel_reproduces_input(self):
        x = self.rng.normal(size=(1, 3, 4, 5, 1))
        w = np.ones((1, 1, 1, 1, 1))
        out = T.conv3d(Tensor(x), Tensor(w), padding="valid")
        np.testing.assert_allclose(out.data, x)

    def test_hand_computed_window_sum(self):
        # all-ones 2x2x2 kernel sums each window
        x = np.arange(2 * 2 * 3, dtype=np.float64).reshape(1, 2, 2, 3, 1)
        w = np.ones((2, 2, 2, 1, 1))
        out = T.conv3d(Tensor(x), Tensor(w), padding="valid")
        flat = x[0, :, :, :, 0]
        expect = [[np.sum(flat[:, :, j:j + 2]) for j in range(2)]]
        np.testing.assert_allclose(out.data[0, 0], np.asarray(expect).T.reshape(1, 2, 1).T)

    def test_oversized_kernel_rejected(self):
        with pytest.raises(ValueError):
            T.conv3d(Tensor(np.zeros((1, 2, 2, 2, 1))),
                     Tensor(np.zeros((3, 3, 3, 1, 1))), padding="valid")

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            T.conv3d(Tensor(np.zeros((1, 3, 3, 3, 2))),
                     Tensor(np.zeros((1, 1, 1, 3, 1))))


class TestTapeMechanics:
    def test_no_tape_means_no_tracking(self):
        a = t64([1.0, 2.0])
        out = T.mul(a, a)
        assert out.requires_grad is False and a.grad is None

    def test_fanout_accumulates(self):
        a = t64([3.0])
        with record() as tape:
            out = T.sum_(T.add(a, a))
            tape.backward(out)
        assert a.grad.tolist() == [2.0]

    def test_dead_branch_keeps_grad_none(self):
        a, b = t64([1.0]), t64([2.0])
        with record() as tape:
            dead = T.mul(b, b)  # noqa: F841 - intentionally unused
            out = T.sum_(T.mul(a, a))
            tape.backward(out)
        assert b.grad is None and a.grad is not None

    def test_backward_seed_scales_gradients(self):
        a = t64([1.0, 1.0])
        with record() as tape:
            out = T.mul(a, np.array([2.0, 3.0]))
            tape.backward(out, seed=np.array([10.0, 100.0]))
        assert a.grad.tolist() == [20.0, 300.0]

    def test_nested_tapes_are_independent(self):
        a = t64([2.0])
        with record() as outer:
            y = T.mul(a, a)
            with record() as inner:
                z = T.mul(a, np.array([5.0]))
                inner.backward(T.sum_(z))
            inner_grad = a.grad.copy()
            a.grad = None
            outer.backward(T.sum_(y))
        assert inner_grad.tolist() == [5.0]
        assert a.grad.tolist() == [4.0]


class TestBceLoss:
    def test_hand_computed_value(self):
        pred = Tensor(np.array([0.8, 0.3], np.float64))
        loss = bce_loss_weighted(pred, np.array([1.0, 0.0]))
        assert loss.item() == pytest.approx(-(np.log(0.8) + np.log(0.7)) / 2)

    def test_class_weights_scale_terms(self):
        pred = Tensor(np.array([0.8, 0.3], np.float64))
        loss = bce_loss_weighted(pred, np.array([1.0, 0.0]), 2.0, 3.0)
        assert loss.item() == pytest.approx(-(2 * np.log(0.8) + 3 * np.log(0.7)) / 2)

    def test_analytic_gradient(self):
        # d/dp of -mean(y log p + (1-y) log(1-p)) is (-y/p + (1-y)/(1-p)) / n
        pred = t64([0.8, 0.3])
        with record() as tape:
            loss = bce_loss_weighted(pred, np.array([1.0, 0.0]))
            tape.backward(loss)
        assert pred.grad[0] == pytest.approx(-1.0 / 0.8 / 2)
        assert pred.grad[1] == pytest.approx(1.0 / 0.7 / 2)

    def test_saturated_predictions_stay_finite(self):
        pred = Tensor(np.array([0.0, 1.0], np.float64))
        loss = bce_loss_weighted(pred, np.array([1.0, 0.0]))
        assert np.isfinite(loss.item())

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        pred = t64(rng.uniform(0.1, 0.9, size=6))
        y = (rng.random(6) < 0.5).astype(np.float64)
        check(lambda p: bce_loss_weighted(p, y, 1.7, 0.6), pred)

    def test_tensor_target_accepted(self):
        pred = Tensor(np.array([0.5, 0.5], np.float64))
        loss = bce_loss_weighted(pred, Tensor(np.array([1.0, 0.0])))
        assert loss.item() == pytest.approx(-np.log(0.5))


class TestAdam:
    def test_first_step_magnitude_close_to_lr(self):
        p = Parameter(np.array([1.0, -1.0], np.float64))
        p.grad = np.array([0.3, -7.0])
        opt = Adam([p], lr=0.01)
        opt.step()
        # first-step update is lr * g / (|g| + eps), about lr * sign(g)
        assert p.data[0] == pytest.approx(1.0 - 0.01, rel=1e-4)
        assert p.data[1] == pytest.approx(-1.0 + 0.01, rel=1e-4)

    def test_constant_gradient_keeps_stepping(self):
        p = Parameter(np.array([0.0], np.float64))
        opt = Adam([p], lr=0.1)
        for _ in range(10):
            p.grad = np.array([1.0])
            opt.step()
        assert p.data[0] == pytest.approx(-1.0, rel=1e-3)

    def test_frozen_parameter_untouched(self):
        p, q = Parameter(np.ones(2)), Parameter(np.ones(2))
        q.freeze()
        opt = Adam([p, q], lr=0.5)
        p.grad = np.ones(2)
        q.grad = np.ones(2)
        opt.step()
        assert np.all(q.data == 1.0) and np.all(p.data != 1.0)

    def test_zero_grad_clears(self):
        p = Parameter(np.ones(2))
        p.grad = np.ones(2)
        Adam([p]).zero_grad()
        assert p.grad is None

    def test_adam_step_function_matches_class(self):
        data = np.array([2.0, -3.0])
        p = Parameter(data.copy())
        p.grad = np.array([0.5, 1.5])
        opt = Adam([p], lr=0.02)
        opt.step()
        raw = data.copy()
        m, v = np.zeros(2), np.zeros(2)
        adam_step(raw, np.array([0.5, 1.5]), m, v, t=1, lr=0.02)
        np.testing.assert_allclose(p.data, raw, rtol=1e-12)

    def test_adam_step_rejects_bad_count(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), t=0)


class TestDense:
    def test_affine_oracle(self):
        rng = np.random.default_rng(0)
        d = Dense(3, 2, rng, dtype=np.float64)
        x = rng.normal(size=(4, 3))
        out = d(Tensor(x))
        np.testing.assert_allclose(out.data, x @ d.w.data + d.b.data)

    def test_input_gradient(self):
        rng = np.random.default_rng(1)
        d = Dense(3, 2, rng, dtype=np.float64)
        check(lambda x: T.mean(d(x)), t64(rng.normal(size=(4, 3))))

    def test_weight_gradients(self):
        rng = np.random.default_rng(15)
        d = Dense(3, 2, rng, dtype=np.float64)
        x = Tensor(rng.normal(size=(4, 3)))
        check(lambda *_: T.mean(d(x)), d.w, d.b)


class TestBatchNorm:
    def test_training_mode_normalizes_batch(self):
        rng = np.random.default_rng(2)
        bn = BatchNorm(4, dtype=np.float64)
        x = Tensor(rng.normal(3.0, 2.0, size=(50, 4)))
        out = bn(x, training=True)
        np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.std(axis=0), 1.0, atol=1e-2)

    def test_running_stats_ema_update(self):
        bn = BatchNorm(2, dtype=np.float64)
        x = Tensor(np.array([[1.0, 10.0], [3.0, 30.0]]))
        bn(x, training=True)
        np.testing.assert_allclose(bn.running_mean, 0.99 * 0.0 + 0.01 * np.array([2.0, 20.0]))
        np.testing.assert_allclose(bn.running_var, 0.99 * 1.0 + 0.01 * np.array([1.0, 100.0]))

    def test_inference_uses_running_buffers(self):
        bn = BatchNorm(2, dtype=np.float64, eps=0.0)
        bn.set_buffers(np.array([1.0, 2.0]), np.array([4.0, 9.0]))
        out = bn(Tensor(np.array([[3.0, 5.0]])), training=False)
        np.testing.assert_allclose(out.data, [[1.0, 1.0]])

    def test_collect_averages_batch_statistics(self):
        bn = BatchNorm(1, dtype=np.float64)
        bn.start_collect()
        bn(Tensor(np.full((4, 1), 2.0)), training=False)
        bn(Tensor(np.array([[0.0], [8.0]])), training=False)
        bn.finish_collect()
        # means 2 and 4 average to 3; variances 0 and 16 average to 8
        assert bn.running_mean[0] == pytest.approx(3.0)
        assert bn.running_var[0] == pytest.approx(8.0)

    def test_collect_overrides_ema_history(self):
        rng = np.random.default_rng(5)
        bn = BatchNorm(3, dtype=np.float64)
        for _ in range(3):
            bn(Tensor(rng.normal(size=(8, 3))), training=True)
        stale = bn.running_var.copy()
        data = rng.normal(5.0, 0.1, size=(64, 3))
        recalibrate_stats([bn], lambda: bn(Tensor(data), training=False))
        assert not np.allclose(bn.running_var, stale)
        np.testing.assert_allclose(bn.running_mean, data.mean(axis=0), atol=1e-12)

    def test_finish_without_samples_keeps_buffers(self):
        bn = BatchNorm(2, dtype=np.float64)
        before = bn.running_mean.copy()
        bn.start_collect()
        bn.finish_collect()
        np.testing.assert_array_equal(bn.running_mean, before)

    def test_input_gradient_through_training_mode(self):
        rng = np.random.default_rng(6)
        bn = BatchNorm(3, dtype=np.float64)
        x = t64(rng.normal(size=(5, 3)))
        weight = rng.normal(size=(5, 3))
        check(lambda x: T.sum_(T.mul(bn(x, training=True), weight)), x, tol=1e-5)

    def test_gamma_beta_gradients(self):
        rng = np.random.default_rng(16)
        bn = BatchNorm(3, dtype=np.float64)
        x = Tensor(rng.normal(size=(5, 3)))
        weight = rng.normal(size=(5, 3))
        check(lambda *_: T.sum_(T.mul(bn(x, training=True), weight)),
              bn.gamma, bn.beta)


class TestConvBlockAndResidual:
    def test_frozen_block_ignores_training_flag(self):
        rng = np.random.default_rng(8)
        block = ConvBlock(2, 3, (1, 1, 3), rng, padding="same", dropout=0.5,
                          dtype=np.float64)
        x = Tensor(rng.normal(size=(2, 2, 3, 4, 2)))
        block.freeze()
        frozen_train = block(x, training=True, rng=np.random.default_rng(0))
        frozen_eval = block(x, training=False)
        np.testing.assert_array_equal(frozen_train.data, frozen_eval.data)
        assert block.bn_layers() == []
        assert all(p.frozen for p in block.parameters())

    def test_residual_adds_identity(self):
        rng = np.random.default_rng(9)
        blocks = [ConvBlock(2, 2, (3, 3, 3), rng, padding="same", dropout=0.0,
                            dtype=np.float64) for _ in range(2)]
        res = ResidualBlock(blocks)
        x = Tensor(rng.normal(size=(1, 4, 4, 4, 2)))
        out = res(x, training=False)
        branch = x
        for b in blocks:
            branch = b(branch, training=False)
        np.testing.assert_allclose(out.data, branch.data + x.data)
        assert len(res.bn_layers()) == 2

    def test_residual_rejects_shape_change(self):
        rng = np.random.default_rng(10)
        res = ResidualBlock([ConvBlock(2, 2, (2, 1, 1), rng, padding="valid",
                                       dtype=np.float64)])
        with pytest.raises(ValueError):
            res(Tensor(np.zeros((1, 4, 4, 4, 2))))

    def test_kernel_extent_cap(self):
        with pytest.raises(ValueError):
            ConvBlock(1, 1, (4, 1, 1), np.random.default_rng(0))


class TestGru:
    def test_zero_weights_zero_output(self):
        rng = np.random.default_rng(11)
        gru = GRU(3, 4, 2, rng, dtype=np.float64)
        for p in gru.parameters():
            p.data[...] = 0.0
        out = gru(Tensor(rng.normal(size=(2, 6, 3))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_output_shape(self):
        gru = GRU(5, 7, 2, np.random.default_rng(12), dtype=np.float64)
        assert gru(Tensor(np.zeros((3, 4, 5)))).shape == (3, 7)

    def test_single_step_matches_hand_equations(self):
        rng = np.random.default_rng(13)
        gru = GRU(2, 3, 1, rng, dtype=np.float64)
        cell = gru.cells[0]
        x = rng.normal(size=(1, 1, 2))
        out = gru(Tensor(x))

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        h = np.zeros((1, 3))
        z = sig(x[:, 0] @ cell.wz.data + h @ cell.uz.data + cell.bz.data)
        r = sig(x[:, 0] @ cell.wr.data + h @ cell.ur.data + cell.br.data)
        c = np.tanh(x[:, 0] @ cell.wc.data + (r * h) @ cell.uc.data + cell.bc.data)
        expect = (1.0 - z) * h + z * c
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_gradients_through_sequence(self):
        rng = np.random.default_rng(14)
        gru = GRU(2, 3, 1, rng, dtype=np.float64)
        x = t64(rng.normal(size=(2, 3, 2)))
        check(lambda x: T.mean(gru(x)), x, tol=1e-5)

    def test_needs_at_least_one_layer(self):
        with pytest.raises(ValueError):
            GRU(2, 3, 0, np.random.default_rng(0))
