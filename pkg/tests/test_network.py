import numpy as np
import pytest

from dualdistill.duals import softmax_rows
from dualdistill.errors import InvalidInputError, TrainingDivergenceError
from dualdistill.network import (
    LayerLayout,
    SgdState,
    SubnetworkMask,
    backward_pass,
    forward_full,
    forward_pass,
    forward_sub,
    hvp,
    init_weights,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    unpack,
)


@pytest.fixture
def layout():
    return LayerLayout((2, 16, 8, 4), "relu")


@pytest.fixture
def tanh_layout():
    return LayerLayout((2, 16, 8, 4), "tanh")


class TestLayout:
    def test_param_count(self, layout):
        assert layout.param_count == (16 * 2 + 16) + (8 * 16 + 8) + (4 * 8 + 4)

    def test_zero_width_rejected(self):
        with pytest.raises(InvalidInputError):
            LayerLayout((2, 0, 4))

    def test_no_hidden_rejected(self):
        with pytest.raises(InvalidInputError):
            LayerLayout((2, 4))

    def test_unknown_activation_rejected(self):
        with pytest.raises(InvalidInputError):
            LayerLayout((2, 3, 4), "sigmoid")


class TestInit:
    def test_deterministic(self, layout):
        assert np.array_equal(init_weights(layout, 7), init_weights(layout, 7))

    def test_seeds_differ(self, layout):
        assert not np.array_equal(init_weights(layout, 7), init_weights(layout, 8))

    def test_biases_zero(self, layout):
        theta = init_weights(layout, 0)
        for _, b in unpack(layout, theta):
            assert np.all(b == 0.0)


class TestForward:
    def test_zero_weights_uniform(self, layout):
        theta = np.zeros(layout.param_count)
        logits, features = forward_full(layout, theta, np.array([1.0, -2.0]))
        assert np.all(logits == 0.0)
        assert np.allclose(softmax_rows(logits[None, :]), 0.25)

    def test_hand_computed_single_unit(self):
        # 1 -> 1 -> 1 relu net: logits = w2 * relu(w1 x + b1) + b2
        layout = LayerLayout((1, 1, 1), "relu")
        theta = np.array([2.0, 0.5, -3.0, 1.0])  # w1, b1, w2, b2
        logits, features = forward_full(layout, theta, np.array([2.0]))
        assert features[0] == pytest.approx(4.5)  # relu(2*2 + 0.5)
        assert logits[0] == pytest.approx(-3.0 * 4.5 + 1.0)

    def test_feature_dimension(self, layout):
        theta = init_weights(layout, 0)
        _, features = forward_full(layout, theta, np.zeros((5, 2)))
        assert features.shape == (5, layout.feature_dim) == (5, 8)

    def test_dimension_mismatch(self, layout):
        theta = init_weights(layout, 0)
        with pytest.raises(InvalidInputError):
            forward_full(layout, theta, np.zeros((5, 3)))


class TestSubnetwork:
    def test_full_mask_identity(self, layout):
        theta = init_weights(layout, 3)
        x = np.random.default_rng(0).standard_normal((6, 2))
        mask = SubnetworkMask(layout, 1.0)
        lf, ff = forward_full(layout, theta, x)
        ls, fs = forward_sub(layout, theta, mask, x)
        assert np.array_equal(lf, ls) and np.array_equal(ff, fs)

    def test_single_unit_bottleneck(self, layout):
        theta = init_weights(layout, 3)
        mask = SubnetworkMask(layout, 1e-9)
        assert mask.kept == (2, 1, 1, 4)
        logits, _ = forward_sub(layout, theta, mask, np.ones((3, 2)))
        p = softmax_rows(logits)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_non_kept_unit_only_affects_full(self, layout):
        rng = np.random.default_rng(1)
        theta = init_weights(layout, 1)
        x = rng.standard_normal((4, 2))
        mask = SubnetworkMask(layout, 0.5)
        ls_before, _ = forward_sub(layout, theta, mask, x)
        lf_before, _ = forward_full(layout, theta, x)
        theta2 = theta.copy()
        theta2[:32].reshape(16, 2)[15, :] = 0.0  # unit 15 of 16 is outside ceil(0.5*16)=8
        assert not np.array_equal(forward_full(layout, theta2, x)[0], lf_before)
        assert np.array_equal(forward_sub(layout, theta2, mask, x)[0], ls_before)

    def test_masks_nest(self, layout):
        m1 = SubnetworkMask(layout, 0.3)
        m2 = SubnetworkMask(layout, 0.7)
        assert all(a <= b for a, b in zip(m1.kept, m2.kept))

    def test_gamma_bounds(self, layout):
        with pytest.raises(InvalidInputError):
            SubnetworkMask(layout, 0.0)
        with pytest.raises(InvalidInputError):
            SubnetworkMask(layout, 1.1)


def _ce_grad_closure(layout, x, labels):
    from dualdistill.losses import ce_value_and_logit_grad

    def grad_fn(theta):
        logits, _, cache = forward_pass(layout, theta, x)
        _, dlogits = ce_value_and_logit_grad(labels, logits)
        return backward_pass(layout, theta, cache, dlogits)

    return grad_fn


class TestBackward:
    def test_matches_finite_differences(self, layout):
        from dualdistill.losses import ce_value_and_logit_grad

        rng = np.random.default_rng(11)
        theta = init_weights(layout, 11)
        x = rng.standard_normal((8, 2))
        labels = rng.integers(0, 4, size=8)

        def loss_of(th):
            logits, _, _ = forward_pass(layout, th, x)
            value, _ = ce_value_and_logit_grad(labels, logits)
            return float(value)

        grad = _ce_grad_closure(layout, x, labels)(theta)
        h = 1e-4
        fd = np.zeros_like(theta)
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd[i] = (loss_of(tp) - loss_of(tm)) / (2 * h)
        scale = np.abs(fd).max()
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3 * scale)
        assert rel.max() < 1e-4

    def test_zero_upstream_gives_zero_gradient(self, layout):
        theta = init_weights(layout, 2)
        x = np.random.default_rng(2).standard_normal((5, 2))
        _, _, cache = forward_pass(layout, theta, x)
        grad = backward_pass(layout, theta, cache, np.zeros((5, 4)))
        assert np.all(grad == 0.0)

    def test_linearity_in_upstream(self, layout):
        rng = np.random.default_rng(3)
        theta = init_weights(layout, 3)
        x = rng.standard_normal((5, 2))
        dl = rng.standard_normal((5, 4))
        _, _, cache = forward_pass(layout, theta, x)
        g1 = backward_pass(layout, theta, cache, dl)
        g3 = backward_pass(layout, theta, cache, 3.0 * dl)
        assert np.allclose(g3, 3.0 * g1, atol=1e-12)

    def test_masked_gradient_support(self, layout):
        from dualdistill.losses import shared_coordinates

        rng = np.random.default_rng(4)
        theta = init_weights(layout, 4)
        x = rng.standard_normal((5, 2))
        mask = SubnetworkMask(layout, 0.5)
        _, _, cache = forward_pass(layout, theta, x, kept=mask.kept)
        grad = backward_pass(layout, theta, cache, rng.standard_normal((5, 4)))
        sel = shared_coordinates(layout, mask)
        assert np.all(grad[~sel] == 0.0)


class TestHvp:
    def test_quadratic_closed_form(self, layout):
        rng = np.random.default_rng(5)
        n = layout.param_count
        a = rng.standard_normal((30, n))
        b = rng.standard_normal(30)
        theta = rng.standard_normal(n)
        v = rng.standard_normal(n)
        hv = hvp(layout, theta, v, lambda th: a.T @ (a @ th - b))
        assert np.allclose(hv, a.T @ (a @ v), atol=1e-10)

    def test_zero_direction(self, tanh_layout):
        rng = np.random.default_rng(6)
        theta = init_weights(tanh_layout, 6)
        x = rng.standard_normal((8, 2))
        labels = rng.integers(0, 4, size=8)
        out = hvp(tanh_layout, theta, np.zeros_like(theta), _ce_grad_closure(tanh_layout, x, labels))
        assert np.all(out == 0.0)

    def test_matches_gradient_differences(self, tanh_layout):
        rng = np.random.default_rng(7)
        theta = init_weights(tanh_layout, 7) + 0.05 * rng.standard_normal(tanh_layout.param_count)
        x = rng.standard_normal((8, 2))
        labels = rng.integers(0, 4, size=8)
        grad_fn = _ce_grad_closure(tanh_layout, x, labels)
        v = rng.standard_normal(theta.size)
        hv = hvp(tanh_layout, theta, v, grad_fn)
        h = 1e-4
        fd = (grad_fn(theta + h * v) - grad_fn(theta - h * v)) / (2 * h)
        scale = np.abs(fd).max()
        rel = np.abs(hv - fd) / np.maximum(np.abs(fd), 1e-3 * scale)
        assert rel.max() < 1e-3

    def test_shape_mismatch(self, layout):
        theta = init_weights(layout, 0)
        with pytest.raises(InvalidInputError):
            hvp(layout, theta, np.zeros(3), lambda th: th)


class TestSgd:
    def test_zero_gradient_no_decay_identity(self):
        theta = np.array([1.0, -2.0])
        state = SgdState(lr0=0.1, total_steps=10, momentum=0.9, weight_decay=0.0)
        out = sgd_step(state, theta, np.zeros(2))
        assert np.array_equal(out, theta)

    def test_initial_learning_rate_is_lr0(self):
        state = SgdState(lr0=0.3, total_steps=5)
        assert state.learning_rate() == pytest.approx(0.3)

    def test_hand_computed_step(self):
        # L = theta^2 / 2 at theta=1: grad = 1, lr = 0.1 -> theta = 0.9
        state = SgdState(lr0=0.1, total_steps=1, momentum=0.0, weight_decay=0.0)
        out = sgd_step(state, np.array([1.0]), np.array([1.0]))
        assert out[0] == pytest.approx(0.9, abs=1e-15)

    def test_schedule_decays(self):
        state = SgdState(lr0=0.1, total_steps=4, momentum=0.0, weight_decay=0.0)
        lrs = []
        theta = np.zeros(1)
        for _ in range(4):
            lrs.append(state.learning_rate())
            theta = sgd_step(state, theta, np.zeros(1))
        assert lrs == sorted(lrs, reverse=True)
        assert lrs[0] == pytest.approx(0.1)

    def test_non_finite_gradient_aborts(self):
        state = SgdState(lr0=0.1, total_steps=1)
        with pytest.raises(TrainingDivergenceError):
            sgd_step(state, np.zeros(2), np.array([np.nan, 0.0]), context="epoch 3 batch 1")

    def test_subnetwork_step_touches_only_shared_coordinates(self):
        from dualdistill.losses import ce_value_and_logit_grad, shared_coordinates

        layout = LayerLayout((2, 16, 8, 4), "relu")
        rng = np.random.default_rng(9)
        theta = init_weights(layout, 9)
        mask = SubnetworkMask(layout, 0.5)
        x = rng.standard_normal((6, 2))
        labels = rng.integers(0, 4, size=6)
        logits, _, cache = forward_pass(layout, theta, x, kept=mask.kept)
        _, dlogits = ce_value_and_logit_grad(labels, logits)
        grad = backward_pass(layout, theta, cache, dlogits)
        state = SgdState(lr0=0.1, total_steps=1, momentum=0.9, weight_decay=0.0)
        out = sgd_step(state, theta, grad)
        sel = shared_coordinates(layout, mask)
        assert np.array_equal(out[~sel], theta[~sel])
        assert not np.array_equal(out[sel], theta[sel])


class TestCheckpoint:
    def test_round_trip(self, tmp_path, layout):
        theta = init_weights(layout, 12)
        path = tmp_path / "w.bin"
        save_checkpoint(path, layout, theta)
        loaded_layout, loaded_theta = load_checkpoint(path)
        assert loaded_layout == layout
        assert np.array_equal(loaded_theta, theta)

    def test_header_is_plain_text(self, tmp_path, layout):
        path = tmp_path / "w.bin"
        save_checkpoint(path, layout, init_weights(layout, 0))
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii")
        assert "sizes=2,16,8,4" in header and "activations=relu,relu" in header

    def test_rejects_truncated(self, tmp_path, layout):
        path = tmp_path / "w.bin"
        save_checkpoint(path, layout, init_weights(layout, 0))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(InvalidInputError):
            load_checkpoint(path)
