import numpy as np

from lhecnn.geometry import CnnConfig, ConvLayer, FcLayer, preset
from lhecnn.oracle import (
    PlainParams,
    init_params,
    plain_backward_step,
    plain_forward,
    plain_gradients,
    predict,
    softmax_cross_entropy,
)

from conftest import random_small_config


def tiny_cfg():
    return CnnConfig((ConvLayer(1, 4, 2, 2, 2),), (FcLayer(8, 4), FcLayer(4, 3)), 4)


class TestForward:
    def test_identity_1x1_conv_squares_input(self):
        cfg = CnnConfig((ConvLayer(1, 2, 1, 1, 1),), (FcLayer(4, 2),), 2)
        params = PlainParams([np.ones((1, 1, 1, 1))], [np.eye(2, 4)])
        images = np.arange(8.0).reshape(2, 1, 2, 2)
        trace = plain_forward(cfg, params, images)
        assert np.array_equal(trace.conv_act[0], images**2)

    def test_worked_example_dot_product(self):
        # row (1, 0, 0, 1) against inputs (20, 28, 84, 92) -> 112
        assert np.dot([1, 0, 0, 1], [20, 28, 84, 92]) == 112

    def test_shapes_and_final_layer_unactivated(self):
        cfg = tiny_cfg()
        params = init_params(cfg, 0)
        images = np.random.default_rng(0).normal(size=(4, 1, 4, 4))
        trace = plain_forward(cfg, params, images)
        assert trace.conv_act[0].shape == (4, 2, 2, 2)
        assert trace.logits.shape == (4, 3)
        assert np.array_equal(trace.logits, trace.fc_pre[-1])

    def test_deterministic_given_seed(self):
        cfg = tiny_cfg()
        a, b = init_params(cfg, 11), init_params(cfg, 11)
        for x, y in zip(a.filters + a.weights, b.filters + b.weights):
            assert np.array_equal(x, y)

    def test_init_scale_follows_fan_in(self):
        p = preset("cnn-1-2")
        params = init_params(p.model, 0)
        assert np.abs(params.filters[0]).max() <= 1 / np.sqrt(49)
        assert np.abs(params.weights[0]).max() <= 1 / np.sqrt(256)


class TestLoss:
    def test_softmax_closed_form(self):
        loss, grad = softmax_cross_entropy(np.array([[np.log(2.0), 0.0]]),
                                           np.array([0]))
        assert abs(loss + np.log(2.0 / 3.0)) < 1e-12
        assert np.allclose(grad, [[-1 / 3, 1 / 3]], atol=1e-12)

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(0)
        _, grad = softmax_cross_entropy(rng.normal(size=(8, 5)),
                                        rng.integers(0, 5, size=8))
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-12)


class TestBackward:
    def test_lr_zero_leaves_params_unchanged(self):
        cfg = tiny_cfg()
        params = init_params(cfg, 1)
        rng = np.random.default_rng(1)
        images = rng.normal(size=(4, 1, 4, 4))
        labels = rng.integers(0, 3, size=4)
        new, _ = plain_backward_step(cfg, params, images, labels, lr=0.0)
        for a, b in zip(new.filters + new.weights, params.filters + params.weights):
            assert np.array_equal(a, b)

    def test_gradients_match_central_finite_differences(self):
        cfg = tiny_cfg()
        params = init_params(cfg, 3)
        rng = np.random.default_rng(3)
        images = rng.normal(size=(4, 1, 4, 4)) * 0.5
        labels = rng.integers(0, 3, size=4)
        _, grads, _ = plain_gradients(cfg, params, images, labels)
        n = images.shape[0]
        h = 1e-4

        def loss_at(p):
            trace = plain_forward(cfg, p, images)
            loss, _ = softmax_cross_entropy(trace.logits, labels)
            return loss

        rng_idx = np.random.default_rng(7)
        checks = 0
        for store, grad_store in ((params.filters, grads.filters),
                                  (params.weights, grads.weights)):
            for arr, g in zip(store, grad_store):
                flat = arr.reshape(-1)
                for _ in range(5):
                    i = int(rng_idx.integers(flat.size))
                    orig = flat[i]
                    flat[i] = orig + h
                    up = loss_at(params)
                    flat[i] = orig - h
                    down = loss_at(params)
                    flat[i] = orig
                    fd = (up - down) / (2 * h) * n  # gradients are batch sums
                    analytic = g.reshape(-1)[i]
                    scale = max(1.0, abs(analytic))
                    assert abs(fd - analytic) / scale < 1e-5
                    checks += 1
        assert checks == 15  # five probes per parameter array

    def test_one_step_decreases_loss_on_separable_toy_set(self):
        cfg = CnnConfig((ConvLayer(1, 4, 1, 2, 2),), (FcLayer(4, 2),), 8)
        params = init_params(cfg, 5)
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 2, size=8)
        images = np.zeros((8, 1, 4, 4))
        for i, y in enumerate(labels):
            images[i, 0, :, :2] = 1.0 if y == 0 else 0.1
            images[i, 0, :, 2:] = 0.1 if y == 0 else 1.0
        losses = []
        for _ in range(5):
            params, loss = plain_backward_step(cfg, params, images, labels, lr=0.5)
            losses.append(loss)
        assert losses[-1] < losses[0]

    def test_update_uses_batch_mean(self):
        cfg = tiny_cfg()
        params = init_params(cfg, 9)
        rng = np.random.default_rng(9)
        images = rng.normal(size=(4, 1, 4, 4))
        labels = rng.integers(0, 3, size=4)
        lr = 0.7
        _, grads, _ = plain_gradients(cfg, params, images, labels)
        new, _ = plain_backward_step(cfg, params, images, labels, lr)
        assert np.allclose(new.weights[0],
                           params.weights[0] - lr / 4 * grads.weights[0], atol=0)

    def test_gradcheck_on_random_configs(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            cfg, _params = random_small_config(rng)
            params = init_params(cfg, 0)
            images = rng.normal(size=(cfg.n, cfg.conv[0].channels,
                                      cfg.conv[0].input_side, cfg.conv[0].input_side)) * 0.5
            labels = rng.integers(0, cfg.fc[-1].outputs, size=cfg.n)
            _, grads, _ = plain_gradients(cfg, params, images, labels)
            h = 1e-4

            def loss_at():
                trace = plain_forward(cfg, params, images)
                return softmax_cross_entropy(trace.logits, labels)[0]

            arr = params.weights[-1].reshape(-1)
            i = int(rng.integers(arr.size))
            orig = arr[i]
            arr[i] = orig + h
            up = loss_at()
            arr[i] = orig - h
            down = loss_at()
            arr[i] = orig
            fd = (up - down) / (2 * h) * cfg.n
            analytic = grads.weights[-1].reshape(-1)[i]
            assert abs(fd - analytic) / max(1.0, abs(analytic)) < 1e-5


class TestPredict:
    def test_argmax(self):
        cfg = CnnConfig((ConvLayer(1, 2, 1, 1, 1),), (FcLayer(4, 2),), 2)
        params = PlainParams([np.ones((1, 1, 1, 1))],
                             [np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0]])])
        images = np.zeros((2, 1, 2, 2))
        images[0, 0, 0, 0] = 2.0
        images[1, 0, 1, 1] = 2.0
        assert np.array_equal(predict(cfg, params, images), [0, 1])
