"""Plaintext reference CNN: the ground truth for equivalence testing.

Implements the same architecture family as the encrypted pipeline (valid
convolutions, square activations after every layer except the last
fully-connected one, softmax cross-entropy) in plain double precision with
vanilla SGD on the batch-mean gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CnnConfig


@dataclass
class PlainParams:
    filters: list[np.ndarray]  # per conv layer: (filters, channels, side, side)
    weights: list[np.ndarray]  # per fc layer: (outputs, inputs)

    def copy(self) -> "PlainParams":
        return PlainParams([f.copy() for f in self.filters],
                           [w.copy() for w in self.weights])


@dataclass
class ForwardTrace:
    conv_pre: list[np.ndarray]   # (n, filters, side, side) per conv layer
    conv_act: list[np.ndarray]
    fc_pre: list[np.ndarray]     # (n, outputs) per fc layer
    fc_act: list[np.ndarray]     # activation applied except after the last
    logits: np.ndarray           # (n, outputs of last layer)


def init_params(cfg: CnnConfig, seed: int) -> PlainParams:
    """Uniform init in [-k, k] with k = 1/sqrt(fan-in), deterministic per seed."""
    rng = np.random.default_rng(seed)
    filters = []
    for layer in cfg.conv:
        k = 1.0 / np.sqrt(layer.channels * layer.filter_side**2)
        filters.append(rng.uniform(-k, k, size=(layer.filters, layer.channels,
                                                layer.filter_side, layer.filter_side)))
    weights = []
    for layer in cfg.fc:
        k = 1.0 / np.sqrt(layer.inputs)
        weights.append(rng.uniform(-k, k, size=(layer.outputs, layer.inputs)))
    return PlainParams(filters, weights)


def _conv2d(x: np.ndarray, f: np.ndarray, stride: int) -> np.ndarray:
    """Valid convolution, x: (n, c, s, s), f: (k, c, g, g) -> (n, k, o, o)."""
    n, _, side, _ = x.shape
    k, _, g, _ = f.shape
    out = 1 + (side - g) // stride
    z = np.zeros((n, k, out, out))
    for u in range(out):
        for v in range(out):
            window = x[:, :, u * stride:u * stride + g, v * stride:v * stride + g]
            z[:, :, u, v] = np.tensordot(window, f, axes=([1, 2, 3], [1, 2, 3]))
    return z


def plain_forward(cfg: CnnConfig, params: PlainParams, images: np.ndarray) -> ForwardTrace:
    conv_pre, conv_act = [], []
    a = np.asarray(images, dtype=np.float64)
    for layer, f in zip(cfg.conv, params.filters):
        z = _conv2d(a, f, layer.stride)
        conv_pre.append(z)
        a = z * z
        conv_act.append(a)
    flat = a.reshape(a.shape[0], -1)  # (filter, row, col) order
    fc_pre, fc_act = [], []
    h = flat
    for idx, w in enumerate(params.weights):
        z = h @ w.T
        fc_pre.append(z)
        if idx < len(params.weights) - 1:
            h = z * z
            fc_act.append(h)
        else:
            fc_act.append(z)
    return ForwardTrace(conv_pre, conv_act, fc_pre, fc_act, fc_pre[-1])


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean loss and the per-image gradient (softmax - one-hot)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.log(probs[np.arange(n), labels] + 1e-300).mean()
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad


@dataclass
class PlainGrads:
    filters: list[np.ndarray]  # batch-summed, same shapes as params
    weights: list[np.ndarray]


def plain_gradients(cfg: CnnConfig, params: PlainParams, images: np.ndarray,
                    labels: np.ndarray) -> tuple[float, PlainGrads, ForwardTrace]:
    """Analytic gradients, summed over the batch (callers divide by n)."""
    trace = plain_forward(cfg, params, images)
    loss, g = softmax_cross_entropy(trace.logits, labels)

    w_grads = [None] * len(params.weights)
    flat = trace.conv_act[-1].reshape(images.shape[0], -1)
    for k in reversed(range(len(params.weights))):
        if k < len(params.weights) - 1:
            g = g * 2.0 * trace.fc_pre[k]  # dL/dz_k from dL/da_k
        inp = trace.fc_act[k - 1] if k > 0 else flat
        w_grads[k] = g.T @ inp
        g = g @ params.weights[k]

    f_grads = [None] * len(params.filters)
    g = g.reshape(trace.conv_act[-1].shape)
    for l in reversed(range(len(params.filters))):
        stride = cfg.conv[l].stride
        gamma = cfg.conv[l].filter_side
        g = g * 2.0 * trace.conv_pre[l]
        a_in = images if l == 0 else trace.conv_act[l - 1]
        out = g.shape[2]
        fg = np.zeros_like(params.filters[l])
        if l > 0:
            g_prev = np.zeros_like(a_in)
        for u in range(out):
            for v in range(out):
                window = a_in[:, :, u * stride:u * stride + gamma,
                              v * stride:v * stride + gamma]
                fg += np.tensordot(g[:, :, u, v], window, axes=([0], [0]))
                if l > 0:
                    g_prev[:, :, u * stride:u * stride + gamma,
                           v * stride:v * stride + gamma] += np.einsum(
                        "nk,kcxy->ncxy", g[:, :, u, v], params.filters[l])
        f_grads[l] = fg
        if l > 0:
            g = g_prev
    return loss, PlainGrads(f_grads, w_grads), trace


def plain_backward_step(cfg: CnnConfig, params: PlainParams, images: np.ndarray,
                        labels: np.ndarray, lr: float):
    """One SGD step on the batch-mean gradient; returns (new params, loss)."""
    n = images.shape[0]
    loss, grads, _ = plain_gradients(cfg, params, images, labels)
    new = params.copy()
    for l, fg in enumerate(grads.filters):
        new.filters[l] -= (lr / n) * fg
    for k, wg in enumerate(grads.weights):
        new.weights[k] -= (lr / n) * wg
    return new, loss


def predict(cfg: CnnConfig, params: PlainParams, images: np.ndarray) -> np.ndarray:
    return plain_forward(cfg, params, images).logits.argmax(axis=1)
