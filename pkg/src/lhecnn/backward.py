"""Backward propagation and TEE-assisted parameter updates.

Gradients flow in the mirror layouts of their forward counterparts.  Per-image
weight gradients are summed over the n parallel inputs with a signed rotation
plan that parks each sum at a per-weight slot offset, so many gradients can be
masked into few ciphertexts before the trusted service re-encrypts them; the
reverse rotations then spread each refreshed gradient back over its blocks and
the parameters are updated with a plain homomorphic addition.

The descent sign and learning-rate scaling ride in the packing selector
(value -lr/n at the masked slots), so the additive update performs SGD on the
batch mean.
"""

from __future__ import annotations

import numpy as np

from .lhe import Ciphertext, SimulatorBackend
from .packing import (
    CONV_BASIC,
    FL_TYPE1,
    FL_TYPE2,
    PackedFilters,
    PackedTensor,
    PackedWeights,
    compute_rotation_plan,
    fold_rotate_sum,
    make_selector,
    signed_rotate_spread,
    signed_rotate_sum,
)


def _accumulate(backend, acc, term):
    return term if acc is None else backend.add(acc, term)


def _slot_count(tensor: PackedTensor) -> int:
    return next(iter(tensor.cells.values())).slot_count


def activation_gradient(backend: SimulatorBackend, grads: PackedTensor,
                        preacts: PackedTensor | None,
                        exact: bool = True) -> PackedTensor:
    """Chain rule through the square activation: g <- 2 * g * preactivation.

    ``exact=False`` drops the cached pre-activation factor and applies only
    the constant 2, which saves two levels per layer (one multiplication and
    the cached operand's level cap) at the cost of a distorted gradient.
    """
    slot_count = _slot_count(grads)
    two = np.full(slot_count, 2.0)
    cells = {}
    for key, ct in grads.cells.items():
        g = backend.cmul(ct, two)
        if exact:
            if preacts is None:
                raise ValueError("exact activation gradient needs cached pre-activations")
            g = backend.mul(g, preacts.cells[key])
        cells[key] = g
    return PackedTensor(cells, grads.layout, grads.n, grads.grid_side,
                        grads.seg_slots, grads.group_size, grads.pi_sets,
                        grads.neurons)


# ---------------------------------------------------------------------------
# Fully-connected layers
# ---------------------------------------------------------------------------


def fl_backward_type1(backend: SimulatorBackend, out_grads: PackedTensor,
                      weights: PackedWeights) -> PackedTensor:
    """Input gradients of a type-I layer: for each input ciphertext i,
    sum the products of every output gradient with its weight ciphertext.
    The result is in the layer's (multi-pi-set) input layout."""
    if weights.kind != "type1":
        raise ValueError("type I backward needs type1 weights")
    cells = {}
    for i in range(weights.in_cts):
        acc = None
        for j in range(weights.out_neurons):
            acc = _accumulate(backend, acc,
                              backend.mul(out_grads.ct(j), weights.cells[(j, i)]))
        cells[(i,)] = acc
    return PackedTensor(cells, FL_TYPE1, out_grads.n,
                        pi_sets=weights.pi_per_ct, neurons=weights.in_neurons)


def fl_backward_type2(backend: SimulatorBackend, out_grads: PackedTensor,
                      weights: PackedWeights) -> PackedTensor:
    """Input gradients of a type-II layer; the closing rotate-sum folds the
    pi-set blocks so each input gradient is replicated (type-II layout)."""
    if weights.kind != "type2":
        raise ValueError("type II backward needs type2 weights")
    slot_count = _slot_count(out_grads)
    n = out_grads.n
    cells = {}
    for i in range(weights.in_cts):
        acc = None
        for j in range(weights.out_cts):
            acc = _accumulate(backend, acc,
                              backend.mul(out_grads.ct(j), weights.cells[(i, j)]))
        cells[(i,)] = fold_rotate_sum(backend, acc, n, slot_count // n)
    return PackedTensor(cells, FL_TYPE2, n, pi_sets=1, neurons=weights.in_neurons)


def fl_weight_gradients(backend: SimulatorBackend, out_grads: PackedTensor,
                        cached_inputs: PackedTensor,
                        weights: PackedWeights) -> dict[tuple[int, int], Ciphertext]:
    """Raw weight-gradient ciphertexts: product of output gradient j with
    cached forward input i, then a signed rotate-sum that parks the sum over
    the n parallel images at in-block offset (j * in_cts + i) mod n of every
    pi-set block."""
    n = out_grads.n
    raw: dict[tuple[int, int], Ciphertext] = {}
    for j in range(weights.out_cts):
        for i in range(weights.in_cts):
            prod = backend.mul(out_grads.ct(j), cached_inputs.ct(i))
            plan = compute_rotation_plan((j * weights.in_cts + i) % n, n)
            raw[(j, i)] = signed_rotate_sum(backend, prod, plan)
    return raw


# ---------------------------------------------------------------------------
# Convolutional layers
# ---------------------------------------------------------------------------


def conv_backward(backend: SimulatorBackend, out_grads: PackedTensor,
                  filters: PackedFilters, out_grid: int, stride: int,
                  in_grid: int) -> PackedTensor:
    """Input gradients of a conv layer: each output-gradient cell multiplies
    every filter element and accumulates into the input grid position it read
    in the forward pass.  Grid positions the kernel never visits get a zero
    gradient."""
    if filters.layout != CONV_BASIC:
        raise ValueError("backward propagation supports the basic conv layout")
    gamma = filters.filter_side
    cells: dict[tuple, Ciphertext] = {}
    for i in range(filters.channel_count):
        for u in range(out_grid):
            for v in range(out_grid):
                for x in range(gamma):
                    for y in range(gamma):
                        target = (i, stride * u + x, stride * v + y)
                        acc = cells.get(target)
                        for k in range(filters.filter_count):
                            acc = _accumulate(
                                backend, acc,
                                backend.mul(out_grads.ct(k, u, v),
                                            filters.cells[(k, i, x, y)]))
                        cells[target] = acc
    # Never-visited positions carry an exact zero; represent it directly
    # (the additive identity needs no encryption).
    sample = next(iter(cells.values()))
    zero = Ciphertext(np.zeros(sample.slot_count), sample.level, sample.key_id,
                      sample.pending_rescale)
    for i in range(filters.channel_count):
        for a in range(in_grid):
            for b in range(in_grid):
                cells.setdefault((i, a, b), zero)
    return PackedTensor(cells, CONV_BASIC, out_grads.n, out_grads.grid_side,
                        out_grads.seg_slots)


def conv_kernel_gradients(backend: SimulatorBackend, cached_inputs: PackedTensor,
                          out_grads: PackedTensor, filters: PackedFilters,
                          out_grid: int, stride: int,
                          ) -> dict[tuple[int, int, int, int], Ciphertext]:
    """Raw kernel-gradient ciphertexts for one conv layer.

    Each kernel element correlates the cached inputs it touched with the
    output gradients.  Every pi-set block then holds a partial sum restricted
    to its grid position, so a full rotate-sum folds all blocks before the
    signed plan parks the batch-and-position total at in-block offset
    (flat kernel index) mod n of every block.
    """
    gamma = filters.filter_side
    alpha = filters.channel_count
    n = out_grads.n
    slot_count = _slot_count(out_grads)
    raw: dict[tuple[int, int, int, int], Ciphertext] = {}
    for k in range(filters.filter_count):
        for i in range(alpha):
            for x in range(gamma):
                for y in range(gamma):
                    acc = None
                    for u in range(out_grid):
                        for v in range(out_grid):
                            acc = _accumulate(
                                backend, acc,
                                backend.mul(
                                    cached_inputs.ct(i, stride * u + x, stride * v + y),
                                    out_grads.ct(k, u, v)))
                    acc = fold_rotate_sum(backend, acc, n, slot_count // n)
                    idx = k * alpha * gamma**2 + i * gamma**2 + x * gamma + y
                    raw[(k, i, x, y)] = signed_rotate_sum(
                        backend, acc, compute_rotation_plan(idx % n, n))
    return raw


# ---------------------------------------------------------------------------
# Noise removal and parameter update
# ---------------------------------------------------------------------------


def pack_count(gradient_count: int, n: int) -> int:
    """Packed ciphertexts sent for re-encryption: ceil(count / n)."""
    return -(-gradient_count // n)


def noise_removal_update(backend: SimulatorBackend, reencrypt,
                         raw_grads: dict[tuple, Ciphertext],
                         target_cells: dict[tuple, Ciphertext],
                         target_key, lr: float, n: int) -> int:
    """Pack raw gradients, refresh them through ``reencrypt``, unpack/spread,
    and add them into the parameter ciphertexts.

    Gradient ``idx`` (in sorted key order) is masked by a selector with value
    -lr/n at slots congruent to idx mod n and accumulated into packed
    ciphertext idx // n.  After re-encryption the mask is reapplied, the
    signed rotations replicate each value over its block, and the parameter
    receives the spread gradient additively.  Returns the number of packed
    ciphertexts re-encrypted.
    """
    order = sorted(raw_grads)
    if not order:
        return 0
    slot_count = raw_grads[order[0]].slot_count
    packed: dict[int, Ciphertext] = {}
    for idx, key in enumerate(order):
        p, k = idx % n, idx // n
        masked = backend.cmul(raw_grads[key], make_selector(p, n, slot_count, -lr / n))
        packed[k] = masked if k not in packed else backend.add(packed[k], masked)

    fresh = reencrypt([packed[k] for k in sorted(packed)])

    for idx, key in enumerate(order):
        p, k = idx % n, idx // n
        grad = backend.cmul(fresh[k], make_selector(p, n, slot_count, 1.0))
        grad = signed_rotate_spread(backend, grad, compute_rotation_plan(p, n))
        tkey = target_key(key)
        target_cells[tkey] = backend.add(target_cells[tkey], grad)
    return len(packed)


def fl_noise_removal_update(backend: SimulatorBackend, reencrypt,
                            raw_grads: dict[tuple[int, int], Ciphertext],
                            weights: PackedWeights, lr: float, n: int) -> int:
    """Weight-gradient noise removal for one fully-connected layer."""
    return noise_removal_update(
        backend, reencrypt, raw_grads, weights.cells,
        lambda key: weights.weight_key(*key), lr, n)


def conv_noise_removal_update(backend: SimulatorBackend, reencrypt,
                              raw_grads: dict[tuple[int, int, int, int], Ciphertext],
                              filters: PackedFilters, lr: float, n: int) -> int:
    """Kernel-gradient noise removal for one conv layer."""
    return noise_removal_update(
        backend, reencrypt, raw_grads, filters.cells, lambda key: key, lr, n)


def refresh_parameters(backend: SimulatorBackend, reencrypt,
                       cells: dict[tuple, Ciphertext], n: int) -> int:
    """Maintenance variant: pack the parameter ciphertexts themselves (valid
    because each block holds one replicated value), re-encrypt, and rebuild
    them by unpack-and-spread.  Not used by the default refining pipeline,
    which refreshes gradients instead."""
    order = sorted(cells)
    if not order:
        return 0
    slot_count = cells[order[0]].slot_count
    packed: dict[int, Ciphertext] = {}
    for idx, key in enumerate(order):
        p, k = idx % n, idx // n
        masked = backend.cmul(cells[key], make_selector(p, n, slot_count, 1.0))
        packed[k] = masked if k not in packed else backend.add(packed[k], masked)
    fresh = reencrypt([packed[k] for k in sorted(packed)])
    for idx, key in enumerate(order):
        p, k = idx % n, idx // n
        ct = backend.cmul(fresh[k], make_selector(p, n, slot_count, 1.0))
        cells[key] = signed_rotate_spread(backend, ct, compute_rotation_plan(p, n))
    return len(packed)
