"""Ciphertext layouts: image/filter/weight encoders, selectors, rotation plans.

Slot layout conventions (S slots, n parallel inputs, grid side b):

* A *pi-set* is a run of ``n`` consecutive slots holding the same logical
  value from the ``n`` parallel inputs.
* Conv layouts place the pi-set for grid position ``(s, t)`` at slot offset
  ``(s*b + t) * n`` (row-major), one ciphertext per (channel, kernel cell).
  One channel's grid occupies ``seg = n*b*b`` slots; cross-channel packing
  stacks ``r`` channels' segments in one ciphertext, cross-filter packing
  stacks ``r`` replicas of the same segment so ``r`` filters can multiply it
  at once.
* Fully-connected type I input: each ciphertext carries several pi-sets
  (neurons) without replication.  Type II input: one pi-set replicated S/n
  times.  The two alternate layer to layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CombinedGeometry
from .lhe import Ciphertext, KeyContext, SimulatorBackend

CONV_BASIC = "conv-basic"
CONV_CROSS_CHANNEL = "conv-cross-channel"
CONV_CROSS_FILTER = "conv-cross-filter"
FL_TYPE1 = "fl-type1"
FL_TYPE2 = "fl-type2"

LAYOUTS = (CONV_BASIC, CONV_CROSS_CHANNEL, CONV_CROSS_FILTER, FL_TYPE1, FL_TYPE2)


@dataclass
class PackedTensor:
    """An indexed grid of ciphertexts carrying one layer's packed values.

    Conv layouts key cells by ``(channel_or_group, u, v)``; fully-connected
    layouts key by ``(j,)``.  ``group_size`` is the cross-packing factor r
    (channels per ciphertext, or replicas available to cross-filter
    multiplication); ``pi_sets`` is the per-ciphertext pi-set count for
    fully-connected layouts.
    """

    cells: dict[tuple, Ciphertext]
    layout: str
    n: int
    grid_side: int = 0
    seg_slots: int = 0
    group_size: int = 1
    pi_sets: int = 0
    neurons: int = 0  # logical neuron count for fl layouts (<= cts * pi_sets)

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")

    def ct(self, *key) -> Ciphertext:
        return self.cells[key]

    def cts(self) -> list[Ciphertext]:
        return [self.cells[k] for k in sorted(self.cells)]

    def level(self) -> int:
        levels = {ct.level for ct in self.cells.values()}
        if len(levels) != 1:
            raise ValueError(f"mixed levels in tensor: {sorted(levels)}")
        return levels.pop()


@dataclass
class PackedFilters:
    """Encrypted filter elements for one conv layer.

    Basic layout keys cells by ``(filter, channel, x, y)``; cross-channel by
    ``(filter, channel_group, x, y)``; cross-filter by
    ``(filter_group, channel, x, y)``.
    """

    cells: dict[tuple[int, int, int, int], Ciphertext]
    layout: str
    filter_count: int
    channel_count: int
    filter_side: int
    group_size: int = 1


@dataclass
class PackedWeights:
    """Encrypted fully-connected weight matrix.

    Type I ("many pi-sets in" layers): cell ``(i, j)`` holds row ``i`` of the
    weight matrix restricted to input-ciphertext ``j``'s neurons, each value
    replicated n times.  Type II ("replicated pi-set in" layers): cell
    ``(i, j)`` holds column ``i`` for the output rows of output-ciphertext
    ``j``, each value replicated n times, zero beyond the last output.
    """

    cells: dict[tuple[int, int], Ciphertext]
    kind: str  # "type1" | "type2"
    out_neurons: int   # o
    in_neurons: int    # logical input neuron count
    in_cts: int        # input ciphertext count the layout expects
    out_cts: int       # forward output ciphertext count
    pi_per_ct: int     # pi-sets per input ciphertext
    n: int

    def weight_key(self, j: int, i: int) -> tuple[int, int]:
        """Cell connecting output-ct index ``j`` and input-ct index ``i``."""
        return (j, i) if self.kind == "type1" else (i, j)


@dataclass(frozen=True)
class RotationPlan:
    """Signed power-of-two rotation schedule targeting in-block offset ``p``.

    ``directions[k]`` is -1 when bit ``k`` of ``p`` is set, else +1.  Applying
    ``v += rot(v, 2**k * directions[k])`` for all k sums each n-block into its
    slot ``p``; the reversed signs spread a value at slot ``p`` over its block.
    """

    offset: int
    n: int
    directions: tuple[int, ...]


def compute_rotation_plan(p: int, n: int) -> RotationPlan:
    if n < 1 or n & (n - 1):
        raise ValueError(f"n must be a power of two, got {n}")
    if not 0 <= p < n:
        raise ValueError(f"offset {p} outside [0, {n})")
    bits = n.bit_length() - 1
    return RotationPlan(p, n, tuple(-1 if (p >> k) & 1 else 1 for k in range(bits)))


def make_selector(p: int, n: int, slot_count: int, beta: float) -> np.ndarray:
    """Plaintext mask: value ``beta`` at every slot congruent to p mod n."""
    if not 0 <= p < n <= slot_count:
        raise ValueError(f"need 0 <= p < n <= S, got p={p} n={n} S={slot_count}")
    sel = np.zeros(slot_count)
    sel[p::n] = beta
    return sel


# ---------------------------------------------------------------------------
# Rotate-and-sum helpers
# ---------------------------------------------------------------------------


def fold_rotate_sum(backend: SimulatorBackend, ct: Ciphertext, block_slots: int,
                    count: int) -> Ciphertext:
    """Sum ``count`` consecutive blocks of ``block_slots`` slots with doubling
    rotations.  When the blocks tile the ciphertext exactly, every block ends
    up holding the block-wise total (a replicated result); otherwise only
    block 0 is guaranteed valid."""
    if count & (count - 1):
        raise ValueError(f"block count must be a power of two, got {count}")
    step = block_slots
    while step < block_slots * count:
        ct = backend.add(ct, backend.rot(ct, step))
        step *= 2
    return ct


def signed_rotate_sum(backend: SimulatorBackend, ct: Ciphertext,
                      plan: RotationPlan) -> Ciphertext:
    """Aggregate each n-block into its slot ``plan.offset`` (other slots are
    garbage and must be masked before use)."""
    for k, direction in enumerate(plan.directions):
        ct = backend.add(ct, backend.rot(ct, direction * (1 << k)))
    return ct


def signed_rotate_spread(backend: SimulatorBackend, ct: Ciphertext,
                         plan: RotationPlan) -> Ciphertext:
    """Inverse of aggregation: replicate each block's slot ``plan.offset``
    value (other slots must be zero) over the whole block."""
    for k, direction in enumerate(plan.directions):
        ct = backend.add(ct, backend.rot(ct, -direction * (1 << k)))
    return ct


# ---------------------------------------------------------------------------
# Input encoding
# ---------------------------------------------------------------------------


def _grid_segment(images: np.ndarray, channel: int, u: int, v: int,
                  geo: CombinedGeometry) -> np.ndarray:
    """The n*b*b slot segment for kernel cell (u, v) of one channel."""
    b, stride = geo.grid_side, geo.strides[0]
    rows = u + stride * np.arange(b)
    cols = v + stride * np.arange(b)
    block = images[:, channel][:, rows][:, :, cols]   # (n, b, b)
    return np.transpose(block, (1, 2, 0)).reshape(-1)  # pi-sets row-major


def encode_inputs(backend: SimulatorBackend, ctx: KeyContext, images: np.ndarray,
                  geo: CombinedGeometry, replicas: int = 1) -> PackedTensor:
    """Pack n images into the basic conv layout (one ciphertext per channel
    and combined-kernel cell).  ``replicas > 1`` repeats each segment to feed
    cross-filter propagation."""
    n, channels, side, _ = images.shape
    if n != geo.n:
        raise ValueError(f"expected {geo.n} images, got {n}")
    seg = geo.seg_slots
    if replicas * seg > geo.slot_count:
        raise ValueError(f"{replicas} replicas of {seg} slots exceed {geo.slot_count}")
    gamma0 = geo.kernel_sides[0]
    if gamma0 + (geo.grid_side - 1) * geo.strides[0] > side:
        raise ValueError("image side too small for the combined kernel grid")

    cells = {}
    for i in range(channels):
        for u in range(gamma0):
            for v in range(gamma0):
                vec = np.zeros(geo.slot_count)
                segment = _grid_segment(images, i, u, v, geo)
                for q in range(replicas):
                    vec[q * seg:(q + 1) * seg] = segment
                cells[(i, u, v)] = backend.encrypt(ctx, vec)
    layout = CONV_CROSS_FILTER if replicas > 1 else CONV_BASIC
    return PackedTensor(cells, layout, geo.n, geo.grid_side, seg,
                        group_size=replicas)


def encode_inputs_cross_channel(backend: SimulatorBackend, ctx: KeyContext,
                                images: np.ndarray, geo: CombinedGeometry,
                                r: int) -> PackedTensor:
    """Pack r channels per ciphertext (channel group g holds channels
    g*r .. g*r+r-1 in consecutive segments, zero-padded)."""
    n, channels, _, _ = images.shape
    if n != geo.n:
        raise ValueError(f"expected {geo.n} images, got {n}")
    seg = geo.seg_slots
    if r * seg > geo.slot_count:
        raise ValueError(f"{r} channel segments of {seg} slots exceed {geo.slot_count}")
    groups = -(-channels // r)
    gamma0 = geo.kernel_sides[0]

    cells = {}
    for g in range(groups):
        for u in range(gamma0):
            for v in range(gamma0):
                vec = np.zeros(geo.slot_count)
                for q in range(r):
                    i = g * r + q
                    if i < channels:
                        vec[q * seg:(q + 1) * seg] = _grid_segment(images, i, u, v, geo)
                cells[(g, u, v)] = backend.encrypt(ctx, vec)
    return PackedTensor(cells, CONV_CROSS_CHANNEL, geo.n, geo.grid_side, seg,
                        group_size=r)


# ---------------------------------------------------------------------------
# Filter encoding
# ---------------------------------------------------------------------------


def encode_filters(backend: SimulatorBackend, ctx: KeyContext, filters: np.ndarray,
                   geo: CombinedGeometry, layout: str = CONV_BASIC,
                   r: int = 1) -> PackedFilters:
    """Encrypt one conv layer's filter elements to match an input layout.

    ``filters`` has shape (filter_count, channels, side, side).  Every cell
    holds a single filter element replicated across the slots it multiplies;
    unused slots stay zero so stray data in the input is masked away.
    """
    eps, alpha, gamma, _ = filters.shape
    seg = geo.seg_slots
    cells = {}
    if layout == CONV_BASIC:
        for k in range(eps):
            for i in range(alpha):
                for x in range(gamma):
                    for y in range(gamma):
                        vec = np.zeros(geo.slot_count)
                        vec[:seg] = filters[k, i, x, y]
                        cells[(k, i, x, y)] = backend.encrypt(ctx, vec)
    elif layout == CONV_CROSS_CHANNEL:
        groups = -(-alpha // r)
        for k in range(eps):
            for g in range(groups):
                for x in range(gamma):
                    for y in range(gamma):
                        vec = np.zeros(geo.slot_count)
                        for q in range(r):
                            if g * r + q < alpha:
                                vec[q * seg:(q + 1) * seg] = filters[k, g * r + q, x, y]
                        cells[(k, g, x, y)] = backend.encrypt(ctx, vec)
    elif layout == CONV_CROSS_FILTER:
        groups = -(-eps // r)
        for kg in range(groups):
            for i in range(alpha):
                for x in range(gamma):
                    for y in range(gamma):
                        vec = np.zeros(geo.slot_count)
                        for q in range(r):
                            if kg * r + q < eps:
                                vec[q * seg:(q + 1) * seg] = filters[kg * r + q, i, x, y]
                        cells[(kg, i, x, y)] = backend.encrypt(ctx, vec)
    else:
        raise ValueError(f"not a conv layout: {layout!r}")
    return PackedFilters(cells, layout, eps, alpha, gamma, group_size=r)


# ---------------------------------------------------------------------------
# Fully-connected weight encoding
# ---------------------------------------------------------------------------


def encode_fl_weights_type1(backend: SimulatorBackend, ctx: KeyContext,
                            matrix: np.ndarray, in_cts: int, pi_per_ct: int,
                            n: int) -> PackedWeights:
    """Type I weights: cell (i, j) packs row i's weights for input ciphertext
    j's ``pi_per_ct`` neurons, each replicated n times.  Columns past the
    matrix width (padded layouts) encode as zero."""
    out_n, in_n = matrix.shape
    if in_cts * pi_per_ct < in_n:
        raise ValueError(f"{in_cts} cts x {pi_per_ct} pi-sets cannot hold {in_n} inputs")
    slot_count = ctx.params.slot_count
    if pi_per_ct * n > slot_count:
        raise ValueError("pi-sets do not fit in one ciphertext")
    cells = {}
    for i in range(out_n):
        for j in range(in_cts):
            vec = np.zeros(slot_count)
            for w in range(pi_per_ct):
                col = j * pi_per_ct + w
                if col < in_n:
                    vec[w * n:(w + 1) * n] = matrix[i, col]
            cells[(i, j)] = backend.encrypt(ctx, vec)
    return PackedWeights(cells, "type1", out_neurons=out_n, in_neurons=in_n,
                         in_cts=in_cts, out_cts=out_n, pi_per_ct=pi_per_ct, n=n)


def encode_fl_weights_type2(backend: SimulatorBackend, ctx: KeyContext,
                            matrix: np.ndarray, n: int) -> PackedWeights:
    """Type II weights: cell (i, j) packs column i for the output rows that
    land in output ciphertext j (S/n rows per ciphertext), replicated n times,
    zero beyond the last output row."""
    out_n, in_n = matrix.shape
    slot_count = ctx.params.slot_count
    block = slot_count // n
    out_cts = -(-out_n // block)
    cells = {}
    for i in range(in_n):
        for j in range(out_cts):
            vec = np.zeros(slot_count)
            for w in range(block):
                row = j * block + w
                if row < out_n:
                    vec[w * n:(w + 1) * n] = matrix[row, i]
            cells[(i, j)] = backend.encrypt(ctx, vec)
    return PackedWeights(cells, "type2", out_neurons=out_n, in_neurons=in_n,
                         in_cts=in_n, out_cts=out_cts, pi_per_ct=1, n=n)


# ---------------------------------------------------------------------------
# Layout transitions
# ---------------------------------------------------------------------------


def as_fl_input(tensor: PackedTensor, neurons: int) -> PackedTensor:
    """View the final conv output (grid collapsed to 1x1) as a type I
    fully-connected input.

    Neuron order is (filter-major, then grid row-major), matching the plain
    flattening ``filter * grid^2 + s * grid + t``.  Cross-filter outputs carry
    several filters per ciphertext as consecutive segments, which preserves
    the same global order with ``group_size * grid^2`` pi-sets per ciphertext.
    """
    if tensor.layout in (CONV_BASIC, CONV_CROSS_FILTER):
        pi = tensor.grid_side**2
    elif tensor.layout == CONV_CROSS_CHANNEL:
        pi = tensor.group_size * tensor.grid_side**2
    else:
        raise ValueError(f"not a conv output layout: {tensor.layout!r}")
    cells = {}
    for key in sorted(tensor.cells):
        if key[1:] != (0, 0):
            raise ValueError("conv output grid must be 1x1 to feed an fc layer")
        cells[(key[0],)] = tensor.cells[key]
    return PackedTensor(cells, FL_TYPE1, tensor.n, pi_sets=pi, neurons=neurons)
