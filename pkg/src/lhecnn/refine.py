"""Session orchestration: encrypted model onboarding, inference, refining.

A :class:`RefineSession` owns the encrypted parameters of one model, attests
against a :class:`~lhecnn.tee.TeeService`, and runs metered forward passes and
full refining rounds (forward, TEE loss head, backward, gradient aggregation,
TEE noise removal, additive update).  Sessions persist as a manifest plus one
file per ciphertext.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backward as bwd
from . import forward as fwd
from .geometry import CnnConfig, CombinedGeometry, ConvLayer, FcLayer, combined_geometry
from .lhe import LheParams, deserialize, serialize
from .metering import CostTable, OpReport, build_report
from .oracle import PlainParams
from .packing import (
    CONV_BASIC,
    CONV_CROSS_CHANNEL,
    CONV_CROSS_FILTER,
    PackedFilters,
    PackedTensor,
    PackedWeights,
    as_fl_input,
    encode_filters,
    encode_fl_weights_type1,
    encode_fl_weights_type2,
    encode_inputs,
    encode_inputs_cross_channel,
)
from .tee import BoundaryStats, TeeService

MANIFEST_NAME = "session.manifest"
FORMAT_TAG = "lhecnn-session-v1"


def plan_layouts(cfg: CnnConfig, geo: CombinedGeometry, r_mode="auto") -> tuple[int, list[str]]:
    """Pick the packing factor and a per-conv-layer layout.

    With r = 1 every layer uses the basic layout.  Otherwise the first layer
    packs across channels when it has several, or replicates inputs for
    cross-filter processing when it does not, and the two cross layouts
    alternate from there (each produces the other's input format).  If the r
    segments do not tile the ciphertext the fold cannot produce replicas, so
    later layers fall back to the basic layout.
    """
    if r_mode == "auto":
        r = geo.packing_factor
    else:
        r = int(r_mode)
        if r < 1 or r & (r - 1) or r > geo.packing_factor:
            raise ValueError(f"r must be a power of two <= {geo.packing_factor}")
    if r == 1:
        return 1, [CONV_BASIC] * cfg.c
    tiles = r * geo.seg_slots == geo.slot_count
    layouts = [CONV_CROSS_CHANNEL if cfg.conv[0].channels > 1 else CONV_CROSS_FILTER]
    for _ in range(1, cfg.c):
        prev = layouts[-1]
        if prev == CONV_CROSS_CHANNEL:
            layouts.append(CONV_CROSS_FILTER if tiles else CONV_BASIC)
        elif prev == CONV_CROSS_FILTER:
            layouts.append(CONV_CROSS_CHANNEL)
        else:
            layouts.append(CONV_BASIC)
    return r, layouts


@dataclass
class RefineResult:
    losses: list[float]
    report: OpReport
    tee_delta: BoundaryStats
    rounds: int


@dataclass
class _ForwardCache:
    conv_inputs: list[PackedTensor] = field(default_factory=list)
    conv_pre: list[PackedTensor] = field(default_factory=list)
    fl_inputs: list[PackedTensor] = field(default_factory=list)
    fl_pre: list[PackedTensor] = field(default_factory=list)


class RefineSession:
    """Encrypted model state plus the machinery to run it."""

    def __init__(self, tee: TeeService, cfg: CnnConfig, params: LheParams, *,
                 r_mode="auto", exact_activation_grad: bool = True,
                 threads: int = 1, party: str = "refine-session"):
        self.tee = tee
        self.backend = tee.backend
        self.meter = tee.backend.meter
        self.cfg = cfg
        self.params = params
        self.party = party
        self.ctx = tee.attest(party)
        self.geo = combined_geometry(cfg, params)
        self.r, self.layouts = plan_layouts(cfg, self.geo, r_mode)
        self.exact_activation_grad = exact_activation_grad
        self.threads = threads
        self.filters: list[PackedFilters] = []
        self.weights: list[PackedWeights] = []

    # -- model onboarding ----------------------------------------------------

    def fl_shapes(self) -> list[tuple[str, int, int]]:
        """Per fc layer: (kind, input ciphertext count, pi-sets per ciphertext)."""
        geo, cfg = self.geo, self.cfg
        last = cfg.conv[-1]
        if self.layouts[-1] == CONV_CROSS_FILTER:
            in_cts = -(-last.filters // self.r)
            pi = self.r * geo.grid_side**2
        else:
            in_cts = last.filters
            pi = geo.grid_side**2
        shapes = []
        block = self.params.slot_count // cfg.n
        for k, layer in enumerate(cfg.fc):
            if k % 2 == 0:
                shapes.append(("type1", in_cts, pi))
                in_cts, pi = layer.outputs, 1
            else:
                shapes.append(("type2", in_cts, pi))
                in_cts, pi = -(-layer.outputs * cfg.n // self.params.slot_count), block
        return shapes

    def load_base_model(self, plain: PlainParams) -> None:
        """Encrypt and install a plaintext model (replaces any existing one)."""
        if len(plain.filters) != self.cfg.c or len(plain.weights) != self.cfg.f:
            raise ValueError("model does not match the configured layer counts")
        meter = self.meter
        filters: list[PackedFilters] = []
        with meter.scope("enc.filters"):
            for l, mats in enumerate(plain.filters):
                layer = self.cfg.conv[l]
                if mats.shape != (layer.filters, layer.channels,
                                  layer.filter_side, layer.filter_side):
                    raise ValueError(f"conv layer {l} filter shape mismatch")
                filters.append(encode_filters(self.backend, self.ctx, mats, self.geo,
                                              layout=self.layouts[l], r=self.r))
        weights: list[PackedWeights] = []
        for k, (mat, shape) in enumerate(zip(plain.weights, self.fl_shapes())):
            layer = self.cfg.fc[k]
            if mat.shape != (layer.outputs, layer.inputs):
                raise ValueError(f"fc layer {k} weight shape mismatch")
            with meter.scope(f"enc.weights.FL{k + 1}"):
                if shape[0] == "type1":
                    weights.append(encode_fl_weights_type1(
                        self.backend, self.ctx, mat, shape[1], shape[2], self.cfg.n))
                else:
                    weights.append(encode_fl_weights_type2(
                        self.backend, self.ctx, mat, self.cfg.n))
        self.filters, self.weights = filters, weights  # atomic swap

    def decrypted_model(self) -> PlainParams:
        """Recover the plaintext model through the TEE (model-provider path)."""
        filters = []
        for l, packed in enumerate(self.filters):
            layer = self.cfg.conv[l]
            mats = np.zeros((layer.filters, layer.channels,
                             layer.filter_side, layer.filter_side))
            for (k, i, x, y), ct in packed.cells.items():
                slots = self.tee.backend.decrypt(self.tee._ctx, ct)
                if packed.layout == CONV_BASIC:
                    mats[k, i, x, y] = slots[0]
                elif packed.layout == CONV_CROSS_CHANNEL:
                    for q in range(packed.group_size):
                        if i * packed.group_size + q < layer.channels:
                            mats[k, i * packed.group_size + q, x, y] = slots[q * self.geo.seg_slots]
                else:
                    for q in range(packed.group_size):
                        if k * packed.group_size + q < layer.filters:
                            mats[k * packed.group_size + q, i, x, y] = slots[q * self.geo.seg_slots]
            filters.append(mats)
        weights = []
        for k, packed in enumerate(self.weights):
            layer = self.cfg.fc[k]
            mat = np.zeros((layer.outputs, layer.inputs))
            block = self.params.slot_count // self.cfg.n
            for (a, b), ct in packed.cells.items():
                slots = self.tee.backend.decrypt(self.tee._ctx, ct)
                if packed.kind == "type1":
                    for w in range(packed.pi_per_ct):
                        col = b * packed.pi_per_ct + w
                        if col < layer.inputs:
                            mat[a, col] = slots[w * self.cfg.n]
                else:
                    for w in range(block):
                        row = b * block + w
                        if row < layer.outputs:
                            mat[row, a] = slots[w * self.cfg.n]
            weights.append(mat)
        return PlainParams(filters, weights)

    # -- forward -------------------------------------------------------------

    def encrypt_inputs(self, images: np.ndarray) -> PackedTensor:
        images = np.asarray(images, dtype=np.float64)
        with self.meter.scope("enc.inputs"):
            layout = self.layouts[0]
            if layout == CONV_CROSS_CHANNEL:
                return encode_inputs_cross_channel(self.backend, self.ctx, images,
                                                   self.geo, self.r)
            replicas = self.r if layout == CONV_CROSS_FILTER else 1
            return encode_inputs(self.backend, self.ctx, images, self.geo, replicas)

    def _forward(self, tensor: PackedTensor) -> tuple[PackedTensor, _ForwardCache]:
        cache = _ForwardCache()
        meter, geo, cfg = self.meter, self.geo, self.cfg
        square_idx = 0
        for l, layer in enumerate(cfg.conv):
            cache.conv_inputs.append(tensor)
            out_grid = geo.kernel_side_after(l)
            with meter.scope(f"CL{l + 1}"):
                if self.layouts[l] == CONV_BASIC:
                    pre = fwd.conv_forward(self.backend, tensor, self.filters[l],
                                           out_grid, layer.stride, self.threads)
                elif self.layouts[l] == CONV_CROSS_CHANNEL:
                    pre = fwd.conv_forward_cross_channel(
                        self.backend, tensor, self.filters[l], out_grid,
                        layer.stride, self.r, self.threads)
                else:
                    pre = fwd.conv_forward_cross_filter(
                        self.backend, tensor, self.filters[l], out_grid,
                        layer.stride, self.r, self.threads)
            cache.conv_pre.append(pre)
            square_idx += 1
            with meter.scope(f"Square{square_idx}"):
                tensor = fwd.square_activation(self.backend, pre, self.threads)
        tensor = as_fl_input(tensor, cfg.fc[0].inputs)
        for k in range(cfg.f):
            cache.fl_inputs.append(tensor)
            with meter.scope(f"FL{k + 1}"):
                if self.weights[k].kind == "type1":
                    pre = fwd.fl_forward_type1(self.backend, tensor, self.weights[k],
                                               self.threads)
                else:
                    pre = fwd.fl_forward_type2(self.backend, tensor, self.weights[k],
                                               self.threads)
            cache.fl_pre.append(pre)
            if k < cfg.f - 1:
                square_idx += 1
                with meter.scope(f"Square{square_idx}"):
                    tensor = fwd.square_activation(self.backend, pre, self.threads)
            else:
                tensor = pre  # no activation after the final layer
        return tensor, cache

    def infer(self, images: np.ndarray,
              cost: CostTable | None = None) -> tuple[PackedTensor, OpReport]:
        """Encrypted forward pass; returns the logits tensor and an op report
        covering exactly this call."""
        if not self.filters:
            raise RuntimeError("no model loaded")
        mark = self.meter.checkpoint()
        logits, _ = self._forward(self.encrypt_inputs(images))
        report = build_report(self.meter, cost or CostTable.default(), self.cfg.n,
                              counts=self.meter.since(mark))
        return logits, report

    def reveal_outputs(self, logits: PackedTensor) -> np.ndarray:
        return self.tee.reveal_outputs(self.party, logits, self.cfg.fc[-1].outputs)

    # -- refining ------------------------------------------------------------

    def refine(self, images: np.ndarray, labels: np.ndarray, lr: float,
               epochs: int = 1, cost: CostTable | None = None) -> RefineResult:
        """Run ``epochs`` passes over the data in batches of n images each.

        Each round: forward, TEE loss head, layer-by-layer backward with
        gradient packing and TEE noise removal, additive parameter update.
        """
        if not self.filters:
            raise RuntimeError("no model loaded")
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels, dtype=int)
        n = self.cfg.n
        if images.shape[0] % n:
            raise ValueError(f"batch count {images.shape[0]} not divisible by n={n}")
        if any(layout != CONV_BASIC for layout in self.layouts):
            raise ValueError("refining supports the basic conv layout (r = 1)")
        mark = self.meter.checkpoint()
        tee_before = self.tee.stats.snapshot()
        losses, rounds = [], 0
        for _ in range(epochs):
            for start in range(0, images.shape[0], n):
                losses.append(self._refine_round(images[start:start + n],
                                                 labels[start:start + n], lr))
                rounds += 1
        report = build_report(self.meter, cost or CostTable.default(), n,
                              counts=self.meter.since(mark))
        after = self.tee.stats
        delta = BoundaryStats(
            cts_in=after.cts_in - tee_before.cts_in,
            cts_out=after.cts_out - tee_before.cts_out,
            bytes_in=after.bytes_in - tee_before.bytes_in,
            bytes_out=after.bytes_out - tee_before.bytes_out,
            reencryptions=after.reencryptions - tee_before.reencryptions,
            requests=after.requests - tee_before.requests,
        )
        return RefineResult(losses, report, delta, rounds)

    def _refine_round(self, images: np.ndarray, labels: np.ndarray, lr: float) -> float:
        meter, cfg, geo = self.meter, self.cfg, self.geo
        enc = self.encrypt_inputs(images)
        with meter.scope("enc.labels"):
            vec = np.zeros(self.params.slot_count)
            vec[:cfg.n] = labels
            label_ct = self.backend.encrypt(self.ctx, vec)
        logits, cache = self._forward(enc)
        with meter.scope("tee.loss_head"):
            loss, grad = self.tee.loss_head(self.party, logits, label_ct,
                                            cfg.fc[-1].outputs)
        reenc = lambda cts: self.tee.reencrypt_batch(self.party, cts)

        for k in reversed(range(cfg.f)):
            with meter.scope(f"bwd.FL{k + 1}"):
                if k < cfg.f - 1:
                    grad = bwd.activation_gradient(self.backend, grad, cache.fl_pre[k],
                                                   self.exact_activation_grad)
                raw = bwd.fl_weight_gradients(self.backend, grad, cache.fl_inputs[k],
                                              self.weights[k])
                if self.weights[k].kind == "type1":
                    grad = bwd.fl_backward_type1(self.backend, grad, self.weights[k])
                else:
                    grad = bwd.fl_backward_type2(self.backend, grad, self.weights[k])
                bwd.fl_noise_removal_update(self.backend, reenc, raw,
                                            self.weights[k], lr, cfg.n)

        grad = self._as_conv_grad(grad)
        for l in reversed(range(cfg.c)):
            out_grid = geo.kernel_side_after(l)
            with meter.scope(f"bwd.CL{l + 1}"):
                grad = bwd.activation_gradient(self.backend, grad, cache.conv_pre[l],
                                               self.exact_activation_grad)
                raw = bwd.conv_kernel_gradients(self.backend, cache.conv_inputs[l],
                                                grad, self.filters[l], out_grid,
                                                cfg.conv[l].stride)
                if l > 0:
                    grad = bwd.conv_backward(self.backend, grad, self.filters[l],
                                             out_grid, cfg.conv[l].stride,
                                             geo.kernel_sides[l])
                bwd.conv_noise_removal_update(self.backend, reenc, raw,
                                              self.filters[l], lr, cfg.n)
        return loss

    def _as_conv_grad(self, tensor: PackedTensor) -> PackedTensor:
        """Reshape fully-connected input gradients back onto the conv grid."""
        cells = {(key[0], 0, 0): ct for key, ct in tensor.cells.items()}
        return PackedTensor(cells, CONV_BASIC, self.cfg.n, self.geo.grid_side,
                            self.geo.seg_slots)

    def expected_reencryptions_per_round(self) -> int:
        """Loss-head outputs plus one per packed gradient ciphertext."""
        total = self._loss_head_outputs()
        for w in self.weights:
            total += bwd.pack_count(w.out_cts * w.in_cts, self.cfg.n)
        for layer in self.cfg.conv:
            total += bwd.pack_count(layer.filters * layer.channels * layer.filter_side**2,
                                    self.cfg.n)
        return total

    def _loss_head_outputs(self) -> int:
        last = self.weights[-1]
        if last.kind == "type2":
            return last.out_cts
        return last.out_neurons  # replicated layout: one ciphertext per class row

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        root = Path(path)
        (root / "cts").mkdir(parents=True, exist_ok=True)
        lines = [
            f"format = {FORMAT_TAG}",
            f"key_hash = {self.ctx.key_hash}",
            f"model = {json.dumps(_model_dict(self.cfg))}",
            f"lhe = {json.dumps({'slots': self.params.slot_count, 'levels': self.params.max_level, 'noise_sigma': self.params.noise_sigma})}",
            f"n = {self.cfg.n}",
            f"r = {self.r}",
            f"layouts = {','.join(self.layouts)}",
            f"weight_kinds = {','.join(w.kind for w in self.weights)}",
            f"exact_activation_grad = {str(self.exact_activation_grad).lower()}",
            f"geometry.kernel_sides = {','.join(map(str, self.geo.kernel_sides))}",
            f"geometry.strides = {','.join(map(str, self.geo.strides))}",
            f"geometry.grid_side = {self.geo.grid_side}",
        ]
        for l, packed in enumerate(self.filters):
            for key, ct in sorted(packed.cells.items()):
                name = f"cts/f{l}_" + "_".join(map(str, key)) + ".lhe"
                (root / name).write_bytes(serialize(ct))
                lines.append(f"filter.{l}.{'.'.join(map(str, key))} = {name}")
        for k, packed in enumerate(self.weights):
            for key, ct in sorted(packed.cells.items()):
                name = f"cts/w{k}_" + "_".join(map(str, key)) + ".lhe"
                (root / name).write_bytes(serialize(ct))
                lines.append(f"weight.{k}.{'.'.join(map(str, key))} = {name}")
        (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, tee: TeeService, path: str | Path, *,
             threads: int = 1, party: str = "refine-session") -> "RefineSession":
        root = Path(path)
        entries: dict[str, str] = {}
        ct_lines: list[tuple[str, str]] = []
        for line in (root / MANIFEST_NAME).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition(" = ")
            if key.startswith(("filter.", "weight.")):
                ct_lines.append((key, value))
            else:
                entries[key] = value
        if entries.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported session format {entries.get('format')!r}")
        lhe = json.loads(entries["lhe"])
        params = LheParams(lhe["slots"], lhe["levels"], lhe.get("noise_sigma", 0.0))
        cfg = _model_from_dict(json.loads(entries["model"]), int(entries["n"]))
        session = cls(tee, cfg, params, r_mode=int(entries["r"]),
                      exact_activation_grad=entries["exact_activation_grad"] == "true",
                      threads=threads, party=party)
        if int(entries["key_hash"]) != session.ctx.key_hash:
            raise ValueError("session was written under a different key")
        stored_layouts = entries["layouts"].split(",")
        if stored_layouts != session.layouts:
            raise ValueError(
                f"stored layouts {stored_layouts} do not match planned {session.layouts}")
        stored_kinds = entries["weight_kinds"].split(",")
        expected_kinds = [shape[0] for shape in session.fl_shapes()]
        if stored_kinds != expected_kinds:
            raise ValueError(
                f"stored weight kinds {stored_kinds} do not match expected {expected_kinds}")

        filters = [dict() for _ in range(cfg.c)]
        weights = [dict() for _ in range(cfg.f)]
        for key, name in ct_lines:
            parts = key.split(".")
            ct = deserialize((root / name).read_bytes(), session.ctx)
            idx = tuple(int(p) for p in parts[2:])
            if parts[0] == "filter":
                filters[int(parts[1])][idx] = ct
            else:
                weights[int(parts[1])][idx] = ct

        packed_filters = []
        for l, cells in enumerate(filters):
            layer = cfg.conv[l]
            packed_filters.append(PackedFilters(
                cells, session.layouts[l], layer.filters, layer.channels,
                layer.filter_side, group_size=session.r if session.layouts[l] != CONV_BASIC else 1))
        packed_weights = []
        for k, cells in enumerate(weights):
            kind, in_cts, pi = session.fl_shapes()[k]
            layer = cfg.fc[k]
            if kind == "type1":
                packed_weights.append(PackedWeights(
                    cells, "type1", layer.outputs, layer.inputs, in_cts,
                    layer.outputs, pi, cfg.n))
            else:
                out_cts = -(-layer.outputs * cfg.n // params.slot_count)
                packed_weights.append(PackedWeights(
                    cells, "type2", layer.outputs, layer.inputs, layer.inputs,
                    out_cts, 1, cfg.n))
        session.filters, session.weights = packed_filters, packed_weights
        return session


def _model_dict(cfg: CnnConfig) -> dict:
    return {
        "conv": [{"channels": c.channels, "input_side": c.input_side,
                  "filters": c.filters, "filter_side": c.filter_side,
                  "stride": c.stride} for c in cfg.conv],
        "fc": [{"inputs": f.inputs, "outputs": f.outputs} for f in cfg.fc],
    }


def _model_from_dict(data: dict, n: int) -> CnnConfig:
    return CnnConfig(
        conv=tuple(ConvLayer(c["channels"], c["input_side"], c["filters"],
                             c["filter_side"], c["stride"]) for c in data["conv"]),
        fc=tuple(FcLayer(f["inputs"], f["outputs"]) for f in data["fc"]),
        n=n,
    )


# ---------------------------------------------------------------------------
# Static planning (counts without execution)
# ---------------------------------------------------------------------------


def predict_stage_counts(cfg: CnnConfig, geo: CombinedGeometry,
                         layouts: list[str], r: int) -> dict[str, tuple[int, int, int, int]]:
    """Predicted (add, mul, rot, cmul) per forward stage, plus encryption
    counts under the ``enc.*`` scopes (returned as (count, 0, 0, 0))."""
    s = geo.slot_count
    n = cfg.n
    counts: dict[str, tuple[int, int, int, int]] = {}

    layout0 = layouts[0]
    if layout0 == CONV_CROSS_CHANNEL:
        enc_inputs = -(-cfg.conv[0].channels // r) * geo.kernel_sides[0] ** 2
    else:
        enc_inputs = cfg.conv[0].channels * geo.kernel_sides[0] ** 2
    counts["enc.inputs"] = (enc_inputs, 0, 0, 0)

    enc_filters = 0
    square_idx = 0
    for l, layer in enumerate(cfg.conv):
        gamma2 = layer.filter_side**2
        out_cells = geo.kernel_side_after(l) ** 2
        if layouts[l] == CONV_BASIC:
            enc_filters += layer.filters * layer.channels * gamma2
            terms = gamma2 * layer.channels
            mul = layer.filters * out_cells * terms
            add = layer.filters * out_cells * (terms - 1)
            rot = 0
            squares = layer.filters * out_cells
        elif layouts[l] == CONV_CROSS_CHANNEL:
            groups = -(-layer.channels // r)
            enc_filters += layer.filters * groups * gamma2
            terms = gamma2 * groups
            fold = int(math.log2(r))
            mul = layer.filters * out_cells * terms
            add = layer.filters * out_cells * (terms - 1 + fold)
            rot = layer.filters * out_cells * fold
            squares = layer.filters * out_cells
        else:  # cross-filter
            fgroups = -(-layer.filters // r)
            enc_filters += fgroups * layer.channels * gamma2
            terms = gamma2 * layer.channels
            mul = fgroups * out_cells * terms
            add = fgroups * out_cells * (terms - 1)
            rot = 0
            squares = fgroups * out_cells
        counts[f"CL{l + 1}"] = (add, mul, rot, 0)
        square_idx += 1
        counts[f"Square{square_idx}"] = (0, squares, 0, 0)
    counts["enc.filters"] = (enc_filters, 0, 0, 0)

    # fc stages; shapes follow the type alternation
    last = cfg.conv[-1]
    in_cts = -(-last.filters // r) if layouts[-1] == CONV_CROSS_FILTER else last.filters
    for k, layer in enumerate(cfg.fc):
        if k % 2 == 0:
            fold = int(math.log2(s // n))
            mul = layer.outputs * in_cts
            add = layer.outputs * (in_cts - 1 + fold)
            rot = layer.outputs * fold
            counts[f"enc.weights.FL{k + 1}"] = (layer.outputs * in_cts, 0, 0, 0)
            squares = layer.outputs
            in_cts = layer.outputs
        else:
            out_cts = -(-layer.outputs * n // s)
            mul = out_cts * in_cts
            add = out_cts * (in_cts - 1)
            rot = 0
            counts[f"enc.weights.FL{k + 1}"] = (in_cts * out_cts, 0, 0, 0)
            squares = out_cts
            in_cts = out_cts
        counts[f"FL{k + 1}"] = (add, mul, rot, 0)
        if k < cfg.f - 1:
            square_idx += 1
            counts[f"Square{square_idx}"] = (0, squares, 0, 0)
    return counts
