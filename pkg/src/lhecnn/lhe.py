"""Slot-vector leveled homomorphic encryption, exact plaintext-simulator backend.

A ciphertext is a vector of ``S`` real slots plus an encryption-level counter.
All arithmetic is elementwise across slots (SIMD); ciphertext-ciphertext and
ciphertext-plaintext multiplications each consume one level, addition and
rotation are free, and re-encryption restores a ciphertext to the top level.

The simulator computes slot values exactly in double precision (an optional
Gaussian per-op perturbation, ``noise_sigma``, models approximation error and
defaults to off), so algorithm correctness can be asserted bit-for-bit while
level bookkeeping mirrors a real leveled scheme.

Level accounting for the meter follows lazy rescaling: the product of a
multiplication stays at its operands' modulus level until the next
multiplication rescales it, so additions and rotations applied to a
just-produced product physically run one level above the product's remaining
budget.  Ciphertexts carry this as :attr:`Ciphertext.pending_rescale`; the
``level`` field itself is always the remaining multiplicative budget.
"""

from __future__ import annotations

import secrets
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .metering import OpMeter

MAGIC = b"LHE1"
HEADER = struct.Struct("<4sIII")  # magic, slot count, level, key hash


class LheError(Exception):
    """Base class for simulator errors."""


class LevelExhausted(LheError):
    """A level-consuming operation was attempted on a level-0 ciphertext."""

    def __init__(self, op: str, level: int, scope: str = ""):
        self.op = op
        self.level = level
        self.scope = scope
        where = f" in scope {scope!r}" if scope else ""
        super().__init__(f"{op} needs level >= 1, operand at level {level}{where}")


class KeyMismatch(LheError):
    """Operands or context carry different key identities."""


class SecrecyViolation(LheError):
    """A secret-key operation was attempted with a public-only context."""


@dataclass(frozen=True)
class LheParams:
    """Scheme parameters: slot count S (power of two), level count L, noise."""

    slot_count: int
    max_level: int
    noise_sigma: float = 0.0

    def __post_init__(self):
        s = self.slot_count
        if s < 2 or s & (s - 1):
            raise ValueError(f"slot_count must be a power of two >= 2, got {s}")
        if self.max_level < 1:
            raise ValueError("max_level must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def top_level(self) -> int:
        return self.max_level - 1


@dataclass(frozen=True)
class KeyContext:
    """Key identity for one key generation.

    The simulator holds no cryptographic material; ``key_id`` distinguishes
    independent generations and ``secret`` gates decryption/re-encryption.
    :meth:`public` strips the secret capability for handing to untrusted code.
    """

    params: LheParams
    key_id: str
    secret: bool = True
    _rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def public(self) -> "KeyContext":
        return replace(self, secret=False)

    @property
    def key_hash(self) -> int:
        return zlib.crc32(self.key_id.encode())


@dataclass(frozen=True, eq=False)
class Ciphertext:
    """Immutable slot vector with remaining-level budget and key identity."""

    slots: np.ndarray
    level: int
    key_id: str
    pending_rescale: bool = False  # product not yet rescaled (affects meter level only)

    def __post_init__(self):
        self.slots.setflags(write=False)

    def __eq__(self, other):
        return (
            isinstance(other, Ciphertext)
            and self.level == other.level
            and self.key_id == other.key_id
            and np.array_equal(self.slots, other.slots)
        )

    @property
    def slot_count(self) -> int:
        return self.slots.shape[0]

    def meter_level(self) -> int:
        """Level at which an add/rotate on this ciphertext physically runs."""
        return self.level + (1 if self.pending_rescale else 0)


def as_slots(values, slot_count: int) -> np.ndarray:
    """Coerce ``values`` to a float64 vector of exactly ``slot_count`` slots."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape[0] != slot_count:
        raise ValueError(f"expected {slot_count} slots, got {arr.shape[0]}")
    return arr


class SimulatorBackend:
    """Exact plaintext simulator implementing the primitive contracts.

    All operations are pure with respect to their ciphertext arguments; the
    only shared mutable state is the optional :class:`OpMeter`.  A real CKKS
    backend can replace this class behind the same method surface.
    """

    def __init__(self, meter: OpMeter | None = None):
        self.meter = meter

    # -- internals --------------------------------------------------------

    def _record(self, kind: str, level: int) -> None:
        if self.meter is not None:
            self.meter.record(kind, level)

    def _scope(self) -> str:
        return self.meter.current_scope if self.meter is not None else ""

    def _perturb(self, ctx: KeyContext, arr: np.ndarray) -> np.ndarray:
        sigma = ctx.params.noise_sigma
        if sigma > 0 and ctx._rng is not None:
            return arr + ctx._rng.normal(0.0, sigma, size=arr.shape)
        return arr

    @staticmethod
    def _check_pair(a: Ciphertext, b: Ciphertext) -> None:
        if a.key_id != b.key_id:
            raise KeyMismatch(f"operands under different keys: {a.key_id} vs {b.key_id}")
        if a.slot_count != b.slot_count:
            raise ValueError(f"slot count mismatch: {a.slot_count} vs {b.slot_count}")

    # -- key management and data boundary ----------------------------------

    def keygen(self, params: LheParams, seed: int | None = None) -> KeyContext:
        """Fresh key identity; deterministic when ``seed`` is given."""
        if seed is None:
            key_id = f"key-{secrets.token_hex(8)}"
            rng = np.random.default_rng()
        else:
            key_id = f"key-{seed:016x}"
            rng = np.random.default_rng(seed)
        return KeyContext(params=params, key_id=key_id, _rng=rng)

    def encrypt(self, ctx: KeyContext, values) -> Ciphertext:
        arr = self._perturb(ctx, as_slots(values, ctx.params.slot_count).copy())
        self._record("encrypt", ctx.params.top_level)
        return Ciphertext(arr, ctx.params.top_level, ctx.key_id)

    def decrypt(self, ctx: KeyContext, ct: Ciphertext) -> np.ndarray:
        """Recover the slot vector; works at any level, requires the secret key."""
        if not ctx.secret:
            raise SecrecyViolation("decryption requires the secret key context")
        if ct.key_id != ctx.key_id:
            raise KeyMismatch(f"ciphertext under {ct.key_id}, context {ctx.key_id}")
        self._record("decrypt", ct.level)
        return ct.slots.copy()

    def reencrypt(self, ctx: KeyContext, ct: Ciphertext) -> Ciphertext:
        """Decrypt-then-encrypt: same slots, level restored to L-1."""
        if not ctx.secret:
            raise SecrecyViolation("re-encryption requires the secret key context")
        if ct.key_id != ctx.key_id:
            raise KeyMismatch(f"ciphertext under {ct.key_id}, context {ctx.key_id}")
        self._record("reencrypt", ct.level)
        arr = self._perturb(ctx, ct.slots.copy())
        return Ciphertext(arr, ctx.params.top_level, ctx.key_id)

    # -- homomorphic primitives --------------------------------------------

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        """Elementwise sum; level = min of operand levels."""
        self._check_pair(a, b)
        self._record("add", min(a.meter_level(), b.meter_level()))
        # Adding a rescaled operand to an unrescaled one aligns scales first,
        # so the sum stays unrescaled only when both operands are.
        return Ciphertext(
            a.slots + b.slots,
            min(a.level, b.level),
            a.key_id,
            pending_rescale=a.pending_rescale and b.pending_rescale,
        )

    def mul(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        """Elementwise ciphertext product; consumes one level."""
        self._check_pair(a, b)
        level = min(a.level, b.level)
        if level < 1:
            raise LevelExhausted("mul", level, self._scope())
        self._record("mul", level)
        return Ciphertext(a.slots * b.slots, level - 1, a.key_id, pending_rescale=True)

    def cmul(self, a: Ciphertext, pt) -> Ciphertext:
        """Elementwise plaintext product; consumes one level."""
        if a.level < 1:
            raise LevelExhausted("cmul", a.level, self._scope())
        vec = as_slots(pt, a.slot_count)
        self._record("cmul", a.level)
        return Ciphertext(a.slots * vec, a.level - 1, a.key_id, pending_rescale=True)

    def rot(self, a: Ciphertext, m: int) -> Ciphertext:
        """Cyclic left rotation by ``m`` slots (negative = right); level unchanged."""
        m = m % a.slot_count
        self._record("rot", a.meter_level())
        return Ciphertext(np.roll(a.slots, -m), a.level, a.key_id, a.pending_rescale)


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------


def serialized_size(slot_count: int) -> int:
    return HEADER.size + 8 * slot_count


def serialize(ct: Ciphertext) -> bytes:
    """16-byte header (magic, S, level, key hash) + S little-endian float64 slots."""
    key_hash = zlib.crc32(ct.key_id.encode())
    return HEADER.pack(MAGIC, ct.slot_count, ct.level, key_hash) + ct.slots.astype(
        "<f8"
    ).tobytes()


def deserialize(data: bytes, ctx: KeyContext) -> Ciphertext:
    """Parse the wire format; the key hash must match ``ctx``."""
    if len(data) < HEADER.size:
        raise ValueError("truncated ciphertext header")
    magic, s, level, key_hash = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if len(data) != serialized_size(s):
        raise ValueError(f"expected {serialized_size(s)} bytes, got {len(data)}")
    if key_hash != ctx.key_hash:
        raise KeyMismatch("serialized ciphertext written under a different key")
    if not 0 <= level <= ctx.params.top_level:
        raise ValueError(f"level {level} outside [0, {ctx.params.top_level}]")
    slots = np.frombuffer(data, dtype="<f8", offset=HEADER.size).astype(np.float64)
    return Ciphertext(slots, level, ctx.key_id)
