"""Simulated trusted execution environment.

The service is the sole holder of the decryption capability: untrusted code
receives only a public key context and interacts through attestation,
re-encryption, the plaintext loss head, and result revelation.  Every
ciphertext crossing the boundary is counted (ciphertexts and wire-format
bytes, each way).

An optional local-socket mode exposes the same operations over a Unix domain
socket with length-prefixed frames.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .lhe import (
    Ciphertext,
    KeyContext,
    LheParams,
    SimulatorBackend,
    deserialize,
    serialize,
    serialized_size,
)
from .packing import FL_TYPE1, FL_TYPE2, PackedTensor

OP_REENCRYPT = 0x01
OP_LOSS_HEAD = 0x02
OP_ATTEST = 0x03
OP_ERROR = 0xFF


class NotAttested(PermissionError):
    """A party invoked a TEE service without completing attestation."""


@dataclass
class BoundaryStats:
    """Counters for REE <-> TEE traffic."""

    cts_in: int = 0
    cts_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    reencryptions: int = 0   # individual ciphertexts refreshed (incl. loss-head outputs)
    requests: int = 0

    def snapshot(self) -> "BoundaryStats":
        return BoundaryStats(**vars(self))


class TeeService:
    """Key custody, re-encryption, and the plaintext loss head.

    Requests are serialized through one lock (a single logical enclave
    thread); callers may be concurrent.
    """

    def __init__(self, backend: SimulatorBackend, params: LheParams,
                 seed: int | None = None):
        self.backend = backend
        self._ctx = backend.keygen(params, seed)  # secret context, never exported
        self.params = params
        self.stats = BoundaryStats()
        self._parties: set[str] = set()
        self._lock = threading.Lock()

    # -- attestation and key distribution -----------------------------------

    def attest(self, party_id: str) -> KeyContext:
        """Stub attestation handshake: always succeeds, registers the party,
        and hands back public key material (idempotent)."""
        with self._lock:
            self._parties.add(party_id)
        return self._ctx.public()

    def public_context(self) -> KeyContext:
        """Public key material without the decryption capability."""
        return self._ctx.public()

    @property
    def attested_parties(self) -> frozenset[str]:
        return frozenset(self._parties)

    def _require(self, party_id: str) -> None:
        if party_id not in self._parties:
            raise NotAttested(f"party {party_id!r} has not attested")

    def _count_in(self, cts) -> None:
        self.stats.cts_in += len(cts)
        self.stats.bytes_in += sum(serialized_size(ct.slot_count) for ct in cts)

    def _count_out(self, cts) -> None:
        self.stats.cts_out += len(cts)
        self.stats.bytes_out += sum(serialized_size(ct.slot_count) for ct in cts)

    # -- services ------------------------------------------------------------

    def reencrypt_batch(self, party_id: str, cts: list[Ciphertext]) -> list[Ciphertext]:
        """Refresh each ciphertext to the top level (decrypt + encrypt inside)."""
        self._require(party_id)
        with self._lock:
            self.stats.requests += 1
            self._count_in(cts)
            out = [self.backend.reencrypt(self._ctx, ct) for ct in cts]
            self._count_out(out)
            self.stats.reencryptions += len(out)
            return out

    def loss_head(self, party_id: str, logits: PackedTensor, labels,
                  class_count: int) -> tuple[float, PackedTensor]:
        """Softmax cross-entropy over the decrypted logits.

        ``labels`` may be a ciphertext (one label value per image slot) or a
        plain integer array.  Returns the scalar mean loss and the per-image
        gradient (softmax - one-hot), repacked in the logits' layout and
        encrypted at the top level.  The gradient ciphertexts count as
        re-encryptions: each is a fresh encryption of decrypted data.
        """
        self._require(party_id)
        with self._lock:
            self.stats.requests += 1
            self._count_in(logits.cts())
            if isinstance(labels, Ciphertext):
                self._count_in([labels])
                vec = self.backend.decrypt(self._ctx, labels)
                labels = np.rint(vec[:logits.n]).astype(int)
            labels = np.asarray(labels, dtype=int)
            if labels.shape != (logits.n,):
                raise ValueError(f"expected {logits.n} labels")
            if labels.min() < 0 or labels.max() >= class_count:
                raise ValueError(f"label outside [0, {class_count})")

            values = self._decode_outputs(logits, class_count)
            shifted = values - values.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            probs = exp / exp.sum(axis=1, keepdims=True)
            loss = float(-np.log(probs[np.arange(logits.n), labels]).mean())
            grad = probs
            grad[np.arange(logits.n), labels] -= 1.0

            out = self._encode_outputs(grad, logits)
            self._count_out(out.cts())
            self.stats.reencryptions += len(out.cells)
            return loss, out

    def reveal_outputs(self, party_id: str, logits: PackedTensor,
                       class_count: int) -> np.ndarray:
        """Decrypt final outputs for the data provider: (n, classes)."""
        self._require(party_id)
        with self._lock:
            self.stats.requests += 1
            self._count_in(logits.cts())
            return self._decode_outputs(logits, class_count)

    # -- layout bridges ------------------------------------------------------

    def _decode_outputs(self, tensor: PackedTensor, classes: int) -> np.ndarray:
        n = tensor.n
        values = np.zeros((n, classes))
        plain = {key[0]: self.backend.decrypt(self._ctx, ct)
                 for key, ct in tensor.cells.items()}
        if tensor.layout == FL_TYPE1:
            block = self.params.slot_count // n
            for w in range(classes):
                off = (w % block) * n
                values[:, w] = plain[w // block][off:off + n]
        elif tensor.layout == FL_TYPE2:
            for w in range(classes):
                values[:, w] = plain[w][:n]
        else:
            raise ValueError(f"not a fully-connected output layout: {tensor.layout}")
        return values

    def _encode_outputs(self, grad: np.ndarray, like: PackedTensor) -> PackedTensor:
        n, classes = grad.shape
        slot_count = self.params.slot_count
        cells = {}
        if like.layout == FL_TYPE1:
            block = slot_count // n
            for j in sorted(like.cells):
                vec = np.zeros(slot_count)
                for w_local in range(block):
                    w = j[0] * block + w_local
                    if w < classes:
                        vec[w_local * n:(w_local + 1) * n] = grad[:, w]
                cells[j] = self.backend.encrypt(self._ctx, vec)
        else:  # FL_TYPE2: one replicated pi-set per class
            for i in sorted(like.cells):
                vec = np.tile(grad[:, i[0]], slot_count // n)
                cells[i] = self.backend.encrypt(self._ctx, vec)
        return PackedTensor(cells, like.layout, n, pi_sets=like.pi_sets,
                            neurons=like.neurons)


# ---------------------------------------------------------------------------
# Optional local-socket transport
# ---------------------------------------------------------------------------

_LEN = struct.Struct("<I")


def _send_frame(sock: socket.socket, opcode: int, payload: bytes) -> None:
    sock.sendall(_LEN.pack(len(payload) + 1) + bytes([opcode]) + payload)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = b""
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            raise ConnectionError("peer closed")
        buf += chunk
    return buf


def _recv_frame(sock: socket.socket) -> tuple[int, bytes]:
    (length,) = _LEN.unpack(_recv_exact(sock, 4))
    body = _recv_exact(sock, length)
    return body[0], body[1:]


class _TeeHandler(socketserver.BaseRequestHandler):
    def handle(self):
        service: TeeService = self.server.service  # type: ignore[attr-defined]
        ct_size = serialized_size(service.params.slot_count)
        while True:
            try:
                opcode, payload = _recv_frame(self.request)
            except ConnectionError:
                return
            try:
                if opcode == OP_ATTEST:
                    ctx = service.attest(payload.decode())
                    _send_frame(self.request, OP_ATTEST, ctx.key_id.encode())
                elif opcode == OP_REENCRYPT:
                    party_len = payload[0]
                    party = payload[1:1 + party_len].decode()
                    blob = payload[1 + party_len:]
                    cts = [deserialize(blob[o:o + ct_size], service._ctx)
                           for o in range(0, len(blob), ct_size)]
                    out = service.reencrypt_batch(party, cts)
                    _send_frame(self.request, OP_REENCRYPT,
                                b"".join(serialize(ct) for ct in out))
                elif opcode == OP_LOSS_HEAD:
                    _handle_loss_head(self.request, service, payload, ct_size)
                else:
                    _send_frame(self.request, OP_ERROR, b"bad opcode")
            except Exception as exc:  # surface service errors to the client
                _send_frame(self.request, OP_ERROR, str(exc).encode())


def _handle_loss_head(sock, service: TeeService, payload: bytes, ct_size: int):
    party_len = payload[0]
    party = payload[1:1 + party_len].decode()
    off = 1 + party_len
    n, classes, layout_code, ct_count = struct.unpack_from("<IIII", payload, off)
    off += 16
    cts = []
    for _ in range(ct_count):
        cts.append(deserialize(payload[off:off + ct_size], service._ctx))
        off += ct_size
    labels = np.frombuffer(payload, dtype=np.uint8, count=n, offset=off).astype(int)
    layout = FL_TYPE1 if layout_code == 1 else FL_TYPE2
    tensor = PackedTensor({(j,): ct for j, ct in enumerate(cts)}, layout, n,
                          pi_sets=service.params.slot_count // n, neurons=classes)
    loss, grads = service.loss_head(party, tensor, labels, classes)
    blob = struct.pack("<d", loss) + b"".join(serialize(ct) for ct in grads.cts())
    _send_frame(sock, OP_LOSS_HEAD, blob)


class TeeSocketServer:
    """Serve a :class:`TeeService` over a Unix domain socket."""

    def __init__(self, service: TeeService, path: str):
        self.path = path

        class _Server(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
            daemon_threads = True

        self._server = _Server(path, _TeeHandler)
        self._server.service = service  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


class TeeSocketClient:
    """Client for the socket transport; mirrors the in-process API."""

    def __init__(self, path: str, ctx: KeyContext, party_id: str):
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.connect(path)
        self._ctx = ctx
        self.party = party_id

    def close(self):
        self._sock.close()

    def attest(self) -> str:
        _send_frame(self._sock, OP_ATTEST, self.party.encode())
        opcode, payload = _recv_frame(self._sock)
        self._check(opcode, OP_ATTEST, payload)
        return payload.decode()

    def reencrypt_batch(self, cts: list[Ciphertext]) -> list[Ciphertext]:
        party = self.party.encode()
        payload = bytes([len(party)]) + party + b"".join(serialize(ct) for ct in cts)
        _send_frame(self._sock, OP_REENCRYPT, payload)
        opcode, body = _recv_frame(self._sock)
        self._check(opcode, OP_REENCRYPT, body)
        size = serialized_size(self._ctx.params.slot_count)
        return [deserialize(body[o:o + size], self._ctx)
                for o in range(0, len(body), size)]

    def loss_head(self, logits: PackedTensor, labels: np.ndarray,
                  classes: int) -> tuple[float, list[Ciphertext]]:
        party = self.party.encode()
        layout_code = 1 if logits.layout == FL_TYPE1 else 2
        cts = logits.cts()
        payload = (bytes([len(party)]) + party
                   + struct.pack("<IIII", logits.n, classes, layout_code, len(cts))
                   + b"".join(serialize(ct) for ct in cts)
                   + np.asarray(labels, dtype=np.uint8).tobytes())
        _send_frame(self._sock, OP_LOSS_HEAD, payload)
        opcode, body = _recv_frame(self._sock)
        self._check(opcode, OP_LOSS_HEAD, body)
        (loss,) = struct.unpack_from("<d", body)
        size = serialized_size(self._ctx.params.slot_count)
        cts = [deserialize(body[o:o + size], self._ctx)
               for o in range(8, len(body), size)]
        return loss, cts

    @staticmethod
    def _check(opcode: int, expected: int, payload: bytes) -> None:
        if opcode == OP_ERROR:
            raise RuntimeError(f"TEE error: {payload.decode(errors='replace')}")
        if opcode != expected:
            raise RuntimeError(f"unexpected opcode {opcode:#x}")
