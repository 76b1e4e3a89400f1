"""Framed message exchange between the two compute parties, with metering.

Every synchronous exchange is one round. Both parties send a payload of
the same length, so an exchange of ``n`` ring elements moves ``2 n l`` bits.
Framing overhead is tracked separately from payload bits.
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .ring import DEFAULT_CFG, FixedCfg

MAGIC = 0x5F
HEADER = struct.Struct("<BBI")

MSG_EXCHANGE = 0x01
MSG_EXCHANGE_REDUCED = 0x02
MSG_HELLO = 0x03
MSG_OPEN = 0x04
# dealer traffic lives in the upper half of the type space
MSG_BUDGET = 0x80
MSG_CORRECTIONS = 0x81
MSG_ERROR = 0x82

DEFAULT_TIMEOUT = 120.0


class TransportError(RuntimeError):
    """The peer went away or the channel broke."""


class ProtocolError(RuntimeError):
    """The two parties disagree about what happens next."""


class MeterError(RuntimeError):
    pass


# ---------------------------------------------------------------- framing


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, msg_type, len(payload)) + payload


def decode_header(header: bytes) -> tuple[int, int]:
    if len(header) != HEADER.size:
        raise TransportError(f"short frame header ({len(header)} bytes)")
    magic, msg_type, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic 0x{magic:02x}")
    return msg_type, length


def element_bytes(cfg: FixedCfg) -> int:
    return (cfg.l + 7) // 8


def pack_ring(values: np.ndarray, cfg: FixedCfg) -> bytes:
    """Little-endian, ``ceil(l/8)`` bytes per element."""
    raw = np.ascontiguousarray(values, dtype="<u8").view(np.uint8).reshape(-1, 8)
    return raw[:, : element_bytes(cfg)].tobytes()


def unpack_ring(data: bytes, cfg: FixedCfg) -> np.ndarray:
    nb = element_bytes(cfg)
    if len(data) % nb:
        raise ProtocolError(f"payload of {len(data)} bytes is not a multiple of {nb}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, nb)
    full = np.zeros((raw.shape[0], 8), dtype=np.uint8)
    full[:, :nb] = raw
    return full.view("<u8").reshape(-1).astype(np.uint64)


def pack_bits(values: np.ndarray, width: int) -> bytes:
    """Pack each value's low ``width`` bits back to back, LSB first."""
    v = np.asarray(values, dtype=np.uint64).reshape(-1)
    bits = (v[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)
    return np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes()


def unpack_bits(data: bytes, width: int, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits.size < width * count:
        raise ProtocolError("reduced payload too short")
    bits = bits[: width * count].reshape(count, width).astype(np.uint64)
    return (bits << np.arange(width, dtype=np.uint64)).sum(axis=1, dtype=np.uint64)


def reduced_width(modulus: int, frac_bits: int) -> int:
    return max(1, int(np.ceil(np.log2(modulus * 2**frac_bits))))


# ---------------------------------------------------------------- channels


class Channel:
    def send(self, msg_type: int, payload: bytes) -> None:
        raise NotImplementedError

    def recv(self) -> tuple[int, bytes]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class QueueChannel(Channel):
    """One end of an in-process duplex pipe carrying the same frames as TCP."""

    _CLOSED = object()

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float = DEFAULT_TIMEOUT):
        self._inbox = inbox
        self._outbox = outbox
        self.timeout = timeout
        self._closed = False

    @classmethod
    def pair(cls, timeout: float = DEFAULT_TIMEOUT) -> tuple["QueueChannel", "QueueChannel"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b, timeout), cls(b, a, timeout)

    def send(self, msg_type, payload):
        if self._closed:
            raise TransportError("channel closed")
        self._outbox.put(encode_frame(msg_type, payload))

    def recv(self):
        try:
            frame = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"no message from peer within {self.timeout}s") from None
        if frame is self._CLOSED:
            raise TransportError("peer closed the channel")
        msg_type, length = decode_header(frame[: HEADER.size])
        payload = frame[HEADER.size :]
        if len(payload) != length:
            raise ProtocolError("frame length does not match header")
        return msg_type, payload

    def close(self):
        if not self._closed:
            self._closed = True
            self._outbox.put(self._CLOSED)


class SocketChannel(Channel):
    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT):
        self.sock = sock
        self.sock.settimeout(timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT, retry_for: float = 10.0):
        deadline = time.monotonic() + retry_for
        while True:
            try:
                return cls(socket.create_connection((host, port), timeout=timeout), timeout)
            except OSError as exc:
                if time.monotonic() >= deadline:
                    raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
                time.sleep(0.05)

    @classmethod
    def accept_one(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        try:
            srv = socket.create_server((host, port), reuse_port=False)
        except OSError as exc:
            raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
        srv.settimeout(timeout)
        with srv:
            try:
                conn, _ = srv.accept()
            except OSError as exc:
                raise TransportError(f"no peer connected to {host}:{port}: {exc}") from exc
        return cls(conn, timeout)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                raise TransportError("peer closed the connection")
            buf.extend(chunk)
        return bytes(buf)

    def send(self, msg_type, payload):
        try:
            self.sock.sendall(encode_frame(msg_type, payload))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv(self):
        msg_type, length = decode_header(self._read_exact(HEADER.size))
        return msg_type, self._read_exact(length)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


# ---------------------------------------------------------------- metering


@dataclass
class CommStats:
    rounds: int = 0
    bits: int = 0
    framing_bits: int = 0
    children: dict = field(default_factory=dict)

    def child(self, tag: str) -> "CommStats":
        return self.children.setdefault(tag, CommStats())

    def add(self, rounds: int, bits: int, framing_bits: int):
        self.rounds += rounds
        self.bits += bits
        self.framing_bits += framing_bits

    def to_dict(self) -> dict:
        out = {"rounds": self.rounds, "bits": self.bits, "framing_bits": self.framing_bits}
        if self.children:
            out["children"] = {k: v.to_dict() for k, v in self.children.items()}
        return out

    def __eq__(self, other):
        return isinstance(other, CommStats) and self.to_dict() == other.to_dict()


# ---------------------------------------------------------------- session


class Session:
    """One party's live view of a two-party protocol run.

    ``channel=None`` puts the session in dry-run mode: exchanges return
    zeros, nothing is sent, and metering still happens. This is how the
    randomness budget and the communication cost of a program are counted
    without a peer.
    """

    def __init__(self, party: int, channel: Channel | None, rand, cfg: FixedCfg = DEFAULT_CFG):
        if party not in (0, 1):
            raise ValueError(f"party must be 0 or 1, got {party}")
        self.party = party
        self.channel = channel
        self.rand = rand
        self.cfg = cfg
        self.stats = CommStats()
        self.offline = CommStats()
        self._scopes = [self.stats]
        self._digest = hashlib.sha256()

    @property
    def dry_run(self) -> bool:
        return self.channel is None

    @property
    def transcript_digest(self) -> str:
        return self._digest.hexdigest()

    @contextmanager
    def meter_scope(self, tag: str):
        parent = self._scopes[-1]
        node = parent.child(tag)
        self._scopes.append(node)
        try:
            yield node
        finally:
            top = self._scopes.pop()
            if top is not node:
                raise MeterError(f"unbalanced meter scope: closed {tag!r} out of order")

    def _meter(self, bits: int, framing_bits: int):
        for s in self._scopes:
            s.add(1, bits, framing_bits)

    def _swap(self, msg_type: int, payload: bytes) -> bytes:
        # party 0 speaks first so neither side blocks on a full socket buffer
        ch = self.channel
        if self.party == 0:
            ch.send(msg_type, payload)
            got_type, got = ch.recv()
        else:
            got_type, got = ch.recv()
            ch.send(msg_type, payload)
        if got_type != msg_type:
            raise ProtocolError(f"expected message type 0x{msg_type:02x}, got 0x{got_type:02x}")
        if len(got) != len(payload):
            raise ProtocolError(f"peer sent {len(got)} bytes, expected {len(payload)}")
        mine, theirs = (payload, got) if self.party == 0 else (got, payload)
        self._digest.update(bytes([msg_type]) + mine + theirs)
        return got

    def exchange(self, values) -> np.ndarray:
        """Send our ring vector, receive the peer's (same length)."""
        v = np.asarray(values, dtype=np.uint64).reshape(-1)
        if v.size == 0:
            raise ProtocolError("zero-length exchange")
        framing = 2 * HEADER.size * 8
        self._meter(2 * v.size * self.cfg.l, framing)
        if self.dry_run:
            return np.zeros_like(v)
        got = self._swap(MSG_EXCHANGE, pack_ring(v & self.cfg.mask, self.cfg))
        return unpack_ring(got, self.cfg)

    def exchange_reduced(self, values, modulus: int, frac_bits: int) -> np.ndarray:
        """Exchange values already reduced modulo ``modulus * 2^frac_bits``.

        Only ``ceil(log2(modulus * 2^frac_bits))`` bits per element travel.
        """
        v = np.asarray(values, dtype=np.uint64).reshape(-1)
        if v.size == 0:
            raise ProtocolError("zero-length exchange")
        bound = modulus * 2**frac_bits
        if np.any(v >= np.uint64(bound)):
            raise ProtocolError(f"payload not reduced modulo {bound}")
        w = reduced_width(modulus, frac_bits)
        self._meter(2 * v.size * w, 2 * HEADER.size * 8)
        if self.dry_run:
            return np.zeros_like(v)
        got = self._swap(MSG_EXCHANGE_REDUCED, pack_bits(v, w))
        return unpack_bits(got, w, v.size)

    def open_unmetered(self, values) -> np.ndarray:
        """Reveal-to-both outside any protocol; used by self-checks, never metered."""
        v = np.asarray(values, dtype=np.uint64).reshape(-1)
        if self.dry_run:
            return np.zeros_like(v)
        return unpack_ring(self._swap(MSG_OPEN, pack_ring(v, self.cfg)), self.cfg)

    def hello(self):
        """Check that both ends agree on party roles and ring parameters."""
        if self.dry_run:
            return
        mine = struct.pack("<BBB", self.party, self.cfg.l, self.cfg.f)
        got = self._swap(MSG_HELLO, mine)
        peer, l, f = struct.unpack("<BBB", got)
        if peer == self.party:
            raise ProtocolError(f"both ends claim party {peer}")
        if (l, f) != (self.cfg.l, self.cfg.f):
            raise ProtocolError(f"peer ring config l={l}, f={f} differs from ours")

    def close(self):
        if self.channel is not None:
            self.channel.close()


def run_parties(fn0, fn1, timeout: float | None = None):
    """Run two callables on threads; re-raise the first failure."""
    results = [None, None]
    errors = [None, None]

    def target(i, fn):
        try:
            results[i] = fn()
        except BaseException as exc:  # noqa: BLE001 - surfaced below
            errors[i] = exc

    threads = [threading.Thread(target=target, args=(i, fn), daemon=True) for i, fn in enumerate((fn0, fn1))]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
    for exc in errors:
        if exc is not None and not isinstance(exc, TransportError):
            raise exc
    for exc in errors:
        if exc is not None:
            raise exc
    return results
