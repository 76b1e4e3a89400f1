"""Two-out-of-two additive and boolean secret sharing.

An :class:`ArithShareTensor` is one party's view of a secret tensor. All
operations in this module are local: none of them talk to the peer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ring import (
    DEFAULT_CFG,
    FixedCfg,
    decode_fixed,
    encode_fixed,
    ring_add,
    ring_mul,
    ring_neg,
    ring_sub,
    trunc_share,
    wrap,
)


class ReconstructionError(ValueError):
    pass


def _check_party(party: int):
    if party not in (0, 1):
        raise ValueError(f"party must be 0 or 1, got {party}")


@dataclass(frozen=True, eq=False)
class ArithShareTensor:
    party: int
    data: np.ndarray
    cfg: FixedCfg = DEFAULT_CFG

    def __post_init__(self):
        _check_party(self.party)
        object.__setattr__(self, "data", wrap(np.asarray(self.data, dtype=np.uint64), self.cfg))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def _like(self, data, cfg: FixedCfg | None = None) -> "ArithShareTensor":
        return ArithShareTensor(self.party, data, cfg or self.cfg)

    def __getitem__(self, idx) -> "ArithShareTensor":
        return self._like(self.data[idx])

    def reshape(self, *shape) -> "ArithShareTensor":
        return self._like(self.data.reshape(*shape))

    @property
    def T(self) -> "ArithShareTensor":
        return self._like(self.data.T)

    def swapaxes(self, a, b) -> "ArithShareTensor":
        return self._like(np.swapaxes(self.data, a, b))

    def broadcast_to(self, shape) -> "ArithShareTensor":
        return self._like(np.broadcast_to(self.data, shape).copy())

    def sum(self, axis=None, keepdims=False) -> "ArithShareTensor":
        # uint64 sums wrap modulo 2^64, which is the ring sum for l = 64
        return self._like(np.sum(self.data, axis=axis, keepdims=keepdims, dtype=np.uint64))

    def __add__(self, other):
        if isinstance(other, ArithShareTensor):
            return local_add(self, other)
        return local_add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ArithShareTensor):
            return local_sub(self, other)
        return local_add_const(self, -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return local_add_const(-self, other)

    def __neg__(self):
        return self._like(ring_neg(self.data, self.cfg))

    def __mul__(self, k):
        return local_scale(self, k)

    __rmul__ = __mul__

    def __repr__(self):
        return f"ArithShareTensor(party={self.party}, shape={self.shape}, l={self.cfg.l}, f={self.cfg.f})"


@dataclass(frozen=True, eq=False)
class BoolShareTensor:
    """Boolean share: one machine word per element, low ``l`` bits used."""

    party: int
    data: np.ndarray
    cfg: FixedCfg = DEFAULT_CFG

    def __post_init__(self):
        _check_party(self.party)
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.uint64) & self.cfg.mask)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __xor__(self, other):
        if isinstance(other, BoolShareTensor):
            _check_compatible(self, other)
            return BoolShareTensor(self.party, self.data ^ other.data, self.cfg)
        # public constant is folded in by party 0 only
        c = np.asarray(other, dtype=np.uint64)
        return BoolShareTensor(self.party, self.data ^ c if self.party == 0 else self.data, self.cfg)

    def __and__(self, public):
        return BoolShareTensor(self.party, self.data & np.asarray(public, dtype=np.uint64), self.cfg)

    def __lshift__(self, k: int):
        return BoolShareTensor(self.party, self.data << np.uint64(k), self.cfg)

    def __rshift__(self, k: int):
        return BoolShareTensor(self.party, self.data >> np.uint64(k), self.cfg)


def _check_compatible(a, b):
    if a.party != b.party:
        raise ValueError("cannot combine shares held by different parties")
    if a.cfg != b.cfg:
        raise ValueError(f"fixed-point configs differ: {a.cfg} vs {b.cfg}")


def share(x, rng: np.random.Generator, cfg: FixedCfg = DEFAULT_CFG):
    """Split plaintext ``x`` into ``([x]_0, [x]_1)`` with ``[x]_0`` uniform."""
    e = encode_fixed(x, cfg)
    return share_raw(e, rng, cfg)


def share_raw(e, rng: np.random.Generator, cfg: FixedCfg = DEFAULT_CFG):
    e = np.asarray(e, dtype=np.uint64)
    r = random_ring(rng, e.shape, cfg)
    return ArithShareTensor(0, r, cfg), ArithShareTensor(1, ring_sub(e, r, cfg), cfg)


def random_ring(rng: np.random.Generator, shape, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    return rng.integers(0, 2**64, size=shape, dtype=np.uint64, endpoint=False) & cfg.mask


def reconstruct_raw(s0: ArithShareTensor, s1: ArithShareTensor) -> np.ndarray:
    if s0.shape != s1.shape:
        raise ReconstructionError(f"share shapes differ: {s0.shape} vs {s1.shape}")
    if s0.cfg != s1.cfg:
        raise ReconstructionError(f"share configs differ: {s0.cfg} vs {s1.cfg}")
    if s0.party == s1.party:
        raise ReconstructionError("both shares belong to the same party")
    return ring_add(s0.data, s1.data, s0.cfg)


def reconstruct(s0: ArithShareTensor, s1: ArithShareTensor) -> np.ndarray:
    return decode_fixed(reconstruct_raw(s0, s1), s0.cfg)


def reconstruct_bool(s0: BoolShareTensor, s1: BoolShareTensor) -> np.ndarray:
    if s0.shape != s1.shape or s0.party == s1.party:
        raise ReconstructionError("boolean shares are not a matching pair")
    return s0.data ^ s1.data


def local_add(a: ArithShareTensor, b: ArithShareTensor) -> ArithShareTensor:
    _check_compatible(a, b)
    return a._like(ring_add(a.data, b.data, a.cfg))


def local_sub(a: ArithShareTensor, b: ArithShareTensor) -> ArithShareTensor:
    _check_compatible(a, b)
    return a._like(ring_sub(a.data, b.data, a.cfg))


def local_add_const(a: ArithShareTensor, c) -> ArithShareTensor:
    """Add a public real constant; only party 0 changes its share."""
    if a.party != 0:
        return a._like(np.broadcast_to(a.data, np.broadcast_shapes(a.shape, np.shape(c))).copy())
    return a._like(ring_add(a.data, encode_fixed(c, a.cfg), a.cfg))


def local_add_raw(a: ArithShareTensor, raw) -> ArithShareTensor:
    """Add a public ring element (already encoded); party 0 only."""
    if a.party != 0:
        return a
    return a._like(ring_add(a.data, np.asarray(raw, dtype=np.uint64), a.cfg))


def local_scale(a: ArithShareTensor, k) -> ArithShareTensor:
    """Multiply by a public integer. Both parties scale; no truncation."""
    k = np.asarray(k)
    if not np.issubdtype(k.dtype, np.integer):
        raise TypeError("local_scale takes integer factors; use mul_public for reals")
    return a._like(ring_mul(a.data, wrap(k.astype(np.int64), a.cfg), a.cfg))


def public_share(value, party: int, shape=(), cfg: FixedCfg = DEFAULT_CFG) -> ArithShareTensor:
    """Trivial sharing of a public value: party 0 holds it, party 1 holds zero."""
    e = np.broadcast_to(encode_fixed(value, cfg), shape).copy() if shape else encode_fixed(value, cfg)
    if party == 1:
        e = np.zeros_like(e)
    return ArithShareTensor(party, e, cfg)


def mul_public(a: ArithShareTensor, c, out_frac: int | None = None) -> ArithShareTensor:
    """Multiply a share by public real constant(s) and rescale locally.

    The constant is encoded with enough fractional bits to keep at least
    ``f`` significant bits, so tiny deflation factors lose no precision.
    """
    c = np.asarray(c, dtype=np.float64)
    out_frac = a.cfg.f if out_frac is None else out_frac
    peak = float(np.max(np.abs(c))) if c.size else 0.0
    extra = max(0, -int(np.floor(np.log2(peak)))) if peak > 0 else 0
    cbits = min(a.cfg.f + extra, a.cfg.l // 2 + 8)
    enc = np.sign(c) * np.floor(np.abs(c) * 2.0**cbits + 0.5)
    raw = ring_mul(a.data, wrap(enc.astype(np.int64), a.cfg), a.cfg)
    shift = a.cfg.f + cbits - out_frac
    cfg = a.cfg.with_frac(out_frac)
    if shift < 0:
        return ArithShareTensor(a.party, ring_mul(raw, np.uint64(1 << -shift), cfg), cfg)
    return ArithShareTensor(a.party, trunc_share(raw, shift, a.party, a.cfg), cfg)


def rescale(a: ArithShareTensor, new_frac: int) -> ArithShareTensor:
    """Move a share to a different number of fractional bits."""
    if new_frac == a.cfg.f:
        return a
    cfg = a.cfg.with_frac(new_frac)
    if new_frac > a.cfg.f:
        return ArithShareTensor(a.party, ring_mul(a.data, np.uint64(1 << (new_frac - a.cfg.f)), cfg), cfg)
    return ArithShareTensor(a.party, trunc_share(a.data, a.cfg.f - new_frac, a.party, a.cfg), cfg)


def stack(shares, axis=0) -> ArithShareTensor:
    first = shares[0]
    for s in shares[1:]:
        _check_compatible(first, s)
    return first._like(np.stack([s.data for s in shares], axis=axis))


def concat(shares, axis=0) -> ArithShareTensor:
    first = shares[0]
    for s in shares[1:]:
        _check_compatible(first, s)
    return first._like(np.concatenate([s.data for s in shares], axis=axis))
