"""Fixed-point arithmetic over the ring Z_{2^l}.

Ring elements are held in ``numpy.uint64`` arrays. For ``l < 64`` only the
low ``l`` bits are meaningful and every operation masks its result.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class EncodingOverflowError(ValueError):
    """A real value does not fit the integer part of the fixed-point format."""


@dataclass(frozen=True)
class FixedCfg:
    """Ring width ``l`` and number of fractional bits ``f``."""

    l: int = 64
    f: int = 16

    def __post_init__(self):
        if not 8 <= self.l <= 64:
            raise ValueError(f"ring width must be in [8, 64], got {self.l}")
        if not 0 <= self.f <= self.l // 2:
            raise ValueError(f"fractional bits must be in [0, l/2], got {self.f}")

    @property
    def mask(self) -> np.uint64:
        return np.uint64((1 << self.l) - 1)

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def max_abs(self) -> float:
        """Exclusive bound on encodable magnitudes."""
        return float(2 ** (self.l - self.f - 1))

    def with_frac(self, f: int) -> "FixedCfg":
        return replace(self, f=f)


DEFAULT_CFG = FixedCfg()


def _as_ring(a) -> np.ndarray:
    return np.asarray(a, dtype=np.uint64)


def wrap(a, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    """Reduce arbitrary integers (Python ints or int64 arrays) into the ring."""
    if isinstance(a, int):
        return np.asarray(a % (1 << cfg.l), dtype=np.uint64)
    arr = np.asarray(a)
    if arr.dtype == np.uint64:
        return arr & cfg.mask
    if arr.dtype == object:
        return np.vectorize(lambda v: v % (1 << cfg.l), otypes=[np.uint64])(arr)
    return arr.astype(np.int64).view(np.uint64) & cfg.mask


def to_signed(e, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    """Two's-complement view of ring elements as int64."""
    e = _as_ring(e) & cfg.mask
    if cfg.l == 64:
        return e.view(np.int64)
    sign = np.uint64(1 << (cfg.l - 1))
    ext = np.where(e & sign, e | ~cfg.mask, e)
    return ext.view(np.int64)


def encode_fixed(x, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    """Encode reals as ``round(x * 2^f) mod 2^l``, rounding half away from zero."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise EncodingOverflowError("cannot encode non-finite values")
    if x.size and np.max(np.abs(x)) >= cfg.max_abs:
        raise EncodingOverflowError(
            f"|x| = {np.max(np.abs(x))} exceeds 2^{cfg.l - cfg.f - 1} "
            f"for l={cfg.l}, f={cfg.f}"
        )
    scaled = np.sign(x) * np.floor(np.abs(x) * cfg.scale + 0.5)
    return wrap(scaled.astype(np.int64), cfg)


def decode_fixed(e, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    return to_signed(e, cfg).astype(np.float64) / cfg.scale


def ring_add(a, b, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    return (_as_ring(a) + _as_ring(b)) & cfg.mask


def ring_sub(a, b, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    return (_as_ring(a) - _as_ring(b)) & cfg.mask


def ring_mul(a, b, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    return (_as_ring(a) * _as_ring(b)) & cfg.mask


def ring_neg(a, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    return (np.uint64(0) - _as_ring(a)) & cfg.mask


def trunc_local(e, bits: int, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    """Arithmetic right shift of a plaintext ring value."""
    return wrap(to_signed(e, cfg) >> np.int64(bits), cfg)


def trunc_share(s, bits: int, party: int, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    """Share-local truncation.

    Party 0 floors its signed share, party 1 ceils its own. The sum is the
    true quotient rounded stochastically to a neighbouring integer, unless
    the signed shares overflow when added, which happens with probability
    about ``|x| / 2^l``.
    """
    if bits == 0:
        return _as_ring(s) & cfg.mask
    signed = to_signed(s, cfg)
    k = np.int64(bits)
    if party == 0:
        out = signed >> k
    else:
        out = -((-signed) >> k)
    return wrap(out, cfg)


def msb(e, cfg: FixedCfg = DEFAULT_CFG) -> np.ndarray:
    return (_as_ring(e) >> np.uint64(cfg.l - 1)) & np.uint64(1)
