"""Beaver-triple multiplication, squaring and matrix products.

Each product carries its own precision: multiplying values with ``fx`` and
``fy`` fractional bits gives a raw product with ``fx + fy`` bits, which is
truncated once down to ``out_frac`` (default ``max(fx, fy)``). Integer
indicators (``f = 0``) therefore multiply without any truncation.
"""

from __future__ import annotations

import numpy as np

from .ring import ring_add, ring_mul, ring_sub, trunc_share
from .sharing import ArithShareTensor
from .transport import ProtocolError, Session


def _out_cfg(x: ArithShareTensor, fx: int, fy: int, out_frac: int | None):
    out = max(fx, fy) if out_frac is None else out_frac
    shift = fx + fy - out
    if shift < 0:
        raise ProtocolError(f"cannot raise precision in a product ({fx}+{fy} -> {out})")
    return x.cfg.with_frac(out), shift


def smul_many(sess: Session, pairs, out_fracs=None) -> list[ArithShareTensor]:
    """Several elementwise products opened together in one round."""
    if not pairs:
        return []
    out_fracs = out_fracs or [None] * len(pairs)
    cfg = sess.cfg
    prepared, opened = [], []
    for x, y in pairs:
        shape = np.broadcast_shapes(x.shape, y.shape)
        xd = np.broadcast_to(x.data, shape)
        yd = np.broadcast_to(y.data, shape)
        a, b, c = sess.rand.get("beaver", shape)
        prepared.append((x, y, xd, yd, a, b, c, shape))
        opened.append(ring_sub(xd, a, cfg).reshape(-1))
        opened.append(ring_sub(yd, b, cfg).reshape(-1))
    mine = np.concatenate(opened)
    theirs = sess.exchange(mine)
    both = ring_add(mine, theirs, cfg)

    out, pos = [], 0
    for (x, y, xd, yd, a, b, c, shape), of in zip(prepared, out_fracs):
        n = int(np.prod(shape, dtype=np.int64))
        d = both[pos : pos + n].reshape(shape)
        e = both[pos + n : pos + 2 * n].reshape(shape)
        pos += 2 * n
        z = ring_add(ring_mul(xd, e, cfg), ring_mul(d, yd, cfg), cfg)
        z = ring_add(z, c, cfg)
        if sess.party == 1:
            z = ring_sub(z, ring_mul(d, e, cfg), cfg)
        ocfg, shift = _out_cfg(x, x.cfg.f, y.cfg.f, of)
        out.append(ArithShareTensor(sess.party, trunc_share(z, shift, sess.party, cfg), ocfg))
    return out


def smul(sess: Session, x: ArithShareTensor, y: ArithShareTensor, out_frac: int | None = None) -> ArithShareTensor:
    return smul_many(sess, [(x, y)], [out_frac])[0]


def ssquare_many(sess: Session, xs, out_fracs=None) -> list[ArithShareTensor]:
    """Squares from ``(a, a^2)`` pairs; only ``x - a`` is opened."""
    if not xs:
        return []
    out_fracs = out_fracs or [None] * len(xs)
    cfg = sess.cfg
    prepared, opened = [], []
    for x in xs:
        a, s = sess.rand.get("square", x.shape)
        prepared.append((x, a, s))
        opened.append(ring_sub(x.data, a, cfg).reshape(-1))
    mine = np.concatenate(opened)
    both = ring_add(mine, sess.exchange(mine), cfg)

    out, pos = [], 0
    for (x, a, s), of in zip(prepared, out_fracs):
        d = both[pos : pos + x.size].reshape(x.shape)
        pos += x.size
        z = ring_add(ring_mul(ring_mul(d, a, cfg), np.uint64(2), cfg), s, cfg)
        if sess.party == 1:
            z = ring_add(z, ring_mul(d, d, cfg), cfg)
        ocfg, shift = _out_cfg(x, x.cfg.f, x.cfg.f, of)
        out.append(ArithShareTensor(sess.party, trunc_share(z, shift, sess.party, cfg), ocfg))
    return out


def ssquare(sess: Session, x: ArithShareTensor, out_frac: int | None = None) -> ArithShareTensor:
    return ssquare_many(sess, [x], [out_frac])[0]


def _matmul(a, b, cfg):
    return (np.asarray(a, dtype=np.uint64) @ np.asarray(b, dtype=np.uint64)) & cfg.mask


def smatmul_many(sess: Session, pairs, out_fracs=None) -> list[ArithShareTensor]:
    """Matrix products ``X (m x k) @ Y (k x n)``, all opened in one round."""
    if not pairs:
        return []
    out_fracs = out_fracs or [None] * len(pairs)
    cfg = sess.cfg
    prepared, opened = [], []
    for X, Y in pairs:
        if X.data.ndim != 2 or Y.data.ndim != 2 or X.shape[1] != Y.shape[0]:
            raise ProtocolError(f"cannot multiply {X.shape} by {Y.shape}")
        m, k = X.shape
        n = Y.shape[1]
        A, B, C = sess.rand.get("matmul", (m, k, n))
        prepared.append((X, Y, A, B, C))
        opened.append(ring_sub(X.data, A, cfg).reshape(-1))
        opened.append(ring_sub(Y.data, B, cfg).reshape(-1))
    mine = np.concatenate(opened)
    both = ring_add(mine, sess.exchange(mine), cfg)

    out, pos = [], 0
    for (X, Y, A, B, C), of in zip(prepared, out_fracs):
        D = both[pos : pos + X.size].reshape(X.shape)
        pos += X.size
        E = both[pos : pos + Y.size].reshape(Y.shape)
        pos += Y.size
        Z = ring_add(ring_add(_matmul(X.data, E, cfg), _matmul(D, Y.data, cfg), cfg), C, cfg)
        if sess.party == 1:
            Z = ring_sub(Z, _matmul(D, E, cfg), cfg)
        ocfg, shift = _out_cfg(X, X.cfg.f, Y.cfg.f, of)
        out.append(ArithShareTensor(sess.party, trunc_share(Z, shift, sess.party, cfg), ocfg))
    return out


def smatmul(sess: Session, X: ArithShareTensor, Y: ArithShareTensor, out_frac: int | None = None) -> ArithShareTensor:
    return smatmul_many(sess, [(X, Y)], [out_frac])[0]
