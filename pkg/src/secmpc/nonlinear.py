"""Comparison, maximum, exponential, sine, Newton baselines and Goldschmidt cores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dealer import sine_modulus
from .linear import smul, smul_many, ssquare
from .ring import encode_fixed, ring_add, ring_mul, to_signed, trunc_share, wrap
from .sharing import ArithShareTensor, mul_public, public_share, rescale
from .transport import ProtocolError, Session

# working precision of the Goldschmidt state; m itself is kept at session f
GS_FRAC_EXTRA = 6


# ---------------------------------------------------------------- boolean circuits


def band_many(sess: Session, pairs) -> list[np.ndarray]:
    """AND of XOR-shared words, all gates in one round."""
    cfg = sess.cfg
    flat_u = np.concatenate([np.asarray(u).reshape(-1) for u, _ in pairs])
    flat_v = np.concatenate([np.asarray(v).reshape(-1) for _, v in pairs])
    a, b, c = sess.rand.get("band", flat_u.shape)
    mine = np.concatenate([flat_u ^ a, flat_v ^ b])
    both = mine ^ sess.exchange(mine)
    d, e = both[: flat_u.size], both[flat_u.size :]
    z = (d & b) ^ (e & a) ^ c
    if sess.party == 1:
        z = z ^ (d & e)
    z &= cfg.mask
    out, pos = [], 0
    for u, _ in pairs:
        n = np.asarray(u).size
        out.append(z[pos : pos + n].reshape(np.shape(u)))
        pos += n
    return out


def _prefix_spans(l: int) -> list[int]:
    spans, glen = [], 2
    while glen < l - 1:
        spans.append(glen)
        glen *= 2
    return spans


def msb_bool(sess: Session, z: np.ndarray) -> np.ndarray:
    """XOR share (0/1 per element) of the top bit of ``z_0 + z_1 mod 2^l``.

    Party 0's share word is one addend, party 1's the other; a parallel-prefix
    carry network over the two addends yields the carry into the top bit.
    """
    cfg = sess.cfg
    mask = cfg.mask
    one = np.uint64(1)
    mine = np.asarray(z, dtype=np.uint64) & mask
    zero = np.zeros_like(mine)
    X = mine if sess.party == 0 else zero
    Y = mine if sess.party == 1 else zero
    Xs = (X << one) & mask
    Ys = (Y << one) & mask

    # 2-bit groups in one round: generate = g_i ^ p_i g_{i-1}, propagate = p_i p_{i-1}
    A1, A2, A3, A4, A5 = band_many(sess, [(X, Y), (X & Xs, Ys), (Xs, Y & Ys), (X, Ys), (Xs, Y)])
    G = A1 ^ A2 ^ A3
    P = A4 ^ A5 ^ (X & Xs) ^ (Y & Ys)

    spans = _prefix_spans(cfg.l)
    for i, k in enumerate(spans):
        ku = np.uint64(k)
        if i == len(spans) - 1:
            (PG,) = band_many(sess, [(P, (G << ku) & mask)])
            G = G ^ PG
        else:
            PG, PP = band_many(sess, [(P, (G << ku) & mask), (P, (P << ku) & mask)])
            G, P = G ^ PG, PP

    top = np.uint64(cfg.l - 1)
    s = (mine ^ ((G << one) & mask)) >> top
    return s & one


def bool_to_arith(sess: Session, b: np.ndarray) -> ArithShareTensor:
    """Convert XOR-shared bits to integer (f = 0) arithmetic shares in one round."""
    cfg = sess.cfg
    r_bool, r_arith = sess.rand.get("bit", b.shape)
    mine = (b ^ r_bool) & np.uint64(1)
    c = (mine ^ sess.exchange_reduced(mine.reshape(-1), 2, 0).reshape(b.shape)) & np.uint64(1)
    # b = c xor r = c + r - 2cr
    coef = wrap(1 - 2 * c.astype(np.int64), cfg)
    out = ring_mul(r_arith, coef, cfg)
    if sess.party == 0:
        out = ring_add(out, c, cfg)
    return ArithShareTensor(sess.party, out, cfg.with_frac(0))


def lt_zero_int(sess: Session, z: ArithShareTensor) -> ArithShareTensor:
    """Integer share of ``1{z < 0}`` (f = 0)."""
    return bool_to_arith(sess, msb_bool(sess, z.data))


def slt(sess: Session, x: ArithShareTensor, c) -> ArithShareTensor:
    """Share of ``1{x < c}`` encoded with the session's fractional bits."""
    z = x - c
    return rescale(lt_zero_int(sess, z), x.cfg.f)


# ---------------------------------------------------------------- max / exp


def smax(sess: Session, x: ArithShareTensor, axis: int = -1) -> ArithShareTensor:
    """Tree-reduction maximum along ``axis``; one comparison layer per level."""
    v = ArithShareTensor(x.party, np.moveaxis(x.data, axis, -1), x.cfg)
    if v.shape[-1] == 0:
        raise ProtocolError("maximum of an empty vector")
    while v.shape[-1] > 1:
        n = v.shape[-1]
        half = n // 2
        a = v[..., 0 : 2 * half : 2]
        b = v[..., 1 : 2 * half : 2]
        ind = lt_zero_int(sess, b - a)  # 1 where b < a
        best = b + smul(sess, ind, a - b)
        if n % 2:
            best = ArithShareTensor(v.party, np.concatenate([best.data, v.data[..., -1:]], axis=-1), v.cfg)
        v = best
    return v[..., 0]


# (input frac, output frac) of each of the eight squarings; early squarings run
# at higher precision since their error is amplified by every later squaring
EXP_SCHEDULE = (22, 22, 22, 22, 20, 18, 16, 16)
EXP_SQUARINGS = 8


def sexp(sess: Session, x: ArithShareTensor) -> ArithShareTensor:
    """``(1 + x/256)^256`` by eight squarings."""
    f = x.cfg.f
    # x/256 is x relabelled with 8 more fractional bits: exact and free
    y = ArithShareTensor(x.party, x.data, x.cfg.with_frac(f + EXP_SQUARINGS)) + 1.0
    y = rescale(y, EXP_SCHEDULE[0]) if EXP_SCHEDULE[0] <= y.cfg.f else y
    for i in range(EXP_SQUARINGS):
        nxt = EXP_SCHEDULE[i + 1] if i + 1 < EXP_SQUARINGS else f
        y = ssquare(sess, y, out_frac=nxt)
    return y


# ---------------------------------------------------------------- sine


def ssin_period20(sess: Session, x: ArithShareTensor) -> ArithShareTensor:
    """Share of ``sin(pi x / 10)``; the masked angle is opened mod 20 in one round."""
    cfg = x.cfg
    f = cfg.f
    M = sine_modulus(f)
    t, u, v = sess.rand.get("sine", x.shape, f)
    delta_j = (to_signed(x.data, cfg) % np.int64(M)).astype(np.uint64)
    delta_j = (delta_j + np.uint64(M) - t) % np.uint64(M)
    delta = (delta_j + sess.exchange_reduced(delta_j.reshape(-1), 20, f).reshape(x.shape)) % np.uint64(M)
    ang = np.pi * (delta.astype(np.float64) / (1 << f)) / 10.0
    p = encode_fixed(np.sin(ang), cfg)
    q = encode_fixed(np.cos(ang), cfg)
    raw = ring_add(ring_mul(p, v, cfg), ring_mul(q, u, cfg), cfg)
    return ArithShareTensor(x.party, trunc_share(raw, f, x.party, cfg), cfg)


# ---------------------------------------------------------------- Newton baselines


def srecip_newton(sess: Session, x: ArithShareTensor, iters: int = 10) -> ArithShareTensor:
    y = mul_public(sexp(sess, 0.5 - x), 3.0) + 0.003
    for _ in range(iters):
        xy = smul(sess, x, y)
        y = smul(sess, y, 2.0 - xy)
    return y


def srsqrt_newton(sess: Session, x: ArithShareTensor, iters: int = 3) -> ArithShareTensor:
    arg = mul_public(mul_public(x, 0.5) + 0.2, -2.2)
    y = sexp(sess, arg) + 0.198046875
    for _ in range(iters):
        y2 = ssquare(sess, y)
        xy2 = smul(sess, x, y2)
        y = mul_public(smul(sess, y, 3.0 - xy2), 0.5)
    return y


def ssqrt_newton(sess: Session, x: ArithShareTensor, iters: int = 3) -> ArithShareTensor:
    return smul(sess, x, srsqrt_newton(sess, x, iters))


# ---------------------------------------------------------------- Goldschmidt


@dataclass(frozen=True)
class GoldschmidtParams:
    t: int
    eta: float = 1.0
    target_interval: tuple = (0.001, 1.999)

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("iteration count must be at least 1")
        if self.eta <= 0:
            raise ValueError("deflation constant must be positive")


DIV_PARAMS = GoldschmidtParams(13, 1.0, (0.001, 1.999))
RSQRT_PARAMS = GoldschmidtParams(11, 1.0, (0.001, 2.99))


def _state_frac(sess: Session) -> int:
    return sess.cfg.f + GS_FRAC_EXTRA


def _deflate(x: ArithShareTensor, eta: float, frac: int) -> ArithShareTensor:
    if eta == 1.0:
        return rescale(x, frac)
    return mul_public(x, 1.0 / eta, out_frac=frac)


def gs_div(
    sess: Session,
    p: ArithShareTensor,
    q: ArithShareTensor,
    params: GoldschmidtParams = DIV_PARAMS,
    deflate_p: bool = True,
    out_frac: int | None = None,
) -> ArithShareTensor:
    """``p / q`` by Goldschmidt iteration on deflated inputs.

    ``q`` broadcasts against ``p`` (e.g. one denominator per row). Both
    multiplies of an iteration share one round. With ``deflate_p=False`` the
    numerator is left undeflated and kept at session precision, so the
    result is ``eta * p / q``.
    """
    f = sess.cfg.f
    F = _state_frac(sess)
    qs = _deflate(q, params.eta, F)
    ps = _deflate(p, params.eta, F) if deflate_p else rescale(p, f)
    pf = ps.cfg.f
    for _ in range(params.t):
        m = rescale(2.0 - qs, f)
        ps, qs = smul_many(sess, [(ps, m), (qs, m)], [pf, F])
    return rescale(ps, f if out_frac is None else out_frac)


def gs_rsqrt(
    sess: Session,
    q: ArithShareTensor,
    params: GoldschmidtParams = RSQRT_PARAMS,
    out_frac: int | None = None,
) -> ArithShareTensor:
    """``1 / sqrt(q)`` by Goldschmidt iteration, starting from ``p = 1``."""
    f = sess.cfg.f
    F = _state_frac(sess)
    qs = _deflate(q, params.eta, F)
    ps = public_share(1.0, sess.party, qs.shape, qs.cfg)
    for _ in range(params.t):
        three_minus = 3.0 - qs
        # halving is a relabel with one more fractional bit
        m = rescale(ArithShareTensor(qs.party, three_minus.data, qs.cfg.with_frac(F + 1)), f)
        m2 = ssquare(sess, m, out_frac=F)
        qs, ps = smul_many(sess, [(qs, m2), (ps, m)], [F, F])
    return rescale(ps, f if out_frac is None else out_frac)

