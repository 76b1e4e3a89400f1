"""Secure GeLU, LayerNorm and softmax kernels built from the primitives."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .approx import BACKENDS, FOURIER_BETA, POLY7_COEFFS, THRESHOLD, THRESHOLD_MODES, VARIANCE_MODES
from .linear import smul, smul_many, ssquare
from .nonlinear import GoldschmidtParams, gs_div, gs_rsqrt, lt_zero_int, sexp, smax, srecip_newton, ssin_period20
from .sharing import ArithShareTensor, mul_public, public_share, rescale
from .transport import Session

SOFTMAX_METHODS = ("reciprocal", "vector")


@dataclass(frozen=True)
class KernelConfig:
    erf_backend: str = "fourier7"
    threshold_mode: str = "on_erf_argument"
    variance_mode: str = "mean"
    eta_layernorm: float = 2000.0
    eta_softmax: float = 5000.0
    t_rsqrt: int = 11
    t_div: int = 13
    softmax_c: float = 5.0
    epsilon: float = 1e-5
    softmax_method: str = "reciprocal"

    def __post_init__(self):
        if self.erf_backend not in BACKENDS:
            raise ValueError(f"erf_backend must be one of {BACKENDS}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        if self.softmax_method not in SOFTMAX_METHODS:
            raise ValueError(f"softmax_method must be one of {SOFTMAX_METHODS}")
        if self.eta_layernorm <= 0 or self.eta_softmax <= 0:
            raise ValueError("deflation constants must be positive")
        if self.t_rsqrt < 1 or self.t_div < 1:
            raise ValueError("iteration counts must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "KernelConfig":
        """Build from string values (config files, CLI flags); unknown keys are ignored."""
        kwargs = {}
        for fl in fields(cls):
            if fl.name in values and values[fl.name] is not None:
                raw = values[fl.name]
                kwargs[fl.name] = raw if not isinstance(raw, str) else _coerce(raw, fl.type)
        return cls(**kwargs)


def _coerce(raw: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw.strip()


# ---------------------------------------------------------------- erf / GeLU


def _backend(sess: Session, xhat: ArithShareTensor, backend: str) -> ArithShareTensor:
    if backend == "fourier7":
        k = np.arange(1, len(FOURIER_BETA) + 1, dtype=np.int64).reshape((-1,) + (1,) * xhat.data.ndim)
        harmonics = ArithShareTensor(xhat.party, np.broadcast_to(xhat.data, k.shape[:1] + xhat.shape), xhat.cfg) * k
        sines = ssin_period20(sess, harmonics)
        beta = np.asarray(FOURIER_BETA).reshape(k.shape)
        return mul_public(sines, beta).sum(axis=0)
    c1, c3, c5, c7 = POLY7_COEFFS
    x2 = ssquare(sess, xhat)
    x3, x4 = smul_many(sess, [(x2, xhat), (x2, x2)])
    x5, x7 = smul_many(sess, [(x4, xhat), (x4, x3)])
    return mul_public(xhat, c1) + mul_public(x3, c3) + mul_public(x5, c5) + mul_public(x7, c7)


def _serf(sess: Session, xhat: ArithShareTensor, cmp: ArithShareTensor, cfg: KernelConfig) -> ArithShareTensor:
    # lower test is -c - x < 0, i.e. not (x <= -c), so both boundaries saturate and erf stays odd
    both = ArithShareTensor(cmp.party, np.stack([(-cmp).data, cmp.data]), cmp.cfg)
    shifts = np.array([THRESHOLD, THRESHOLD]).reshape((2,) + (1,) * cmp.data.ndim)
    ind = lt_zero_int(sess, both - shifts)
    c0, c1 = 1 - ind[0], ind[1]  # c0 = 1{x <= -c}, c1 = 1{x < c}
    z1 = c1 - c0  # 1 inside the fitted segment
    # z2 - z0 = (1 - c1) - c0, still an integer share
    outer = rescale(1 - (c1 + c0), xhat.cfg.f)
    fit = _backend(sess, xhat, cfg.erf_backend)
    return outer + smul(sess, z1, fit)


def serf(sess: Session, xhat: ArithShareTensor, cfg: KernelConfig = KernelConfig()) -> ArithShareTensor:
    """Segmented erf: -1 below -1.7, the fitted backend inside, +1 above."""
    return _serf(sess, xhat, xhat, cfg)


def sgelu(sess: Session, x: ArithShareTensor, cfg: KernelConfig = KernelConfig()) -> ArithShareTensor:
    xhat = mul_public(x, 1.0 / math.sqrt(2.0))
    cmp = xhat if cfg.threshold_mode == "on_erf_argument" else x
    erf = _serf(sess, xhat, cmp, cfg)
    # x/2 is x relabelled with one more fractional bit
    half_x = ArithShareTensor(x.party, x.data, x.cfg.with_frac(x.cfg.f + 1))
    return smul(sess, half_x, 1.0 + erf, out_frac=x.cfg.f)


# ---------------------------------------------------------------- LayerNorm


def slayernorm(
    sess: Session,
    x: ArithShareTensor,
    gamma=1.0,
    beta=0.0,
    cfg: KernelConfig = KernelConfig(),
) -> ArithShareTensor:
    """LayerNorm over the last axis with a deflated Goldschmidt inverse square root.

    ``gamma`` and ``beta`` may be public arrays or shares.
    """
    n = x.shape[-1]
    F = sess.cfg.f + 6
    mean = mul_public(x.sum(axis=-1, keepdims=True), 1.0 / n)
    centred = x - mean.broadcast_to(x.shape)
    ss = ssquare(sess, centred).sum(axis=-1, keepdims=True)
    scale = 1.0 / n if cfg.variance_mode == "mean" else 1.0
    eta = cfg.eta_layernorm
    q0 = mul_public(ss, scale / eta, out_frac=F) + cfg.epsilon / eta
    inv = gs_rsqrt(sess, q0, GoldschmidtParams(cfg.t_rsqrt, 1.0, (0.001, 2.99)))
    y = smul(sess, centred, inv)
    if isinstance(gamma, ArithShareTensor):
        y = smul(sess, mul_public(y, 1.0 / math.sqrt(eta)), gamma)
    else:
        y = mul_public(y, np.asarray(gamma, dtype=np.float64) / math.sqrt(eta))
    return y + beta


# ---------------------------------------------------------------- softmax


def ssoftmax_2quad(sess: Session, x: ArithShareTensor, cfg: KernelConfig = KernelConfig(), method: str | None = None) -> ArithShareTensor:
    """``(x_i + c)^2 / sum_h (x_h + c)^2`` over the last axis.

    ``reciprocal`` runs one Goldschmidt division per row on ``1 / q`` and
    multiplies; ``vector`` iterates the whole numerator vector.
    """
    method = method or cfg.softmax_method
    p = ssquare(sess, x + cfg.softmax_c)
    q = p.sum(axis=-1, keepdims=True)
    eta = cfg.eta_softmax
    params = GoldschmidtParams(cfg.t_div, eta, (0.001, 1.999))
    if method == "vector":
        return gs_div(sess, p, q, params)
    F = sess.cfg.f + 6
    one = public_share(1.0, sess.party, q.shape, q.cfg)
    # numerator left undeflated: the loop yields eta / q
    eta_over_q = gs_div(sess, one, q, params, deflate_p=False)
    recip = mul_public(eta_over_q, 1.0 / eta, out_frac=F)
    return smul(sess, p, recip, out_frac=sess.cfg.f)


def ssoftmax_exact(sess: Session, x: ArithShareTensor, cfg: KernelConfig = KernelConfig()) -> ArithShareTensor:
    """Max-shifted softmax with repeated-squaring exp and Newton reciprocal."""
    tau = smax(sess, x)
    e = sexp(sess, x - ArithShareTensor(tau.party, tau.data[..., None], tau.cfg).broadcast_to(x.shape))
    r = srecip_newton(sess, e.sum(axis=-1, keepdims=True))
    return smul(sess, e, r)
