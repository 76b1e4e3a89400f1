"""Plaintext references, erf fits and their error analysis.

Everything here runs in double precision and serves as the oracle for the
secure protocols.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

THRESHOLD = 1.7
FOURIER_PERIOD = 20.0
# amplitudes of sin(k pi x / 10), k = 1..7
FOURIER_BETA = (1.25772, -0.0299154, 0.382155, -0.0519123, 0.196033, -0.0624557, 0.118029)
# odd degree-7 fit, coefficients of x, x^3, x^5, x^7
POLY7_COEFFS = (1.09952043, -0.297453931, 0.0493278356, -0.0031673043)

BACKENDS = ("fourier7", "poly7")
THRESHOLD_MODES = ("on_erf_argument", "on_input")
VARIANCE_MODES = ("mean", "sum")


class QuadratureError(ArithmeticError):
    pass


# ---------------------------------------------------------------- quadrature


def adaptive_simpson(fn, a: float, b: float, tol: float = 1e-10, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with Richardson correction."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = fn(lm), fn(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        if depth <= 0:
            raise QuadratureError(f"no convergence on [{a}, {b}]")
        return recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1) + recurse(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    fa, fb, fm = fn(a), fn(b), fn(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def fourier_coeffs(period: float = FOURIER_PERIOD, n_terms: int = 7, target=math.erf, tol: float = 1e-10) -> np.ndarray:
    """Sine amplitudes of ``target`` over one period centred on zero.

    ``beta_k = (2/P) * integral_{-P/2}^{P/2} target(x) sin(2 pi k x / P) dx``.
    """
    if period <= 0:
        raise ValueError("period must be positive")
    if n_terms < 1:
        raise ValueError("need at least one term")
    half = period / 2.0
    out = []
    for k in range(1, n_terms + 1):
        w = 2.0 * math.pi * k / period
        # split at the zeros of the sine so each panel is smooth and single-signed
        edges = np.linspace(-half, half, 2 * k + 1)
        total = sum(
            adaptive_simpson(lambda x, w=w: target(x) * math.sin(w * x), lo, hi, tol / (2 * k))
            for lo, hi in zip(edges[:-1], edges[1:])
        )
        out.append(total * 2.0 / period)
    return np.array(out)


def cosine_coeffs(period: float = FOURIER_PERIOD, n_terms: int = 7, target=math.erf, tol: float = 1e-10) -> np.ndarray:
    """Cosine amplitudes; zero up to quadrature error for odd targets."""
    half = period / 2.0
    return np.array(
        [
            adaptive_simpson(lambda x, w=2.0 * math.pi * k / period: target(x) * math.cos(w * x), -half, half, tol)
            * 2.0
            / period
            for k in range(1, n_terms + 1)
        ]
    )


# ---------------------------------------------------------------- references

_erf_vec = np.vectorize(math.erf, otypes=[np.float64])


def erf_ref(x):
    return _erf_vec(np.asarray(x, dtype=np.float64))


def gelu_ref(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf_ref(x / math.sqrt(2.0)))


def fourier_series(x, beta=FOURIER_BETA, period: float = FOURIER_PERIOD):
    x = np.asarray(x, dtype=np.float64)
    return sum(b * np.sin(2.0 * np.pi * (k + 1) * x / period) for k, b in enumerate(beta))


def poly7(x, coeffs=POLY7_COEFFS):
    x = np.asarray(x, dtype=np.float64)
    x2 = x * x
    return x * (coeffs[0] + x2 * (coeffs[1] + x2 * (coeffs[2] + x2 * coeffs[3])))


def erf_backend(xhat, backend: str = "fourier7"):
    if backend == "fourier7":
        return fourier_series(xhat)
    if backend == "poly7":
        return poly7(xhat)
    raise ValueError(f"unknown erf backend {backend!r}")


def erf_segmented(xhat, backend: str = "fourier7", cmp=None, threshold: float = THRESHOLD):
    """-1 / backend / +1 split at ``+-threshold`` of ``cmp`` (default: ``xhat``)."""
    xhat = np.asarray(xhat, dtype=np.float64)
    cmp = xhat if cmp is None else np.asarray(cmp, dtype=np.float64)
    return np.where(cmp <= -threshold, -1.0, np.where(cmp < threshold, erf_backend(xhat, backend), 1.0))


def gelu_segmented(x, backend: str = "fourier7", threshold_mode: str = "on_erf_argument"):
    x = np.asarray(x, dtype=np.float64)
    xhat = x / math.sqrt(2.0)
    if threshold_mode == "on_erf_argument":
        cmp = xhat
    elif threshold_mode == "on_input":
        cmp = x
    else:
        raise ValueError(f"unknown threshold mode {threshold_mode!r}")
    return 0.5 * x * (1.0 + erf_segmented(xhat, backend, cmp))


def quad_ref(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.125 * x * x + 0.25 * x + 0.5


def two_quad_ref(x, c: float = 5.0, axis: int = -1):
    p = (np.asarray(x, dtype=np.float64) + c) ** 2
    return p / p.sum(axis=axis, keepdims=True)


def softmax_ref(x, axis: int = -1):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def exp_repsq_ref(x, n: int = 8):
    return (1.0 + np.asarray(x, dtype=np.float64) / 2**n) ** (2**n)


def softmax_repsq_ref(x, axis: int = -1):
    x = np.asarray(x, dtype=np.float64)
    e = exp_repsq_ref(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def layernorm_ref(x, gamma=1.0, beta=0.0, mode: str = "mean", eps: float = 1e-5, axis: int = -1):
    x = np.asarray(x, dtype=np.float64)
    centred = x - x.mean(axis=axis, keepdims=True)
    ss = (centred**2).sum(axis=axis, keepdims=True)
    if mode == "mean":
        var = ss / x.shape[axis]
    elif mode == "sum":
        var = ss
    else:
        raise ValueError(f"unknown variance mode {mode!r}")
    return gamma * centred / np.sqrt(var + eps) + beta


def goldschmidt_div_ref(p, q, t: int = 13):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for _ in range(t):
        m = 2.0 - q
        p, q = p * m, q * m
    return p


def goldschmidt_rsqrt_ref(q, t: int = 11, trace: bool = False):
    q = np.asarray(q, dtype=np.float64)
    p = np.ones_like(q)
    qs = [q]
    for _ in range(t):
        m = (3.0 - q) / 2.0
        p, q = p * m, q * m * m
        qs.append(q)
    return (p, qs) if trace else p


def newton_recip_ref(x, iters: int = 10):
    x = np.asarray(x, dtype=np.float64)
    y = 3.0 * exp_repsq_ref(0.5 - x) + 0.003
    for _ in range(iters):
        y = y * (2.0 - x * y)
    return y


def newton_rsqrt_ref(x, iters: int = 3):
    x = np.asarray(x, dtype=np.float64)
    y = exp_repsq_ref(-2.2 * (x / 2.0 + 0.2)) + 0.198046875
    for _ in range(iters):
        y = 0.5 * y * (3.0 - x * y * y)
    return y


# ---------------------------------------------------------------- error analysis


@dataclass(frozen=True)
class ErrorRow:
    backend: str
    interval_lo: float
    interval_hi: float
    mean_abs_err: float
    err_var: float


def error_report(
    backend: str = "fourier7",
    interval=(-5.0, 5.0),
    sample_count: int = 100_000,
    threshold_mode: str = "on_erf_argument",
    seed: int = 0,
) -> ErrorRow:
    """Mean and variance of ``|segmented GeLU - GeLU|`` over uniform samples."""
    lo, hi = interval
    x = np.random.default_rng(seed).uniform(lo, hi, sample_count)
    err = np.abs(gelu_segmented(x, backend, threshold_mode) - gelu_ref(x))
    label = backend if threshold_mode == "on_erf_argument" else f"{backend}/{threshold_mode}"
    return ErrorRow(label, float(lo), float(hi), float(err.mean()), float(err.var()))


def period_study(periods=(10, 20, 30, 40), n_terms: int = 7, lo: float = -THRESHOLD, hi: float = THRESHOLD, grid: int = 20001):
    """Max ``|fit - erf|`` on ``[lo, hi]`` for a sine fit of each period."""
    x = np.linspace(lo, hi, grid)
    ref = erf_ref(x)
    rows = []
    for period in periods:
        beta = fourier_coeffs(period, n_terms)
        fit = fourier_series(x, beta, period)
        rows.append({"period": float(period), "n_terms": n_terms, "max_abs_err": float(np.max(np.abs(fit - ref)))})
    return rows


ERROR_COLUMNS = ("backend", "interval_lo", "interval_hi", "mean_abs_err", "err_var")


def write_error_csv(rows, path_or_file, extra_columns=()):
    cols = list(ERROR_COLUMNS) + list(extra_columns)
    return _write_csv([r if isinstance(r, dict) else r.__dict__ for r in rows], cols, path_or_file)


def write_period_csv(rows, path_or_file):
    return _write_csv(rows, ["period", "n_terms", "max_abs_err"], path_or_file)


def _write_csv(rows, cols, path_or_file):
    if hasattr(path_or_file, "write"):
        w = csv.DictWriter(path_or_file, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_csv(rows, cols, fh)
