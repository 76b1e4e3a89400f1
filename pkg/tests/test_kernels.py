import math

import numpy as np
import pytest
from conftest import mpc

from secmpc import approx
from secmpc.engine import measure
from secmpc.kernels import KernelConfig, serf, sgelu, slayernorm, ssoftmax_2quad, ssoftmax_exact
from secmpc.sharing import share

POLY = KernelConfig(erf_backend="poly7")
FOURIER = KernelConfig()


# ---------------------------------------------------------------- erf / GeLU


@pytest.mark.parametrize("kcfg", [FOURIER, POLY], ids=["fourier7", "poly7"])
def test_serf_examples(kcfg):
    out, (xd,), _ = mpc(lambda s, x: serf(s, x, kcfg), np.array([0.0, 3.0, 1.2]))
    assert abs(out[0]) <= 2.0**-12
    assert out[1] == 1.0
    assert abs(out[2] - approx.erf_segmented(xd[2], kcfg.erf_backend)) <= 2.0**-10


FOURIER_FIT_GAP = pytest.mark.xfail(
    strict=True,
    reason="the seven-term sine series itself is 0.0214 away from erf at 1.2 (0.9317 vs 0.9103)",
)


@pytest.mark.parametrize(
    "kcfg", [pytest.param(FOURIER, marks=FOURIER_FIT_GAP), POLY], ids=["fourier7", "poly7"]
)
def test_serf_close_to_erf_at_1_2(kcfg):
    out, _, _ = mpc(lambda s, x: serf(s, x, kcfg), 1.2)
    assert abs(out - math.erf(1.2)) <= 0.01


def test_poly7_value_at_1_2():
    assert abs(approx.poly7(1.2) - 0.9168) <= 1e-4


@pytest.mark.parametrize("kcfg", [FOURIER, POLY], ids=["fourier7", "poly7"])
def test_serf_is_odd(kcfg, rng):
    x = rng.uniform(-4, 4, 1000)
    out, _, _ = mpc(lambda s, v: serf(s, v, kcfg), np.concatenate([x, -x]))
    assert np.abs(out[:1000] + out[1000:]).max() <= 2.0**-10


def test_serf_backends_agree(rng):
    x = rng.uniform(-1.7, 1.7, 1000)
    a, _, _ = mpc(lambda s, v: serf(s, v, FOURIER), x)
    b, _, _ = mpc(lambda s, v: serf(s, v, POLY), x)
    assert np.abs(a - b).max() <= 0.02


def test_sgelu_examples():
    out, _, _ = mpc(lambda s, x: sgelu(s, x), np.array([0.0, 10.0]))
    assert abs(out[0]) <= 2.0**-16
    assert abs(out[1] - 10.0) <= 2.0**-10


def test_sgelu_mean_error(rng):
    x = rng.uniform(-5, 5, 10_000)
    out, (xd,), _ = mpc(lambda s, v: sgelu(s, v), x)
    assert np.abs(out - approx.gelu_ref(xd)).mean() <= 0.01


@pytest.mark.parametrize("mode", ["on_erf_argument", "on_input"])
def test_sgelu_matches_plaintext_backend(mode, rng):
    kcfg = KernelConfig(threshold_mode=mode)
    x = rng.uniform(-5, 5, 2000)
    out, (xd,), _ = mpc(lambda s, v: sgelu(s, v, kcfg), x)
    ref = approx.gelu_segmented(xd, kcfg.erf_backend, mode)
    assert np.abs(out - ref).max() <= 2.0**-10


def test_gelu_reflection(rng):
    x = rng.uniform(-5, 5, 1000)
    out, _, _ = mpc(lambda s, v: sgelu(s, v), np.concatenate([x, -x]))
    assert np.abs(out[:1000] - out[1000:] - x).max() <= 1e-2


# ---------------------------------------------------------------- LayerNorm


def test_layernorm_constant_row_is_zero():
    out, _, _ = mpc(lambda s, x: slayernorm(s, x), np.full((2, 8), 3.5))
    np.testing.assert_allclose(out, 0.0, atol=1e-3)


def test_layernorm_example():
    # with eta = 1 the deflated variance 1.25 lies inside the rsqrt target interval
    kcfg = KernelConfig(eta_layernorm=1.0)
    out, (xd,), _ = mpc(lambda s, x: slayernorm(s, x, cfg=kcfg), np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(out, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-2)


def test_layernorm_output_statistics(rng):
    x = rng.normal(0, 10, (64, 16))
    out, (xd,), _ = mpc(lambda s, v: slayernorm(s, v), x)
    assert np.abs(out.mean(-1)).max() <= 1e-2
    np.testing.assert_allclose((out**2).mean(-1), 1.0, atol=5e-2)
    np.testing.assert_allclose(out, approx.layernorm_ref(xd), atol=1e-2)


def test_layernorm_affine_and_modes(rng):
    x = rng.normal(0, 10, (4, 16))
    gamma, beta = rng.uniform(0.5, 1.5, 16), rng.uniform(-1, 1, 16)
    out, (xd,), _ = mpc(lambda s, v: slayernorm(s, v, gamma, beta), x)
    np.testing.assert_allclose(out, approx.layernorm_ref(xd, gamma, beta), atol=2e-2)
    kcfg = KernelConfig(variance_mode="sum", eta_layernorm=20_000.0)
    out_sum, _, _ = mpc(lambda s, v: slayernorm(s, v, cfg=kcfg), x)
    np.testing.assert_allclose(out_sum, approx.layernorm_ref(xd, mode="sum"), atol=1e-2)


def test_layernorm_cost():
    x0, _ = share(np.zeros(1), np.random.default_rng(0))
    st = measure(lambda s, x: slayernorm(s, x), x0)
    assert (st.rounds, st.bits) == (24, 7424)


# ---------------------------------------------------------------- softmax


@pytest.mark.parametrize("method", ["reciprocal", "vector"])
def test_2quad_examples(method):
    out, _, _ = mpc(lambda s, x: ssoftmax_2quad(s, x, method=method), np.array([[0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(out[0], [0.5, 0.5], atol=1e-3)
    np.testing.assert_allclose(out[1], [36 / 61, 25 / 61], atol=1e-3)


@pytest.mark.parametrize("method", ["reciprocal", "vector"])
def test_2quad_normalised_and_nonnegative(method, rng):
    x = rng.uniform(-3, 3, (1000, 8))
    out, (xd,), _ = mpc(lambda s, v: ssoftmax_2quad(s, v, method=method), x)
    assert out.min() >= 0.0
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-3)
    np.testing.assert_allclose(out, approx.two_quad_ref(xd), atol=1e-3)


def test_2quad_costs():
    x0, _ = share(np.zeros(1), np.random.default_rng(0))
    st = measure(lambda s, x: ssoftmax_2quad(s, x, method="vector"), x0)
    assert (st.rounds, st.bits) == (14, 6784)
    st = measure(lambda s, x: ssoftmax_2quad(s, x, method="reciprocal"), x0)
    assert (st.rounds, st.bits) == (15, 7040)


def test_exact_softmax_examples():
    out, _, _ = mpc(lambda s, x: ssoftmax_exact(s, x), np.zeros(3))
    np.testing.assert_allclose(out, 1 / 3, atol=1e-2)
    out, (xd,), _ = mpc(lambda s, x: ssoftmax_exact(s, x), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out, approx.softmax_repsq_ref(xd), atol=1e-2)


def test_exact_softmax_costs_more_than_2quad(rng):
    x0, _ = share(rng.uniform(-2, 2, 128), rng)
    quad = measure(lambda s, x: ssoftmax_2quad(s, x), x0)
    exact = measure(lambda s, x: ssoftmax_exact(s, x), x0)
    print(f"softmax bits at n=128: 2Quad {quad.bits}, exact {exact.bits}, ratio {quad.bits / exact.bits:.3f}")
    assert quad.bits < exact.bits


# ---------------------------------------------------------------- config


def test_config_validation_and_coercion():
    with pytest.raises(ValueError):
        KernelConfig(erf_backend="taylor")
    with pytest.raises(ValueError):
        KernelConfig(eta_layernorm=0.0)
    kc = KernelConfig.from_mapping({"erf_backend": "poly7", "t_div": "9", "eta_softmax": "123.5", "junk": "1"})
    assert (kc.erf_backend, kc.t_div, kc.eta_softmax) == ("poly7", 9, 123.5)
    assert KernelConfig.from_mapping(kc.to_dict()) == kc
