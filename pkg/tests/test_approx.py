import io
import math
import time

import numpy as np
import pytest
from scipy import fft, integrate, special

from secmpc import approx

BETA = (1.25772, -0.0299154, 0.382155, -0.0519123, 0.196033, -0.0624557, 0.118029)


def test_reference_coefficients():
    t = time.perf_counter()
    beta = approx.fourier_coeffs(20, 7)
    assert time.perf_counter() - t < 1.0
    np.testing.assert_allclose(beta, BETA, atol=1e-4)


def test_coefficients_match_scipy_quadrature():
    beta = approx.fourier_coeffs(20, 7)
    for k, b in enumerate(beta, 1):
        want = 2 / 20 * integrate.quad(lambda x: math.erf(x) * math.sin(2 * math.pi * k * x / 20), -10, 10, limit=200)[0]
        assert abs(b - want) <= 1e-9


def test_cosine_terms_of_odd_target_vanish():
    for period in (10, 20, 30):
        np.testing.assert_allclose(approx.cosine_coeffs(period, 7), 0.0, atol=1e-10)


def test_period_10_matches_discrete_sine_transform():
    n = 2**16
    period = 10.0
    # odd extension sampled at half-integer offsets: DST-II of erf on (0, period/2)
    x = (np.arange(n) + 0.5) * (period / 2) / n
    dst = fft.dst(special.erf(x), type=2) / n
    np.testing.assert_allclose(approx.fourier_coeffs(period, 7), dst[:7], atol=1e-6)


def test_coefficients_are_linear_in_the_target():
    beta = approx.fourier_coeffs(20, 7)
    twice = approx.fourier_coeffs(20, 7, target=lambda x: 2 * math.erf(x))
    np.testing.assert_allclose(twice, 2 * beta, atol=1e-12)


def test_fourier_coeffs_rejects_bad_arguments():
    with pytest.raises(ValueError):
        approx.fourier_coeffs(20, 0)
    with pytest.raises(ValueError):
        approx.fourier_coeffs(-1, 7)


def test_adaptive_simpson_against_known_integrals():
    assert abs(approx.adaptive_simpson(math.sin, 0, math.pi) - 2.0) < 1e-10
    assert abs(approx.adaptive_simpson(math.exp, 0, 1) - (math.e - 1)) < 1e-10


def test_reference_functions():
    assert approx.gelu_ref(0.0) == 0.0
    x = np.linspace(-6, 6, 1001)
    np.testing.assert_allclose(approx.gelu_ref(x) - approx.gelu_ref(-x), x, atol=1e-12)
    np.testing.assert_allclose(approx.gelu_ref(x), x / 2 * (1 + approx.erf_ref(x / math.sqrt(2))), atol=1e-12)
    np.testing.assert_allclose(approx.erf_ref(x), special.erf(x), atol=1e-14)
    assert approx.quad_ref(2.0) == 1.5
    np.testing.assert_allclose(approx.two_quad_ref(np.array([1.0, 0.0]), c=5), [36 / 61, 25 / 61], atol=1e-12)


def test_softmax_references():
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(approx.softmax_ref(x), special.softmax(x), atol=1e-12)
    assert abs(approx.exp_repsq_ref(1.0) - (1 + 1 / 256) ** 256) < 1e-12
    np.testing.assert_allclose(approx.softmax_repsq_ref(x).sum(), 1.0, atol=1e-12)


def test_layernorm_reference():
    out = approx.layernorm_ref(np.array([1.0, 2.0, 3.0, 4.0]), eps=0.0)
    np.testing.assert_allclose(out, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4)


@pytest.mark.parametrize("interval,bound", [((-1, 1), 0.005), ((-5, 5), 0.01), ((-10, 10), 0.01)])
@pytest.mark.parametrize("backend", ["poly7", "fourier7"])
def test_gelu_error_table(backend, interval, bound):
    row = approx.error_report(backend, interval, 100_000, seed=0)
    assert row.mean_abs_err <= bound


def test_error_report_is_deterministic():
    a = approx.error_report("fourier7", (-5, 5), 10_000, seed=3)
    b = approx.error_report("fourier7", (-5, 5), 10_000, seed=3)
    assert a == b


def test_period_study_runs_for_all_periods():
    rows = approx.period_study((10, 20, 30, 40), 7)
    assert [r["period"] for r in rows] == [10, 20, 30, 40]
    err = {r["period"]: r["max_abs_err"] for r in rows}
    # direction recorded: period 20 beats period 10 on the fitted range
    assert err[20] < err[10]


@pytest.mark.xfail(
    strict=True,
    reason="the seven-term period-20 sine series of erf peaks at 0.0218 error on [-1.7, 1.7]; "
    "the bound is not attainable by this series (see the decisions ledger)",
)
def test_period_20_fit_error_bound():
    """The fitted sine series should stay within 0.01 of erf on [-1.7, 1.7]."""
    err = approx.period_study((20,), 7)[0]["max_abs_err"]
    print(f"period-20 max |fit - erf| on [-1.7, 1.7] = {err:.4f}")
    assert err <= 0.01


def test_backends_agree_inside_threshold():
    x = np.linspace(-1.7, 1.7, 2001)
    assert np.abs(approx.poly7(x) - approx.fourier_series(x)).max() <= 0.02


def test_segmented_saturates():
    assert approx.erf_segmented(3.0) == 1.0
    assert approx.erf_segmented(-3.0) == -1.0
    assert approx.gelu_segmented(10.0) == 10.0


def test_csv_writers():
    buf = io.StringIO()
    approx.write_error_csv([approx.error_report("poly7", (-1, 1), 1000)], buf)
    header = buf.getvalue().splitlines()[0]
    assert header == "backend,interval_lo,interval_hi,mean_abs_err,err_var"
    buf = io.StringIO()
    approx.write_period_csv(approx.period_study((10, 20)), buf)
    assert buf.getvalue().splitlines()[0] == "period,n_terms,max_abs_err"
