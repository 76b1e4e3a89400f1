"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Criteria the implementation cannot meet as stated raise ``Unattainable`` after
all attainable parts have been asserted, and are marked strict xfail on that
exception only. Any other assertion failure is a real failure.
"""

import json
import time

import numpy as np
import pytest
from conftest import mpc
from scipy import stats

from secmpc import approx, bench
from secmpc.cli import main
from secmpc.dealer import Dealer
from secmpc.engine import dry_run, measure, run_local
from secmpc.kernels import KernelConfig, serf, ssoftmax_2quad, ssoftmax_exact
from secmpc.linear import smul
from secmpc.nonlinear import gs_div, gs_rsqrt, sexp, slt, smax, srecip_newton, ssin_period20
from secmpc.ring import FixedCfg, encode_fixed, ring_add, ring_sub, to_signed
from secmpc.runtime import TOY_KERNEL_CONFIG, EncoderWeights, encoder_layer_plain, encoder_program, share_weights
from secmpc.sharing import ArithShareTensor, public_share, random_ring, reconstruct, reconstruct_raw, share
from secmpc.transport import MSG_EXCHANGE, QueueChannel, Session, run_parties, unpack_ring

BETA = (1.25772, -0.0299154, 0.382155, -0.0519123, 0.196033, -0.0624557, 0.118029)


class Unattainable(AssertionError):
    """A criterion whose stated target the faithful implementation does not reach."""


def unattainable(reason):
    return pytest.mark.xfail(raises=Unattainable, strict=True, reason=reason)


def test_criterion_1_fourier_coefficients(criterion, capsys):
    t = time.perf_counter()
    assert main(["coeffs", "--period", "20", "--n-terms", "7"]) == 0
    elapsed = time.perf_counter() - t
    beta = [float(line.split("=")[1]) for line in capsys.readouterr().out.splitlines()]
    dev = np.abs(np.array(beta) - BETA).max()
    ok = dev <= 1e-4 and elapsed < 1.0
    criterion(1, ok, f"max |beta - reference| = {dev:.2e} (<= 1e-4), {elapsed:.3f}s (< 1s)")
    assert dev <= 1e-4
    assert elapsed < 1.0


def test_criterion_2_gelu_accuracy(criterion):
    t = time.perf_counter()
    rows = bench.gelu_accuracy(samples=100_000, mpc_samples=1000, seed=0)
    elapsed = time.perf_counter() - t
    bounds = (0.005, 0.01, 0.01)
    errs = [r["mean_abs_err"] for r in rows]
    devs = [r["mpc_max_dev"] for r in rows]
    ok = all(e <= b for e, b in zip(errs, bounds)) and max(devs) <= 2.0**-10 and elapsed < 60
    criterion(2, ok, "mean abs err " + ", ".join(f"{e:.5f}" for e in errs)
              + f"; MPC vs backend {max(devs):.2e} (<= 2^-10); {elapsed:.1f}s")  # fmt: skip
    for e, b in zip(errs, bounds):
        assert e <= b
    assert max(devs) <= 2.0**-10
    assert elapsed < 60


def test_criterion_3_primitive_costs(criterion):
    rows = {r["op"]: r for r in bench.bench_primitives(ops=["mul", "square", "sin", "exp", "lt"])}
    want = {"mul": (1, 256), "square": (1, 128), "sin": (1, 42), "exp": (8, 1024)}
    got = {op: (rows[op]["rounds"], rows[op]["bits"]) for op in want}
    ok = got == want and rows["lt"]["rounds"] == 7
    criterion(3, ok, ", ".join(f"{op} {r}/{b}" for op, (r, b) in got.items())
              + f", lt {rows['lt']['rounds']} rounds ({rows['lt']['bits']} bits reported)")  # fmt: skip
    assert got == want
    assert rows["lt"]["rounds"] == 7


@unattainable("the 2Quad softmax needs 14 rounds (vector form) or 15 (reciprocal form), not 23; see the ledger")
def test_criterion_4_kernel_costs(criterion):
    ops = ["gs_div", "gs_rsqrt", "layernorm", "softmax_2quad", "softmax_2quad_vector"]
    rows = {r["op"]: (r["rounds"], r["bits"]) for r in bench.bench_kernels(ops=ops)}
    want = {"gs_div": (13, 6656), "gs_rsqrt": (22, 7040), "layernorm": (24, 7424)}
    soft_ok = (23, 6784) in (rows["softmax_2quad"], rows["softmax_2quad_vector"])
    criterion(4, all(rows[k] == v for k, v in want.items()) and soft_ok,
              ", ".join(f"{k} {r}/{b}" for k, (r, b) in rows.items()) + "; softmax target 23/6784")  # fmt: skip
    for k, v in want.items():
        assert rows[k] == v
    # bits of the vector form agree; the round count is the gap
    assert rows["softmax_2quad_vector"][1] == 6784
    if not soft_ok:
        raise Unattainable(f"softmax costs {rows['softmax_2quad']} and {rows['softmax_2quad_vector']}, target (23, 6784)")


@unattainable("Goldschmidt rsqrt from y0 = 1 diverges as q approaches 3 (relative error 0.53 at q = 2.99)")
def test_criterion_5_goldschmidt_correctness(criterion):
    t = time.perf_counter()
    q = np.linspace(0.001, 1.999, 10_000)
    out, (qd,), _ = mpc(lambda s, v: gs_div(s, public_share(1.0, s.party, v.shape, v.cfg), v), q)
    div_err = np.abs(out * qd - 1.0).max()
    div_oracle = np.abs(out / approx.goldschmidt_div_ref(1.0, qd, 13) - 1.0).max()
    q = np.linspace(0.001, 2.99, 10_000)
    out, (qd,), _ = mpc(lambda s, v: gs_rsqrt(s, v), q)
    rel = np.abs(out * np.sqrt(qd) - 1.0)
    rsqrt_err = rel.max()
    oracle_gap = np.abs(approx.goldschmidt_rsqrt_ref(qd, 11) * np.sqrt(qd) - 1.0).max()
    elapsed = time.perf_counter() - t
    good = qd[rel <= 1e-3]
    criterion(5, div_err <= 1e-3 and rsqrt_err <= 1e-3 and elapsed < 120,
              f"gs_div rel err {div_err:.2e} (MPC vs iteration {div_oracle:.2e}); gs_rsqrt rel err {rsqrt_err:.3f}, "
              f"within 1e-3 up to q = {good.max():.4f}; plaintext iteration itself {oracle_gap:.3f}; {elapsed:.1f}s")  # fmt: skip
    assert div_err <= 1e-3
    assert elapsed < 120
    if rsqrt_err > 1e-3:
        raise Unattainable(f"gs_rsqrt relative error {rsqrt_err:.3f} > 1e-3")


def test_criterion_6_oracle_equivalence(criterion, rng):
    results = {}
    cfg = FixedCfg(16, 4)
    z = np.arange(2**16, dtype=np.uint64)
    z0 = random_ring(rng, z.shape, cfg)
    res = run_local(lambda s, x: slt(s, x, 0.0), ArithShareTensor(0, z0, cfg),
                    ArithShareTensor(1, ring_sub(z, z0, cfg), cfg), seed=1, cfg=cfg)  # fmt: skip
    results["slt l=16 exhaustive mismatches"] = (int((reconstruct(*res.outputs) != (to_signed(z, cfg) < 0)).sum()), 0)

    x = rng.uniform(-50, 50, (1000, 8))
    out, (xd,), _ = mpc(lambda s, v: smax(s, v), x)
    results["smax max dev"] = (np.abs(out - xd.max(-1)).max(), 0.0)
    x = rng.uniform(-8, 2, 1000)
    out, (xd,), _ = mpc(sexp, x)
    ref = approx.exp_repsq_ref(xd)
    results["sexp scaled dev"] = ((np.abs(out - ref) / (2e-3 + 2e-3 * np.abs(ref))).max(), 1.0)
    x = rng.uniform(0.05, 3.0, 1000)
    out, (xd,), _ = mpc(srecip_newton, x)
    ref = approx.newton_recip_ref(xd)
    results["srecip_newton scaled dev"] = ((np.abs(out - ref) / (2e-3 + 1e-3 * np.abs(ref))).max(), 1.0)
    x = rng.uniform(-10, 10, 1000)
    out, (xd,), _ = mpc(ssin_period20, x)
    results["ssin max dev"] = (np.abs(out - np.sin(np.pi * xd / 10)).max(), 2.0**-12)
    x = rng.uniform(-4, 4, 1000)
    for backend in ("fourier7", "poly7"):
        out, (xd,), _ = mpc(lambda s, v: serf(s, v, KernelConfig(erf_backend=backend)), x)
        results[f"serf[{backend}] max dev"] = (np.abs(out - approx.erf_segmented(xd, backend)).max(), 2.0**-10)

    ok = all(v <= bound for v, bound in results.values())
    criterion(6, ok, "; ".join(f"{k} {v:.3g} (<= {b:.3g})" for k, (v, b) in results.items()))
    for k, (v, bound) in results.items():
        assert v <= bound, k


def _encoder_case(seed):
    w = EncoderWeights.random(16, 4, 64, seed=seed)
    x = np.random.default_rng(seed + 1).uniform(-1, 1, (8, 16))
    return x, w


def test_criterion_7_encoder_parity(criterion, tmp_path, unused_ports):
    t = time.perf_counter()
    worst_backend, worst_exact = 0.0, 0.0
    for seed in range(20):
        x, w = _encoder_case(seed)
        rng = np.random.default_rng(seed + 1000)
        x0, x1 = share(x, rng)
        w0, w1 = share_weights(w, rng)
        res = run_local(encoder_program(TOY_KERNEL_CONFIG), (x0, w0), (x1, w1), seed=seed)
        y, xd = reconstruct(*res.outputs), reconstruct(x0, x1)
        worst_backend = max(worst_backend, np.abs(y - encoder_layer_plain(xd, w, TOY_KERNEL_CONFIG, gelu="backend")).max())
        worst_exact = max(worst_exact, np.abs(y - encoder_layer_plain(xd, w, TOY_KERNEL_CONFIG)).max())
    ports = ["--peer-port", str(unused_ports[0]), "--dealer-port", str(unused_ports[1])]
    assert main(["infer", "--mode", "local", "--seed", "7", "--out", str(tmp_path / "local")]) == 0
    assert main(["infer", "--mode", "tcp", "--seed", "7", *ports, "--out", str(tmp_path / "tcp")]) == 0
    a, b = (json.loads((tmp_path / m / "infer.json").read_text()) for m in ("local", "tcp"))
    same = (tmp_path / "local" / "output.sft").read_bytes() == (tmp_path / "tcp" / "output.sft").read_bytes()
    same = same and a["comm"] == b["comm"] and a["transcript_sha256"] == b["transcript_sha256"]
    elapsed = time.perf_counter() - t
    criterion(7, worst_backend <= 1e-2 and same and elapsed < 300,
              f"20 seeds max dev {worst_backend:.2e} (<= 1e-2; exact-GeLU model {worst_exact:.3f}); "
              f"TCP identical {same}; {elapsed:.1f}s")  # fmt: skip
    assert worst_backend <= 1e-2
    assert same
    assert elapsed < 300


class _Recording(QueueChannel):
    def __init__(self, *args):
        super().__init__(*args)
        self.sent, self.received = [], []

    def send(self, msg_type, payload):
        if msg_type == MSG_EXCHANGE:
            self.sent.append(payload)
        super().send(msg_type, payload)

    def recv(self):
        msg_type, payload = super().recv()
        if msg_type == MSG_EXCHANGE:
            self.received.append(payload)
        return msg_type, payload


def _low_byte_pvalue(values):
    counts = np.bincount((values & np.uint64(0xFF)).astype(np.int64), minlength=256)
    return stats.chisquare(counts).pvalue


def test_criterion_8_sharing_smoke(criterion, rng):
    x = rng.uniform(-1000, 1000, (100_000, 4))
    s0, s1 = share(x, rng)
    identity = bool(np.array_equal(reconstruct_raw(s0, s1), encode_fixed(x)))
    p_shares = [_low_byte_pvalue(s.data.reshape(-1)) for s in share(np.full(100_000, 3.25), rng)]

    # a constant input maximises structure: any bias in the masks would show in the openings
    c0, c1 = share(np.full(50_000, 3.25), rng)
    program = lambda s, v: smul(s, v, v)  # noqa: E731
    requests, _ = dry_run(program, c0)
    pool0, pool1 = Dealer(11).pools(requests)
    ch0, ch1 = _Recording.pair()
    sess0, sess1 = Session(0, ch0, pool0), Session(1, ch1, pool1)
    run_parties(lambda: program(sess0, c0), lambda: program(sess1, c1))
    seen_by_1 = np.concatenate([unpack_ring(p, sess0.cfg) for p in ch1.received])
    seen_by_0 = np.concatenate([unpack_ring(p, sess0.cfg) for p in ch0.received])
    opened = ring_add(seen_by_1, seen_by_0, sess0.cfg)
    p_open, p_view = _low_byte_pvalue(opened), _low_byte_pvalue(seen_by_1)

    ok = identity and min(p_shares + [p_open, p_view]) > 0.001
    criterion(8, ok, f"Rec(Shr) identity on 1e5 rows {identity}; share p-values {p_shares[0]:.3f}, {p_shares[1]:.3f}; "
              f"Beaver openings p {p_open:.3f}, peer view p {p_view:.3f} (> 0.001)")  # fmt: skip
    assert identity
    assert min(p_shares) > 0.001
    assert p_open > 0.001 and p_view > 0.001


def test_criterion_9_softmax_direction(criterion, rng):
    x0, _ = share(rng.uniform(-2, 2, 128), rng)
    quad = measure(lambda s, x: ssoftmax_2quad(s, x), x0)
    exact = measure(lambda s, x: ssoftmax_exact(s, x), x0)
    ratio = quad.bits / exact.bits
    criterion(9, ratio < 1 / 8, f"2Quad {quad.bits} bits vs exact {exact.bits} bits at n=128, ratio {ratio:.4f} (< 0.125)")
    assert ratio < 1 / 8
