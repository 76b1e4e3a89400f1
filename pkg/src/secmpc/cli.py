"""``secmpc`` command line: party roles, benchmarks, accuracy tables, coefficients, inference."""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import approx, bench
from .engine import resolve_seed, run_local
from .kernels import KernelConfig
from .parties import Endpoints, run_compute_party, run_dealer, write_party_inputs
from .ring import FixedCfg
from .runtime import (
    TOY_KERNEL_CONFIG,
    EncoderWeights,
    encoder_layer_plain,
    encoder_program,
    load_share,
    load_tensor,
    load_weights,
    save_tensor,
    share_weights,
)
from .sharing import reconstruct, share

log = logging.getLogger("secmpc")

# CLI flag -> config key
FLAG_KEYS = {
    "l": "l",
    "f": "f",
    "erf_backend": "erf_backend",
    "threshold_mode": "threshold_mode",
    "variance_mode": "variance_mode",
    "eta_ln": "eta_layernorm",
    "eta_sm": "eta_softmax",
}


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(args, base: KernelConfig = KernelConfig()):
    """File values first, then explicit flags; returns (ring cfg, kernel cfg, seed, echo)."""
    values = {k: v for k, v in base.to_dict().items()}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    seed_value = args.seed if args.seed is not None else values.get("seed")
    seed = resolve_seed(None if seed_value is None else int(seed_value))
    ring = FixedCfg(int(values.get("l", 64)), int(values.get("f", 16)))
    kcfg = KernelConfig.from_mapping(values)
    echo = {"l": ring.l, "f": ring.f, "seed": seed, **kcfg.to_dict()}
    return ring, kcfg, seed, echo


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; flags override its values")
    p.add_argument("--seed", type=int, help="PRF seed (falls back to $SECMPC_SEED, then 0)")
    p.add_argument("--l", type=int, help="ring bit width")
    p.add_argument("--f", type=int, help="fractional bits")
    p.add_argument("--erf-backend", choices=approx.BACKENDS)
    p.add_argument("--threshold-mode", choices=approx.THRESHOLD_MODES)
    p.add_argument("--variance-mode", choices=approx.VARIANCE_MODES)
    p.add_argument("--eta-ln", type=float, help="LayerNorm deflation constant")
    p.add_argument("--eta-sm", type=float, help="softmax deflation constant")
    p.add_argument("--out", help="output file or directory")


def _sizes(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _intervals(text: str) -> list[tuple]:
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------- subcommands


def cmd_coeffs(args) -> int:
    beta = approx.fourier_coeffs(args.period, args.n_terms)
    for k, b in enumerate(beta, 1):
        print(f"beta_{k} = {b:.6g}")
    return 0


def cmd_accuracy(args) -> int:
    _, kcfg, seed, echo = resolve_config(args)
    ring = FixedCfg(echo["l"], echo["f"])
    out = _out_dir(args, "accuracy_report")
    report = {"config": echo}
    if args.suite in ("gelu", "all"):
        rows = bench.gelu_accuracy(_intervals(args.intervals), args.samples, args.mpc_samples, seed, kcfg, ring)
        approx.write_error_csv(rows, out / "gelu_accuracy.csv", ["mpc_max_dev", "mpc_samples"] if args.mpc_samples else [])
        report["gelu"] = rows
        from . import plots

        x, exact, fit = bench.gelu_curve(kcfg)
        plots.gelu_fit(x, exact, fit, out / "gelu_fit.png", kcfg.erf_backend)
    if args.suite in ("period", "all"):
        prow = approx.period_study(_sizes(args.periods), args.n_terms)
        approx.write_period_csv(prow, out / "period_study.csv")
        report["period_study"] = prow
        from . import plots

        plots.period_errors(prow, out / "period_study.png")
    _write_json(out / "accuracy.json", report)
    print(f"wrote {out}")
    return 0


def cmd_bench(args) -> int:
    ring, kcfg, seed, echo = resolve_config(args)
    out = Path(args.out or "bench_report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    report = {"config": echo, "suites": {}}
    status = 0
    sizes = _sizes(args.sizes)
    ops = set(args.ops.split(",")) if args.ops else None
    if args.suite in ("primitives", "all"):
        rows = bench.bench_primitives(sizes, seed, ring, ops)
        report["suites"]["primitives"] = rows
        bad = bench.failed_assertions(rows)
        if bad:
            status = 1
            for r in bad:
                print(f"MISMATCH {r['op']}: {r['rounds']}/{r['bits']} vs {r['expected_rounds']}/{r['expected_bits']}", file=sys.stderr)
    if args.suite in ("kernels", "all"):
        report["suites"]["kernels"] = bench.bench_kernels(sizes, seed, ring, kcfg, ops)
    if args.mode == "tcp":
        for name in ("primitives", "kernels"):
            for r in _tcp_check(report["suites"].get(name, []), seed, echo, args):
                status = 1
                print(f"TCP MISMATCH {r['op']} n={r['n']}: {r['tcp_rounds']}/{r['tcp_bits']} vs {r['rounds']}/{r['bits']}", file=sys.stderr)
    if args.suite in ("encoder", "all"):
        enc_cfg = KernelConfig.from_mapping({**kcfg.to_dict(), "eta_layernorm": args.eta_ln or TOY_KERNEL_CONFIG.eta_layernorm})
        report["suites"]["encoder"] = bench.bench_encoder(seed if args.seed is not None else 42, cfg=ring, kcfg=enc_cfg)
    _write_json(out, report)

    from . import plots

    stem = out.with_suffix("")
    for name in ("primitives", "kernels"):
        if report["suites"].get(name):
            plots.comm_bars([r for r in report["suites"][name] if r["n"] == sizes[0]], f"{stem}_{name}.png", f"{name} (n={sizes[0]})")
    if "encoder" in report["suites"]:
        plots.encoder_breakdown(report["suites"]["encoder"]["breakdown"], f"{stem}_encoder.png")
    print(f"wrote {out}")
    return status


def cmd_party(args) -> int:
    ring, kcfg, seed, echo = resolve_config(args, TOY_KERNEL_CONFIG)
    ends = Endpoints(args.host, args.peer_port, args.dealer_port, args.connect_timeout)
    if args.role == "dealer":
        info = run_dealer(seed, ends, ring, args.timeout)
    else:
        party = 0 if args.role == "s0" else 1
        info = run_compute_party(
            party, seed, ends, args.program, ring, kcfg,
            Path(args.inputs) if args.inputs else None,
            Path(args.out) if args.out else None,
            args.timeout,
        )  # fmt: skip
    info["config"] = echo
    if args.report:
        _write_json(Path(args.report), info)
    print(json.dumps({k: v for k, v in info.items() if k != "config"}))
    return 0


def _party_base(seed: int, echo: dict, peer_port: int, dealer_port: int) -> list[str]:
    return [sys.executable, "-m", "secmpc", "party", "--seed", str(seed), "--host", "127.0.0.1",
            "--peer-port", str(peer_port), "--dealer-port", str(dealer_port),
            "--l", str(echo["l"]), "--f", str(echo["f"]),
            "--erf-backend", echo["erf_backend"], "--threshold-mode", echo["threshold_mode"],
            "--variance-mode", echo["variance_mode"], "--eta-ln", str(echo["eta_layernorm"]),
            "--eta-sm", str(echo["eta_softmax"])]  # fmt: skip


def spawn_parties(workdir: Path, program: str, seed: int, echo: dict, peer_port: int, dealer_port: int,
                  manifests=(None, None), timeout: float = 300.0) -> dict:
    """Run dealer, S0 and S1 as separate processes; returns the JSON reports keyed by role."""
    base = _party_base(seed, echo, peer_port, dealer_port)
    procs = []
    for role, manifest in (("dealer", None), ("s0", manifests[0]), ("s1", manifests[1])):
        cmd = base + ["--role", role, "--report", str(workdir / f"{role}.json")]
        if role != "dealer":
            cmd += ["--program", program, "--out", str(workdir / f"{role}_out.sfs")]
            if manifest is not None:
                cmd += ["--inputs", str(manifest)]
        procs.append((role, subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)))
    deadline = time.monotonic() + timeout
    failed = []
    # poll so that one failing role stops the others instead of leaving them blocked on a socket
    while any(p.poll() is None for _, p in procs):
        if failed or time.monotonic() > deadline:
            for _, p in procs:
                if p.poll() is None:
                    p.kill()
            if not failed:
                failed.append(f"timed out after {timeout:g} s")
            break
        for role, p in procs:
            if p.poll() not in (None, 0) and not any(f.startswith(role) for f in failed):
                failed.append(f"{role} exited {p.returncode}: {p.stderr.read().decode(errors='replace').strip()[-500:]}")
        time.sleep(0.05)
    for role, p in procs:
        p.wait()
        if p.returncode not in (0, None) and not any(f.startswith(role) for f in failed) and p.returncode > 0:
            failed.append(f"{role} exited {p.returncode}: {p.stderr.read().decode(errors='replace').strip()[-500:]}")
    reports = {}
    for role, p in procs:
        p.stderr.close()
        if p.returncode == 0:
            reports[role] = json.loads((workdir / f"{role}.json").read_text())
    if failed:
        raise RuntimeError("; ".join(failed))
    return reports


def _tcp_check(rows, seed, echo, args) -> list[dict]:
    """Re-run each benchmark row over three processes and compare the meter."""
    mismatched = []
    with tempfile.TemporaryDirectory(prefix="secmpc-bench-") as tmp:
        for r in rows:
            rep = spawn_parties(Path(tmp), f"op:{r['op']}:{r['n']}", seed, echo, args.peer_port, args.dealer_port,
                                timeout=args.timeout)["s0"]["stats"]  # fmt: skip
            r["tcp_rounds"], r["tcp_bits"] = rep["rounds"], rep["bits"]
            r["tcp_matches_inprocess"] = (rep["rounds"], rep["bits"]) == (r["rounds"], r["bits"])
            if not r["tcp_matches_inprocess"]:
                mismatched.append(r)
    return mismatched


def cmd_infer(args) -> int:
    ring, kcfg, seed, echo = resolve_config(args, TOY_KERNEL_CONFIG)
    out = _out_dir(args, "infer_report")
    if args.weights:
        w = load_weights(args.weights)
    else:
        w = EncoderWeights.random(args.d, args.heads, args.ffn, seed)
    rng = np.random.default_rng(seed + 1)
    x = load_tensor(args.input) if args.input else rng.uniform(-1.0, 1.0, (args.seq, w.d))
    x0, x1 = share(x, rng, ring)
    w0, w1 = share_weights(w, rng, ring)

    t = time.perf_counter()
    if args.mode == "local":
        res = run_local(encoder_program(kcfg), (x0, w0), (x1, w1), seed=seed, cfg=ring)
        y = reconstruct(*res.outputs)
        comm = res.comm.to_dict()
        digests = res.digests
    else:
        with tempfile.TemporaryDirectory(prefix="secmpc-") as tmp:
            tmp = Path(tmp)
            manifests = [write_party_inputs(tmp / f"p{j}", j, xs, ws) for j, (xs, ws) in enumerate([(x0, w0), (x1, w1)])]
            reports = spawn_parties(tmp, "encoder", seed, echo, args.peer_port, args.dealer_port, manifests, args.timeout)
            y = reconstruct(load_share(tmp / "s0_out.sfs"), load_share(tmp / "s1_out.sfs"))
        comm = reports["s0"]["stats"]
        digests = [reports["s0"]["transcript_sha256"], reports["s1"]["transcript_sha256"]]
    wall = (time.perf_counter() - t) * 1e3

    ref_backend = encoder_layer_plain(x, w, kcfg, gelu="backend")
    ref_exact = encoder_layer_plain(x, w, kcfg)
    save_tensor(out / "output.sft", y)
    report = {
        "config": echo,
        "mode": args.mode,
        "shape": list(y.shape),
        "comm": comm,
        "transcript_sha256": digests,
        "wall_time_ms": round(wall, 3),
        "max_abs_dev_backend_ref": float(np.abs(y - ref_backend).max()),
        "max_abs_dev_exact_ref": float(np.abs(y - ref_exact).max()),
    }
    _write_json(out / "infer.json", report)
    from . import plots

    plots.encoder_breakdown(comm.get("children", {}), out / "comm_breakdown.png")
    print(json.dumps({k: report[k] for k in ("mode", "max_abs_dev_backend_ref", "max_abs_dev_exact_ref", "wall_time_ms")}))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secmpc", description="Two-party secret-sharing inference toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="print Fourier sine amplitudes of erf")
    p.add_argument("--period", type=float, default=approx.FOURIER_PERIOD)
    p.add_argument("--n-terms", type=int, default=7)
    p.set_defaults(func=cmd_coeffs)

    p = sub.add_parser("accuracy", help="GeLU error tables and the Fourier period study")
    _add_common(p)
    p.add_argument("--suite", choices=("gelu", "period", "all"), default="all")
    p.add_argument("--intervals", default="-1:1,-5:5,-10:10")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--mpc-samples", type=int, default=1000)
    p.add_argument("--periods", default="10,20,30,40")
    p.add_argument("--n-terms", type=int, default=7)
    p.set_defaults(func=cmd_accuracy)

    p = sub.add_parser("bench", help="communication benchmarks")
    _add_common(p)
    p.add_argument("--suite", choices=("primitives", "kernels", "encoder", "all"), default="all")
    p.add_argument("--sizes", default="1")
    p.add_argument("--ops", help="comma-separated subset of ops to run")
    p.add_argument("--mode", choices=("inprocess", "tcp"), default="inprocess",
                   help="tcp re-runs every row as three processes and checks the meter agrees")
    p.add_argument("--peer-port", type=int, default=47120)
    p.add_argument("--dealer-port", type=int, default=47121)
    p.add_argument("--timeout", type=float, default=300.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("party", help="run one role of the three-process deployment")
    _add_common(p)
    p.add_argument("--role", choices=("s0", "s1", "dealer"), required=True)
    p.add_argument("--program", default="smoke", help="smoke, encoder, or op:<name>:<n>")
    p.add_argument("--inputs", help="party manifest for the encoder program")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--peer-port", type=int, default=47100)
    p.add_argument("--dealer-port", type=int, default=47101)
    p.add_argument("--connect-timeout", type=float, default=10.0)
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--report", help="write a JSON run report here")
    p.set_defaults(func=cmd_party)

    p = sub.add_parser("infer", help="toy encoder layer under MPC vs the plaintext model")
    _add_common(p)
    p.add_argument("--mode", choices=("local", "tcp"), default="local")
    p.add_argument("--weights", help="weights manifest")
    p.add_argument("--input", help="input tensor file (seq x d)")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn", type=int, default=64)
    p.add_argument("--seq", type=int, default=8)
    p.add_argument("--peer-port", type=int, default=47110)
    p.add_argument("--dealer-port", type=int, default=47111)
    p.add_argument("--timeout", type=float, default=300.0)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "coeffs" and args.n_terms < 1:
        parser.error("--n-terms must be at least 1")
    try:
        return args.func(args)
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"secmpc {args.command}: error: {exc}", file=sys.stderr)
        return 1
