"""Three-process deployment: dealer, S0 and S1 over loopback TCP.

Topology: S0 listens for S1; the dealer listens for S1. S1 dry-runs the
program to obtain the randomness budget, sends it to the dealer, receives
its corrections, then connects to S0. S0 derives all of its correlated
randomness locally and never contacts the dealer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bench
from .dealer import Dealer, DealerError, RandomnessPool, dump_budget, load_budget, pack_corrections, unpack_corrections
from .engine import dry_run
from .kernels import KernelConfig
from .linear import smul
from .ring import DEFAULT_CFG, FixedCfg, decode_fixed, ring_add
from .runtime import (
    TOY_KERNEL_CONFIG,
    encoder_program,
    load_share,
    load_tensor,
    read_manifest,
    save_share,
    save_tensor,
    write_manifest,
)
from .sharing import share
from .transport import (
    HEADER,
    MSG_BUDGET,
    MSG_CORRECTIONS,
    MSG_ERROR,
    ProtocolError,
    Session,
    SocketChannel,
)

log = logging.getLogger(__name__)

SMOKE_INPUTS = (3.0, 4.0)
SMOKE_INPUT_SEED = 7


class SelfCheckError(RuntimeError):
    pass


@dataclass
class Endpoints:
    host: str = "127.0.0.1"
    peer_port: int = 47100
    dealer_port: int = 47101
    connect_timeout: float = 10.0


# ---------------------------------------------------------------- programs


def smoke_inputs(party: int, cfg: FixedCfg):
    """Both parties derive the same fixed sharing of the smoke-test operands."""
    rng = np.random.default_rng(SMOKE_INPUT_SEED)
    xs = share(np.array([SMOKE_INPUTS[0]]), rng, cfg)
    ys = share(np.array([SMOKE_INPUTS[1]]), rng, cfg)
    return xs[party], ys[party]


def smoke_program(sess: Session, inputs):
    x, y = inputs
    z = smul(sess, x, y)
    if sess.dry_run:
        return z
    # self-check: reveal outside the metered protocol and compare with the plaintext product
    opened = ring_add(z.data.reshape(-1), sess.open_unmetered(z.data), sess.cfg)
    got = float(decode_fixed(opened, z.cfg)[0])
    want = SMOKE_INPUTS[0] * SMOKE_INPUTS[1]
    if abs(got - want) > 2.0 ** (-z.cfg.f + 2) * max(1.0, abs(want)):
        raise SelfCheckError(f"smoke product reconstructs to {got}, expected {want}")
    return z


def load_party_inputs(manifest: Path):
    """Inputs for the encoder program from a party manifest of share/tensor files."""
    entries = read_manifest(manifest)
    w = {}
    for name, path in entries.items():
        with open(path, "rb") as fh:
            magic = fh.read(4)
        w[name] = load_share(path) if magic == b"SFS1" else load_tensor(path)
    x = w.pop("x")
    w["heads"] = int(np.asarray(w["heads"]))
    return x, w


# ---------------------------------------------------------------- roles


def run_dealer(seed: int, ends: Endpoints, cfg: FixedCfg = DEFAULT_CFG, timeout: float = 120.0) -> dict:
    ch = SocketChannel.accept_one(ends.host, ends.dealer_port, timeout)
    try:
        msg_type, payload = ch.recv()
        if msg_type != MSG_BUDGET:
            ch.send(MSG_ERROR, f"expected a budget, got type 0x{msg_type:02x}".encode())
            raise ProtocolError(f"dealer expected a budget, got 0x{msg_type:02x}")
        try:
            requests = load_budget(payload)
            blob = pack_corrections(Dealer(seed, cfg).corrections(requests))
        except (ValueError, DealerError) as exc:
            ch.send(MSG_ERROR, str(exc).encode())
            raise
        ch.send(MSG_CORRECTIONS, blob)
        log.info("dealer served %d requests (%d bytes)", len(requests), len(blob))
        return {"requests": len(requests), "bytes": len(blob)}
    finally:
        ch.close()


def _program_and_inputs(program: str, party: int, seed: int, cfg: FixedCfg, kcfg: KernelConfig, inputs: Path | None):
    if program == "smoke":
        return smoke_program, smoke_inputs(party, cfg)
    if program == "encoder":
        if inputs is None:
            raise ValueError("the encoder program needs --inputs (a party manifest)")
        return encoder_program(kcfg), load_party_inputs(inputs)
    if program.startswith("op:"):
        # op:<name>:<n>, inputs derived from the seed exactly as the in-process bench does
        _, name, n = program.split(":")
        return bench.op_program(name, int(n), kcfg), bench.op_inputs(int(n), seed, cfg)[party]
    raise ValueError(f"unknown program {program!r}")


def run_compute_party(
    party: int,
    seed: int,
    ends: Endpoints,
    program: str = "smoke",
    cfg: FixedCfg = DEFAULT_CFG,
    kcfg: KernelConfig = TOY_KERNEL_CONFIG,
    inputs: Path | None = None,
    out: Path | None = None,
    timeout: float = 120.0,
) -> dict:
    prog, args = _program_and_inputs(program, party, seed, cfg, kcfg, inputs)
    requests, _ = dry_run(prog, args, cfg, party)
    offline_bits = 0
    if party == 1:
        dch = SocketChannel.connect(ends.host, ends.dealer_port, timeout, ends.connect_timeout)
        try:
            budget = dump_budget(requests)
            dch.send(MSG_BUDGET, budget)
            msg_type, blob = dch.recv()
        finally:
            dch.close()
        if msg_type == MSG_ERROR:
            raise DealerError(f"dealer refused: {blob.decode(errors='replace')}")
        if msg_type != MSG_CORRECTIONS:
            raise ProtocolError(f"unexpected dealer reply 0x{msg_type:02x}")
        offline_bits = 8 * (len(budget) + len(blob) + 2 * HEADER.size)
        pool = RandomnessPool(1, seed, requests, unpack_corrections(blob, requests), cfg)
        ch = SocketChannel.connect(ends.host, ends.peer_port, timeout, ends.connect_timeout)
    else:
        pool = RandomnessPool(0, seed, requests, cfg=cfg)
        ch = SocketChannel.accept_one(ends.host, ends.peer_port, timeout)

    sess = Session(party, ch, pool, cfg)
    sess.offline.add(1 if party == 1 else 0, offline_bits, 0)
    try:
        sess.hello()
        result = prog(sess, args)
    finally:
        sess.close()
    if out is not None:
        save_share(out, result)
    return {
        "party": party,
        "program": program,
        "stats": sess.stats.to_dict(),
        "offline": sess.offline.to_dict(),
        "transcript_sha256": sess.transcript_digest,
    }


def write_party_inputs(directory: Path, party: int, x_share, w_party: dict) -> Path:
    """Lay out one party's encoder inputs as share/tensor files plus a manifest."""
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    save_share(directory / "x.sfs", x_share)
    entries["x"] = "x.sfs"
    for name, value in w_party.items():
        if name == "heads":
            save_tensor(directory / "heads.sft", np.array(float(value)))
            entries[name] = "heads.sft"
        elif hasattr(value, "party"):
            save_share(directory / f"{name}.sfs", value)
            entries[name] = f"{name}.sfs"
        else:
            save_tensor(directory / f"{name}.sft", value)
            entries[name] = f"{name}.sft"
    manifest = directory / f"party{party}.manifest"
    write_manifest(manifest, entries)
    return manifest

