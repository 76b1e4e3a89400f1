"""Running two-party programs: budget dry-run, then the online phase.

A *program* is a callable ``program(session, inputs)`` that both parties
execute with their own inputs. It must be oblivious: its control flow and
the shapes it produces may not depend on secret values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .dealer import Dealer, RecordingSource
from .ring import DEFAULT_CFG, FixedCfg
from .transport import CommStats, QueueChannel, Session, run_parties

SEED_ENV = "SECMPC_SEED"


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return int(seed)
    return int(os.environ.get(SEED_ENV, "0"))


def dry_run(program, inputs, cfg: FixedCfg = DEFAULT_CFG, party: int = 0):
    """Execute ``program`` without a peer; return (requests, stats)."""
    rec = RecordingSource(cfg)
    sess = Session(party, None, rec, cfg)
    program(sess, inputs)
    return rec.requests, sess.stats


def measure(program, inputs, cfg: FixedCfg = DEFAULT_CFG) -> CommStats:
    """Online communication cost of a program, counted without running a peer."""
    return dry_run(program, inputs, cfg)[1]


@dataclass
class RunResult:
    outputs: list
    stats: list  # per-party CommStats
    digests: list
    requests: list

    @property
    def comm(self) -> CommStats:
        return self.stats[0]


def _guarded(sess: Session, program, inputs):
    def fn():
        try:
            sess.hello()
            return program(sess, inputs)
        finally:
            # closing poisons the peer's channel so it fails instead of hanging
            sess.close()

    return fn


def run_local(program, inputs0, inputs1, seed: int | None = None, cfg: FixedCfg = DEFAULT_CFG) -> RunResult:
    """Run both parties as threads in this process, with a dealer-sized pool."""
    seed = resolve_seed(seed)
    requests, _ = dry_run(program, inputs0, cfg)
    pool0, pool1 = Dealer(seed, cfg).pools(requests)
    ch0, ch1 = QueueChannel.pair()
    s0 = Session(0, ch0, pool0, cfg)
    s1 = Session(1, ch1, pool1, cfg)
    outs = run_parties(_guarded(s0, program, inputs0), _guarded(s1, program, inputs1))
    for pool in (pool0, pool1):
        if pool.remaining:
            raise RuntimeError(f"program left {pool.remaining} randomness items unused; it is not oblivious")
    return RunResult(list(outs), [s0.stats, s1.stats], [s0.transcript_digest, s1.transcript_digest], requests)
