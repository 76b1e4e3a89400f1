import socket

import numpy as np
import pytest

from secmpc.engine import run_local
from secmpc.ring import DEFAULT_CFG
from secmpc.sharing import reconstruct, share


def mpc(program, *xs, seed=0, cfg=DEFAULT_CFG):
    """Share each plaintext input, run ``program(sess, *shares)`` two-party, and open the result.

    Returns ``(opened, decoded_inputs, result)``; ``decoded_inputs`` are the inputs as
    actually encoded, which is what an oracle should be evaluated on.
    """
    rng = np.random.default_rng(seed + 1000)
    pairs = [share(np.asarray(x, dtype=float), rng, cfg) for x in xs]
    ins0 = tuple(p[0] for p in pairs)
    ins1 = tuple(p[1] for p in pairs)
    res = run_local(lambda s, ins: program(s, *ins), ins0, ins1, seed=seed, cfg=cfg)
    decoded = [reconstruct(*p) for p in pairs]
    return reconstruct(*res.outputs), decoded, res


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unused_ports():
    """Two loopback ports that were free a moment ago."""
    socks = [socket.socket() for _ in range(2)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, ok, detail):
        lines.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
