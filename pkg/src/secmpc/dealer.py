"""The assistant server: correlated randomness for the online phase.

Each party derives its own random material from a keyed generator
``PRF(k_j, i)`` where ``i`` is the request index. The dealer knows both keys,
recomputes everything, and sends party 1 only the corrections that make the
correlation hold (e.g. ``c_1 = a*b - c_0``). Party 0 never talks to the
dealer.

Pools are sized ahead of time from a list of :class:`Request` records
obtained by dry-running the protocol program.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ring import DEFAULT_CFG, FixedCfg, encode_fixed, ring_add, ring_mul, ring_sub

KINDS = ("beaver", "square", "matmul", "band", "bit", "sine")
SINE_PERIOD = 20


class DealerError(RuntimeError):
    pass


class PoolExhaustedError(DealerError):
    pass


class RandomnessReuseError(DealerError):
    pass


@dataclass(frozen=True)
class Request:
    """One unit of correlated randomness: a kind, an element shape, and kind-specific parameters."""

    kind: str
    shape: tuple
    param: int = 0  # fractional bits for "sine"; unused otherwise

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DealerError(f"unknown randomness kind {self.kind!r}")
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))

    def to_json(self):
        return [self.kind, list(self.shape), self.param]

    @classmethod
    def from_json(cls, item):
        kind, shape, param = item
        return cls(kind, tuple(shape), param)


def dump_budget(requests) -> bytes:
    return json.dumps([r.to_json() for r in requests]).encode()


def load_budget(data: bytes) -> list[Request]:
    return [Request.from_json(item) for item in json.loads(data.decode())]


def prf(seed: int, party: int, index: int) -> np.random.Generator:
    """Counter-mode keyed generator: key (seed, party), counter index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, party, index])))


def _ring(rng, shape, cfg):
    return rng.integers(0, 2**64, size=shape, dtype=np.uint64) & cfg.mask


def _matmul(a, b, cfg):
    # integer matmul on uint64 wraps modulo 2^64
    return (a @ b) & cfg.mask


def sine_modulus(frac: int) -> int:
    return SINE_PERIOD * (1 << frac)


def local_parts(req: Request, party: int, rng: np.random.Generator, cfg: FixedCfg) -> tuple:
    """The share components a party draws itself from its own PRF stream."""
    s = req.shape
    k = req.kind
    if k == "beaver":
        return (_ring(rng, s, cfg), _ring(rng, s, cfg)) + ((_ring(rng, s, cfg),) if party == 0 else ())
    if k == "square":
        return (_ring(rng, s, cfg),) + ((_ring(rng, s, cfg),) if party == 0 else ())
    if k == "matmul":
        m, kk, n = s
        parts = (_ring(rng, (m, kk), cfg), _ring(rng, (kk, n), cfg))
        return parts + ((_ring(rng, (m, n), cfg),) if party == 0 else ())
    if k == "band":
        return (_ring(rng, s, cfg), _ring(rng, s, cfg)) + ((_ring(rng, s, cfg),) if party == 0 else ())
    if k == "bit":
        r = rng.integers(0, 2, size=s, dtype=np.uint64)
        return (r,) + ((_ring(rng, s, cfg),) if party == 0 else ())
    if k == "sine":
        t = rng.integers(0, sine_modulus(req.param), size=s, dtype=np.uint64)
        return (t,) + ((_ring(rng, s, cfg), _ring(rng, s, cfg)) if party == 0 else ())
    raise DealerError(k)


def correction_shapes(req: Request) -> list[tuple]:
    if req.kind == "matmul":
        m, _, n = req.shape
        return [(m, n)]
    if req.kind == "sine":
        return [req.shape, req.shape]
    return [req.shape]


def compute_corrections(req: Request, p0: tuple, p1: tuple, cfg: FixedCfg, force_t=None) -> list[np.ndarray]:
    k = req.kind
    if k == "beaver":
        a = ring_add(p0[0], p1[0], cfg)
        b = ring_add(p0[1], p1[1], cfg)
        return [ring_sub(ring_mul(a, b, cfg), p0[2], cfg)]
    if k == "square":
        a = ring_add(p0[0], p1[0], cfg)
        return [ring_sub(ring_mul(a, a, cfg), p0[1], cfg)]
    if k == "matmul":
        A = ring_add(p0[0], p1[0], cfg)
        B = ring_add(p0[1], p1[1], cfg)
        return [ring_sub(_matmul(A, B, cfg), p0[2], cfg)]
    if k == "band":
        a = p0[0] ^ p1[0]
        b = p0[1] ^ p1[1]
        return [(a & b) ^ p0[2]]
    if k == "bit":
        r = p0[0] ^ p1[0]
        return [ring_sub(r, p0[1], cfg)]
    if k == "sine":
        M = np.uint64(sine_modulus(req.param))
        t = (p0[0] + p1[0]) % M
        if force_t is not None:
            t = np.full(req.shape, force_t, dtype=np.uint64)
        angle = np.pi * (t.astype(np.float64) / (1 << req.param)) / 10.0
        scfg = cfg.with_frac(req.param)
        u = ring_sub(encode_fixed(np.sin(angle), scfg), p0[1], cfg)
        v = ring_sub(encode_fixed(np.cos(angle), scfg), p0[2], cfg)
        return [u, v]
    raise DealerError(k)


class Dealer:
    """Knows both parties' keys; produces party 1's corrections for a budget."""

    def __init__(self, seed: int, cfg: FixedCfg = DEFAULT_CFG):
        self.seed = int(seed)
        self.cfg = cfg

    def corrections(self, requests) -> list[list[np.ndarray]]:
        out = []
        for i, req in enumerate(requests):
            p0 = local_parts(req, 0, prf(self.seed, 0, i), self.cfg)
            p1 = local_parts(req, 1, prf(self.seed, 1, i), self.cfg)
            out.append(compute_corrections(req, p0, p1, self.cfg))
        return out

    def pools(self, requests) -> tuple["RandomnessPool", "RandomnessPool"]:
        """Both parties' pools for an in-process run."""
        requests = list(requests)
        return (
            RandomnessPool(0, self.seed, requests, cfg=self.cfg),
            RandomnessPool(1, self.seed, requests, self.corrections(requests), cfg=self.cfg),
        )


def pack_corrections(corrections) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<u8").tobytes() for group in corrections for a in group)


def unpack_corrections(data: bytes, requests) -> list[list[np.ndarray]]:
    flat = np.frombuffer(data, dtype="<u8").astype(np.uint64)
    out, pos = [], 0
    for req in requests:
        group = []
        for shape in correction_shapes(req):
            n = int(np.prod(shape, dtype=np.int64))
            group.append(flat[pos : pos + n].reshape(shape))
            pos += n
        out.append(group)
    if pos != flat.size:
        raise DealerError(f"correction payload has {flat.size} words, budget needs {pos}")
    return out


class RandomnessPool:
    """One party's sequentially consumed store of correlated randomness."""

    def __init__(self, party: int, seed: int, requests, corrections=None, cfg: FixedCfg = DEFAULT_CFG):
        if party == 1 and corrections is None:
            raise DealerError("party 1 needs dealer corrections")
        self.party = party
        self.seed = int(seed)
        self.requests = list(requests)
        self.corrections = corrections
        self.cfg = cfg
        self._cursor = 0
        self._consumed: set[int] = set()

    @property
    def remaining(self) -> int:
        return len(self.requests) - self._cursor

    def consume(self, index: int, kind: str, shape) -> tuple:
        if index in self._consumed:
            raise RandomnessReuseError(f"randomness item {index} already consumed")
        if index >= len(self.requests):
            raise PoolExhaustedError(f"pool of {len(self.requests)} items exhausted")
        req = self.requests[index]
        if req.kind != kind or req.shape != tuple(shape):
            raise DealerError(
                f"item {index} is {req.kind}{req.shape}, protocol asked for {kind}{tuple(shape)}"
            )
        self._consumed.add(index)
        parts = local_parts(req, self.party, prf(self.seed, self.party, index), self.cfg)
        if self.party == 1:
            parts = parts + tuple(self.corrections[index])
        return parts

    def take(self, kind: str, shape, param: int = 0) -> tuple:
        parts = self.consume(self._cursor, kind, shape)
        if self.requests[self._cursor].param != param:
            raise DealerError(f"item {self._cursor} parameter mismatch")
        self._cursor += 1
        return parts

    # Part order per kind (party 0 / party 1 identical):
    #   beaver (a, b, c)  square (a, a2)  matmul (A, B, C)
    #   band (a, b, c)    bit (r_bool, r_arith)  sine (t, u, v)
    def get(self, kind: str, shape, param: int = 0) -> tuple:
        return self.take(kind, tuple(shape), param)


class RecordingSource:
    """Stand-in pool for dry runs: records requests, hands out zeros."""

    def __init__(self, cfg: FixedCfg = DEFAULT_CFG):
        self.cfg = cfg
        self.requests: list[Request] = []

    def get(self, kind: str, shape, param: int = 0) -> tuple:
        req = Request(kind, tuple(shape), param)
        self.requests.append(req)
        return tuple(np.zeros(s, dtype=np.uint64) for s in _full_shapes(req))


def _full_shapes(req: Request) -> list[tuple]:
    s = req.shape
    if req.kind == "matmul":
        m, k, n = s
        return [(m, k), (k, n), (m, n)]
    if req.kind in ("square", "bit"):
        return [s, s]
    return [s, s, s]


# ---------------------------------------------------------------- standalone generators


def _gen(kind: str, count: int, shape, seed: int, cfg: FixedCfg, param: int = 0, force_t=None):
    shape = (count,) + tuple(shape)
    req = Request(kind, shape, param)
    p0 = local_parts(req, 0, prf(seed, 0, 0), cfg)
    p1 = local_parts(req, 1, prf(seed, 1, 0), cfg)
    corr = compute_corrections(req, p0, p1, cfg, force_t=force_t)
    if force_t is not None:
        # pin t by rewriting party 1's share of it
        M = np.uint64(sine_modulus(param))
        t1 = (np.uint64(force_t) + M - p0[0]) % M
        p1 = (t1,)
    return p0, p1 + tuple(corr)


def gen_beaver(count: int, shape=(), seed: int = 0, cfg: FixedCfg = DEFAULT_CFG):
    """Return ``((a0, b0, c0), (a1, b1, c1))`` with a leading axis of ``count`` triples."""
    return _gen("beaver", count, shape, seed, cfg)


def gen_matrix_beaver(dims, seed: int = 0, cfg: FixedCfg = DEFAULT_CFG):
    req = Request("matmul", tuple(dims))
    p0 = local_parts(req, 0, prf(seed, 0, 0), cfg)
    p1 = local_parts(req, 1, prf(seed, 1, 0), cfg)
    return p0, p1 + tuple(compute_corrections(req, p0, p1, cfg))


def gen_bool_triples(count: int, seed: int = 0, cfg: FixedCfg = DEFAULT_CFG):
    """Word-packed AND triples: each word carries ``l`` independent bit triples."""
    return _gen("band", count, (), seed, cfg)


def gen_sine_triples(count: int, frac: int = 16, seed: int = 0, cfg: FixedCfg = DEFAULT_CFG, force_t=None):
    """Return ``((t0, u0, v0), (t1, u1, v1))``; t-shares live in ``Z_{20 * 2^frac}``.

    ``force_t`` pins the raw fixed-point value of t (for tests).
    """
    return _gen("sine", count, (), seed, cfg, param=frac, force_t=force_t)
