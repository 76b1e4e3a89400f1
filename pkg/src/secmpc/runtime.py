"""A toy transformer encoder layer: plaintext reference, secure execution, file formats."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .approx import gelu_ref, gelu_segmented, layernorm_ref, two_quad_ref
from .kernels import KernelConfig, sgelu, slayernorm, ssoftmax_2quad
from .linear import smatmul_many
from .ring import DEFAULT_CFG, FixedCfg
from .sharing import ArithShareTensor, concat, mul_public, share
from .transport import Session

# LayerNorm deflation that keeps toy-scale variances inside the Goldschmidt window
TOY_KERNEL_CONFIG = KernelConfig(eta_layernorm=4.0)


class TensorFormatError(ValueError):
    pass


# ---------------------------------------------------------------- weights


@dataclass
class EncoderWeights:
    """Post-norm encoder layer. Head ``i`` owns columns ``i*dh:(i+1)*dh`` of the projections."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    heads: int = 4

    # parameters that are secret-shared; LayerNorm affine terms stay public
    SHARED = ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")

    def __post_init__(self):
        d = self.wq.shape[0]
        ffn = self.w1.shape[1]
        expect = {
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "w1": (d, ffn), "b1": (ffn,), "w2": (ffn, d), "b2": (d,),
            "ln1_gamma": (d,), "ln1_beta": (d,), "ln2_gamma": (d,), "ln2_beta": (d,),
        }  # fmt: skip
        for name, shape in expect.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")
        if d % self.heads:
            raise ValueError(f"width {d} is not divisible by {self.heads} heads")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def ffn(self) -> int:
        return self.w1.shape[1]

    def tensors(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "heads"}

    @classmethod
    def random(cls, d: int = 16, heads: int = 4, ffn: int = 64, seed: int = 42) -> "EncoderWeights":
        rng = np.random.default_rng(seed)

        def mat(m, n):
            return rng.normal(0.0, 1.0 / math.sqrt(m), (m, n))

        return cls(
            wq=mat(d, d), wk=mat(d, d), wv=mat(d, d), wo=mat(d, d),
            w1=mat(d, ffn), b1=rng.normal(0.0, 0.1, ffn),
            w2=mat(ffn, d), b2=rng.normal(0.0, 0.1, d),
            ln1_gamma=1.0 + rng.normal(0.0, 0.1, d), ln1_beta=rng.normal(0.0, 0.1, d),
            ln2_gamma=1.0 + rng.normal(0.0, 0.1, d), ln2_beta=rng.normal(0.0, 0.1, d),
            heads=heads,
        )  # fmt: skip

    @classmethod
    def zeros_identity_norm(cls, d: int = 16, heads: int = 4, ffn: int = 64, seed: int = 0) -> "EncoderWeights":
        """Random projections, zero biases, unit LayerNorm gain and zero shift."""
        w = cls.random(d, heads, ffn, seed)
        w.b1[:] = 0.0
        w.b2[:] = 0.0
        w.ln1_gamma[:] = 1.0
        w.ln2_gamma[:] = 1.0
        w.ln1_beta[:] = 0.0
        w.ln2_beta[:] = 0.0
        return w


# ---------------------------------------------------------------- plaintext


def encoder_layer_plain(x, w: EncoderWeights, cfg: KernelConfig = TOY_KERNEL_CONFIG, gelu: str = "exact") -> np.ndarray:
    """Double-precision reference. ``gelu="backend"`` uses the segmented fit instead of exact GeLU."""
    x = np.asarray(x, dtype=np.float64)
    dh = w.d // w.heads
    q, k, v = x @ w.wq, x @ w.wk, x @ w.wv
    heads = []
    for i in range(w.heads):
        sl = slice(i * dh, (i + 1) * dh)
        scores = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        heads.append(two_quad_ref(scores, cfg.softmax_c) @ v[:, sl])
    attn = np.concatenate(heads, axis=-1) @ w.wo
    h = layernorm_ref(x + attn, w.ln1_gamma, w.ln1_beta, cfg.variance_mode, cfg.epsilon)
    pre = h @ w.w1 + w.b1
    if gelu == "exact":
        act = gelu_ref(pre)
    else:
        act = gelu_segmented(pre, cfg.erf_backend, cfg.threshold_mode)
    out = act @ w.w2 + w.b2
    return layernorm_ref(h + out, w.ln2_gamma, w.ln2_beta, cfg.variance_mode, cfg.epsilon)


# ---------------------------------------------------------------- secure


def share_weights(w: EncoderWeights, rng: np.random.Generator, cfg: FixedCfg = DEFAULT_CFG):
    """Split the shared parameters; returns one dict per party (public terms included as arrays)."""
    out = ({}, {})
    for name, value in w.tensors().items():
        if name in EncoderWeights.SHARED:
            s0, s1 = share(value, rng, cfg)
            out[0][name], out[1][name] = s0, s1
        else:
            out[0][name] = out[1][name] = np.asarray(value, dtype=np.float64)
    for side in out:
        side["heads"] = w.heads
    return out


def encoder_layer_mpc(sess: Session, x: ArithShareTensor, w: dict, cfg: KernelConfig = TOY_KERNEL_CONFIG) -> ArithShareTensor:
    """One party's program for the encoder layer; every exchange is attributed to a kernel tag."""
    heads = int(w["heads"])
    d = x.shape[-1]
    dh = d // heads
    with sess.meter_scope("matmul"):
        q, k, v = smatmul_many(sess, [(x, w["wq"]), (x, w["wk"]), (x, w["wv"])])
        cols = [slice(i * dh, (i + 1) * dh) for i in range(heads)]
        scores = smatmul_many(sess, [(q[:, c], k[:, c].T) for c in cols])
    stacked = ArithShareTensor(x.party, np.stack([mul_public(s, 1.0 / math.sqrt(dh)).data for s in scores]), x.cfg)
    with sess.meter_scope("softmax_2quad"):
        probs = ssoftmax_2quad(sess, stacked, cfg)
    with sess.meter_scope("matmul"):
        ctx = smatmul_many(sess, [(probs[i], v[:, c]) for i, c in enumerate(cols)])
        (attn,) = smatmul_many(sess, [(concat(ctx, axis=-1), w["wo"])])
    with sess.meter_scope("layernorm"):
        h = slayernorm(sess, x + attn, w["ln1_gamma"], w["ln1_beta"], cfg)
    with sess.meter_scope("matmul"):
        (pre,) = smatmul_many(sess, [(h, w["w1"])])
    pre = pre + w["b1"]
    with sess.meter_scope("gelu"):
        act = sgelu(sess, pre, cfg)
    with sess.meter_scope("matmul"):
        (out,) = smatmul_many(sess, [(act, w["w2"])])
    out = out + w["b2"]
    with sess.meter_scope("layernorm"):
        return slayernorm(sess, h + out, w["ln2_gamma"], w["ln2_beta"], cfg)


def encoder_program(cfg: KernelConfig = TOY_KERNEL_CONFIG):
    def program(sess, inputs):
        x, w = inputs
        return encoder_layer_mpc(sess, x, w, cfg)

    return program


# ---------------------------------------------------------------- tensor files

TENSOR_MAGIC = b"SFT1"
SHARE_MAGIC = b"SFS1"
FORMAT_VERSION = 1


def _header_error(path, offset, msg):
    return TensorFormatError(f"{path}: {msg} at byte offset {offset}")


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise _header_error(self.path, self.pos, f"truncated {what} (need {n} bytes, have {len(self.data) - self.pos})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def done(self):
        if self.pos != len(self.data):
            raise _header_error(self.path, self.pos, f"{len(self.data) - self.pos} trailing bytes")


def _read_dims(r: _Reader) -> tuple:
    (rank,) = r.take(1, "rank")
    return tuple(struct.unpack(f"<{rank}Q", r.take(8 * rank, "dims"))) if rank else ()


def _check_magic(r: _Reader, magic: bytes):
    got = r.take(4, "magic")
    if got != magic:
        raise _header_error(r.path, 0, f"bad magic {got!r}, expected {magic!r}")
    (version,) = r.take(1, "version")
    if version != FORMAT_VERSION:
        raise _header_error(r.path, 4, f"unsupported version {version}")


def save_tensor(path, array) -> None:
    a = np.asarray(array, dtype="<f8")
    if a.ndim > 255:
        raise TensorFormatError("rank above 255 is not representable")
    header = TENSOR_MAGIC + bytes([FORMAT_VERSION, a.ndim]) + struct.pack(f"<{a.ndim}Q", *a.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(a).tobytes())


def load_tensor(path) -> np.ndarray:
    r = _Reader(Path(path).read_bytes(), path)
    _check_magic(r, TENSOR_MAGIC)
    dims = _read_dims(r)
    n = int(np.prod(dims, dtype=np.int64))
    payload = r.take(8 * n, "payload")
    r.done()
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def save_share(path, s: ArithShareTensor) -> None:
    a = np.asarray(s.data, dtype="<u8")
    header = SHARE_MAGIC + bytes([FORMAT_VERSION, s.party, s.cfg.l, s.cfg.f, a.ndim]) + struct.pack(f"<{a.ndim}Q", *a.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(a).tobytes())


def load_share(path) -> ArithShareTensor:
    r = _Reader(Path(path).read_bytes(), path)
    _check_magic(r, SHARE_MAGIC)
    party, l, f = r.take(3, "party/ring header")
    dims = _read_dims(r)
    n = int(np.prod(dims, dtype=np.int64))
    payload = r.take(8 * n, "payload")
    r.done()
    data = np.frombuffer(payload, dtype="<u8").astype(np.uint64).reshape(dims)
    return ArithShareTensor(party, data, FixedCfg(l, f))


def read_manifest(path) -> dict:
    """``name = relative/path`` lines; blank lines and ``#`` comments ignored."""
    path = Path(path)
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TensorFormatError(f"{path}:{lineno}: expected 'name = path'")
        name, rel = (p.strip() for p in line.split("=", 1))
        out[name] = path.parent / rel
    return out


def write_manifest(path, entries: dict) -> None:
    lines = [f"{name} = {rel}" for name, rel in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_weights(w: EncoderWeights, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, value in w.tensors().items():
        save_tensor(directory / f"{name}.sft", value)
        entries[name] = f"{name}.sft"
    save_tensor(directory / "heads.sft", np.array(float(w.heads)))
    entries["heads"] = "heads.sft"
    manifest = directory / "weights.manifest"
    write_manifest(manifest, entries)
    return manifest


def load_weights(manifest) -> EncoderWeights:
    entries = read_manifest(manifest)
    values = {name: load_tensor(p) for name, p in entries.items()}
    heads = int(values.pop("heads", 4))
    return EncoderWeights(**values, heads=heads)
