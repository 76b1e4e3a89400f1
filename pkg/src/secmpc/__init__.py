"""Two-party additive secret sharing for private transformer inference."""

from .engine import RunResult, dry_run, measure, run_local
from .kernels import KernelConfig, serf, sgelu, slayernorm, ssoftmax_2quad, ssoftmax_exact
from .linear import smatmul, smul, ssquare
from .nonlinear import (
    GoldschmidtParams,
    gs_div,
    gs_rsqrt,
    sexp,
    slt,
    smax,
    srecip_newton,
    srsqrt_newton,
    ssin_period20,
    ssqrt_newton,
)
from .ring import FixedCfg, decode_fixed, encode_fixed
from .sharing import ArithShareTensor, BoolShareTensor, reconstruct, share
from .transport import CommStats, Session

__version__ = "0.1.0"

__all__ = [
    "ArithShareTensor", "BoolShareTensor", "CommStats", "FixedCfg", "GoldschmidtParams", "KernelConfig",
    "RunResult", "Session", "decode_fixed", "dry_run", "encode_fixed", "gs_div", "gs_rsqrt", "measure",
    "reconstruct", "run_local", "serf", "sexp", "sgelu", "share", "slayernorm", "slt", "smatmul", "smax",
    "smul", "srecip_newton", "srsqrt_newton", "ssin_period20", "ssoftmax_2quad", "ssoftmax_exact",
    "ssqrt_newton", "ssquare",
]  # fmt: skip
