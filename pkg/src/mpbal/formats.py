"""Software emulation of low-precision floating-point formats.

Values are carried in host doubles; "storing x in format f" means replacing
x by the nearest f-representable value (round-to-nearest, ties-to-even,
subnormals included, IEEE overflow to signed infinity).  All higher-level
kernels express "computing in precision u" through :func:`round_scalar` /
:func:`round_matrix`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class FloatFormat:
    """A binary floating-point format defined by its bit layout.

    ``significand_bits`` counts explicitly stored bits (the leading one is
    implicit), so the unit roundoff is 2^-(significand_bits+1).
    """

    name: str
    exponent_bits: int
    significand_bits: int
    supports_subnormals: bool = True
    # fp8-e4m3 convention: the top exponent code holds normal numbers and
    # only its all-ones mantissa pattern is reserved (NaN), so the largest
    # finite value is (2 - 2^-(t-1)) * 2^(offset+1) = 448.
    reserved_top_mantissa: bool = False
    # Display-only metadata for the format table (nominal decimal range
    # exponent and advertised Tflops); not used by any computation.
    nominal_range_exp: int | None = field(default=None, compare=False)
    tflops: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.exponent_bits < 1 or self.significand_bits < 1:
            raise ValueError("exponent_bits and significand_bits must be positive")

    @property
    def unit_roundoff(self) -> float:
        return 2.0 ** -(self.significand_bits + 1)

    @property
    def exponent_offset(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def min_normal(self) -> float:
        return 2.0 ** (1 - self.exponent_offset)

    @property
    def min_subnormal(self) -> float:
        return 2.0 ** (1 - self.exponent_offset - self.significand_bits)

    @property
    def max_finite(self) -> float:
        t = self.significand_bits
        if self.reserved_top_mantissa:
            return (2.0 - 2.0 ** -(t - 1)) * 2.0 ** (self.exponent_offset + 1)
        return (2.0 - 2.0 ** -t) * 2.0 ** self.exponent_offset

    @property
    def bit_width(self) -> int:
        return 1 + self.exponent_bits + self.significand_bits

    @property
    def is_double(self) -> bool:
        """True when rounding to this format is the identity on host doubles."""
        return self.exponent_bits >= 11 and self.significand_bits >= 52

    def __str__(self) -> str:
        return self.name


FP64 = FloatFormat("fp64", 11, 52, nominal_range_exp=308, tflops=67)
FP32 = FloatFormat("fp32", 8, 23, nominal_range_exp=38, tflops=989)
TF32 = FloatFormat("tf32", 8, 10, nominal_range_exp=38, tflops=989)
FP16 = FloatFormat("fp16", 5, 10, nominal_range_exp=5, tflops=1979)
BF16 = FloatFormat("bf16", 8, 7, nominal_range_exp=38, tflops=1979)
FP8_E5M2 = FloatFormat("fp8-e5m2", 5, 2, nominal_range_exp=5, tflops=3958)
FP8_E4M3 = FloatFormat(
    "fp8-e4m3", 4, 3, reserved_top_mantissa=True, nominal_range_exp=2, tflops=3958
)

_BUILTINS = (FP64, FP32, TF32, FP16, BF16, FP8_E5M2, FP8_E4M3)


def builtin_formats() -> list[FloatFormat]:
    """The seven formats of current GPU arithmetic, widest first."""
    return list(_BUILTINS)


def get_format(name: str) -> FloatFormat:
    """Look a built-in format up by name (also accepts e5m2/e4m3 shorthands)."""
    aliases = {"e5m2": "fp8-e5m2", "e4m3": "fp8-e4m3", "double": "fp64",
               "single": "fp32", "half": "fp16"}
    key = aliases.get(name.lower(), name.lower())
    for fmt in _BUILTINS:
        if fmt.name == key:
            return fmt
    raise KeyError(f"unknown float format {name!r}")


@dataclass
class RoundEvents:
    """Counts of range violations seen while rounding (flagged, not raised)."""

    overflow: int = 0
    underflow: int = 0

    def merge(self, other: "RoundEvents") -> None:
        self.overflow += other.overflow
        self.underflow += other.underflow


def _round_values(a: np.ndarray, fmt: FloatFormat,
                  events: RoundEvents | None = None) -> np.ndarray:
    """Vectorized round-to-nearest-even of float64 values into ``fmt``."""
    a = np.asarray(a, dtype=np.float64)
    if fmt.is_double:
        if events is not None:
            pass  # identity: nothing can overflow or underflow
        return a.copy()
    finite = np.isfinite(a)
    _, e = np.frexp(a)
    # |a| in [2^(e-1), 2^e); grid spacing 2^(e-1-t) for normals, constant
    # 2^(1-offset-t) in the subnormal range.
    qe = np.maximum(e - 1, 1 - fmt.exponent_offset) - fmt.significand_bits
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.ldexp(np.rint(np.ldexp(a, -qe)), qe)
    over = finite & (np.abs(out) > fmt.max_finite)
    if over.any():
        out = np.where(over, np.copysign(np.inf, a), out)
    if not fmt.supports_subnormals:
        flush = (out != 0) & (np.abs(out) < fmt.min_normal)
        if flush.any():
            out = np.where(flush, np.copysign(0.0, out), out)
    if events is not None:
        events.overflow += int(np.count_nonzero(over))
        events.underflow += int(np.count_nonzero(finite & (a != 0.0) & (out == 0.0)))
    return out


def round_scalar(x: float, fmt: FloatFormat,
                 events: RoundEvents | None = None) -> float:
    """Nearest ``fmt``-representable value of x (ties to even).

    Finite values beyond the format's rounding boundary become signed
    infinity (recorded in ``events`` when given); values below half the
    smallest subnormal become signed zero.  Infinities pass through.
    """
    if math.isnan(x):
        return x
    return float(_round_values(np.asarray(x, dtype=np.float64), fmt, events))


def round_matrix(A, fmt: FloatFormat) -> tuple:
    """Elementwise rounding of a dense array or scipy sparse matrix.

    Returns ``(rounded, events)``.  Sparse inputs keep their sparsity
    structure (entries that round to zero stay stored).
    """
    events = RoundEvents()
    if sp.issparse(A):
        out = A.copy()
        out.data = _round_values(out.data, fmt, events)
        return out, events
    return _round_values(np.asarray(A, dtype=np.float64), fmt, events), events


def format_range(fmt: FloatFormat) -> tuple[float, float]:
    """(smallest positive normal, largest finite) of the format."""
    return fmt.min_normal, fmt.max_finite
