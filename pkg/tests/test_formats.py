import math

import numpy as np
import pytest
import scipy.sparse as sp

from mpbal.formats import (
    FP16,
    FP32,
    FP64,
    RoundEvents,
    builtin_formats,
    format_range,
    get_format,
    round_matrix,
    round_scalar,
)

# The published table row per format: (size bits, decimal range exponent,
# unit roundoff to one significant digit).
TABLE = {
    "fp64": (64, 308, 1e-16),
    "fp32": (32, 38, 6e-8),
    "tf32": (19, 38, 5e-4),
    "fp16": (16, 5, 5e-4),
    "bf16": (16, 38, 4e-3),
    "fp8-e5m2": (8, 5, 1e-1),
    "fp8-e4m3": (8, 2, 6e-2),
}

EXACT_U = {
    "fp64": 2.0**-53,
    "fp32": 2.0**-24,
    "tf32": 2.0**-11,
    "fp16": 2.0**-11,
    "bf16": 2.0**-8,
    "fp8-e5m2": 2.0**-3,
    "fp8-e4m3": 2.0**-4,
}


def one_sig(x: float) -> float:
    return float(f"{x:.0e}")


def test_builtin_roster():
    fmts = builtin_formats()
    assert [f.name for f in fmts] == list(TABLE)
    layouts = [(f.exponent_bits, f.significand_bits) for f in fmts]
    assert layouts == [(11, 52), (8, 23), (8, 10), (5, 10), (8, 7), (5, 2), (4, 3)]
    assert all(f.supports_subnormals for f in fmts)


@pytest.mark.parametrize("fmt", builtin_formats(), ids=str)
def test_table_reproduction(fmt):
    bits, range_exp, u_table = TABLE[fmt.name]
    assert fmt.bit_width == bits
    assert fmt.unit_roundoff == EXACT_U[fmt.name]
    assert one_sig(fmt.unit_roundoff) == u_table
    # The table's range column is order-of-magnitude only; require agreement
    # within its one-significant-digit rounding (<= 0.66 decades covers the
    # fp8-e4m3 448-vs-10^2 convention gap).
    assert abs(math.log10(fmt.max_finite) - range_exp) <= 0.66
    assert fmt.nominal_range_exp == range_exp


def test_format_range_values():
    assert format_range(FP64) == (2.0**-1022, (2 - 2.0**-52) * 2.0**1023)
    assert format_range(FP16)[1] == 65504.0
    assert math.isclose(format_range(FP32)[1], 3.4028234663852886e38)
    assert format_range(get_format("e4m3"))[1] == 448.0
    assert format_range(get_format("e5m2"))[1] == 57344.0
    # fp64 endpoints match the usual decimal anchors
    assert math.isclose(format_range(FP64)[0], 2e-308, rel_tol=0.2)
    assert math.isclose(format_range(FP64)[1], 1.79e308, rel_tol=0.2)


def test_get_format_aliases():
    assert get_format("HALF") is FP16
    assert get_format("fp8-e4m3").reserved_top_mantissa
    with pytest.raises(KeyError):
        get_format("fp13")


def test_round_scalar_basics():
    assert round_scalar(1.0, FP16) == 1.0
    assert round_scalar(1 + 2.0**-12, FP16) == 1.0
    # exact midpoint between 1 and 1 + 2^-10: even mantissa wins
    assert round_scalar(1 + 2.0**-11, FP16) == 1.0
    assert round_scalar(3 * 2.0**-11, FP16) == 2.0**-10 + 2.0**-11  # representable

    ev = RoundEvents()
    assert round_scalar(65520.0, FP16, ev) == math.inf
    assert ev.overflow == 1
    assert round_scalar(65519.999, FP16) == 65504.0
    assert round_scalar(-65520.0, FP16) == -math.inf

    # below half the smallest subnormal: signed zero
    z = round_scalar(-(2.0**-26), FP16)
    assert z == 0.0 and math.copysign(1.0, z) == -1.0

    # infinities pass through unflagged
    ev = RoundEvents()
    assert round_scalar(math.inf, FP16, ev) == math.inf
    assert ev.overflow == 0


def test_round_matrix_events_and_sparsity():
    A, ev = round_matrix(np.zeros((3, 3)), get_format("e4m3"))
    assert not A.any() and ev.overflow == 0 and ev.underflow == 0

    I, ev = round_matrix(np.eye(4), get_format("e4m3"))
    assert np.array_equal(I, np.eye(4))

    A = np.array([[1.0, 1e6], [0.25, -2.0]])
    R, ev = round_matrix(A, FP16)
    assert R[0, 1] == math.inf and ev.overflow == 1
    assert R[0, 0] == 1.0 and R[1, 0] == 0.25 and R[1, 1] == -2.0

    S = sp.csc_array(np.array([[1e-30, 0.0], [0.0, 3.0]]))
    RS, ev = round_matrix(S, FP16)
    assert RS.nnz == S.nnz  # pattern kept even though an entry flushed to zero
    assert ev.underflow == 1
    assert RS[1, 1] == 3.0


def _sample_reals(n, rng):
    """Reals spanning subnormal, normal and overflow ranges of fp16."""
    parts = [
        rng.uniform(-70000, 70000, n // 4),
        rng.uniform(-1e-4, 1e-4, n // 4),
        rng.uniform(-6.2e-5, 6.2e-5, n // 8),  # around the subnormal boundary
        np.ldexp(rng.uniform(-1, 1, n // 4), rng.integers(-26, 18, n // 4)),
        rng.uniform(65400, 65700, n - 4 * (n // 4) - n // 8 + n // 4),
    ]
    return np.concatenate(parts)


def test_fp16_matches_ieee_binary16_reference():
    rng = np.random.default_rng(1234)
    x = _sample_reals(200_000, rng)
    ours, _ = round_matrix(x, FP16)
    with np.errstate(over="ignore"):
        ref = np.float16(x).astype(np.float64)
    assert np.array_equal(ours, ref)


def test_fp16_tie_oracle_over_bit_patterns():
    # Midpoints between consecutive finite fp16 values must round to the
    # neighbor whose stored bit pattern is even.
    codes = np.arange(0, 0x7C00, dtype=np.uint16)  # all positive finite fp16
    vals = codes.view(np.float16).astype(np.float64)
    mids = 0.5 * (vals[:-1] + vals[1:])
    expect = np.where(codes[:-1] % 2 == 0, vals[:-1], vals[1:])
    got, _ = round_matrix(mids, FP16)
    assert np.array_equal(got, expect)
    # and the top boundary: midpoint to the would-be next value is infinity
    assert round_scalar(65520.0, FP16) == math.inf


@pytest.mark.parametrize("fmt", builtin_formats(), ids=str)
def test_rounding_properties(fmt):
    rng = np.random.default_rng(99)
    x = np.ldexp(rng.uniform(-1, 1, 5000), rng.integers(-30, 20, 5000))
    r1, _ = round_matrix(x, fmt)
    r2, _ = round_matrix(r1, fmt)
    assert np.array_equal(r1, r2)  # idempotent

    neg, _ = round_matrix(-x, fmt)
    assert np.array_equal(neg, -r1)  # odd symmetry

    r_sorted = r1[np.argsort(x)]
    assert np.all(r_sorted[:-1] <= r_sorted[1:])  # monotone

    # relative error bound in the normal range
    normal = (np.abs(x) >= fmt.min_normal) & np.isfinite(r1)
    err = np.abs(r1[normal] - x[normal])
    assert np.all(err <= fmt.unit_roundoff * np.abs(x[normal]))
