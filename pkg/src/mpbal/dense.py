"""Dense kernels executable under an emulated precision.

Every kernel takes a :class:`PrecisionContext`.  With the fp64 context the
rounding hook is the identity and the hot paths run native numpy.  In any
other format each scalar multiply, add, divide and square root is
individually rounded to the context's format (operation-level rounding),
and sums are accumulated sequentially left to right, matching the
conventional fl(x op y) = (x op y)(1+delta) model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import FP64, FloatFormat, RoundEvents, _round_values


class SingularPivotError(Exception):
    """A pivot rounded to zero during factorization or substitution."""


class NotPositiveDefiniteError(Exception):
    """A Cholesky pivot was nonpositive (definiteness lost, possibly to
    rounding or underflow); callers may shift and retry."""


class NoConvergenceError(Exception):
    """An iterative kernel hit its iteration cap."""


class PrecisionContext:
    """The precision attached to a computation: all per-operation rounding
    inside a kernel goes through this object."""

    def __init__(self, fmt: FloatFormat):
        self.fmt = fmt
        self.native = fmt.is_double
        self._emax = fmt.exponent_offset
        self._t = fmt.significand_bits
        self._max = fmt.max_finite

    def rnd(self, a, events: RoundEvents | None = None):
        """Round an intermediate array result to the context format."""
        if self.native:
            return a
        return _round_values(a, self.fmt, events)

    def rnd_s(self, x: float, events: RoundEvents | None = None) -> float:
        """Scalar fast path of :meth:`rnd` (pure python, no numpy overhead)."""
        if self.native:
            return x
        if x == 0.0 or not math.isfinite(x):
            return x
        _, e = math.frexp(x)
        qe = max(e - 1, 1 - self._emax) - self._t
        r = math.ldexp(round(math.ldexp(x, -qe)), qe)
        if abs(r) > self._max:
            if events is not None:
                events.overflow += 1
            return math.copysign(math.inf, x)
        if r == 0.0 and events is not None:
            events.underflow += 1
        return r

    def __repr__(self):
        return f"PrecisionContext({self.fmt.name})"


CTX64 = PrecisionContext(FP64)


# ---------------------------------------------------------------------------
# sequential accumulation primitives

def seq_dot(u, v, ctx: PrecisionContext, events=None) -> float:
    """Dot product with per-op rounding, accumulated left to right."""
    if ctx.native:
        return float(np.dot(u, v))
    p = ctx.rnd(np.asarray(u, float) * np.asarray(v, float), events)
    s = 0.0
    for x in p.tolist():
        s = ctx.rnd_s(s + x, events)
    return s


def seq_norm2(v, ctx: PrecisionContext, events=None) -> float:
    """Euclidean norm with per-op rounding (squares, sum, square root)."""
    if ctx.native:
        return float(np.linalg.norm(v))
    return ctx.rnd_s(math.sqrt(seq_dot(v, v, ctx, events)), events)


def _row_gemv(v, M, ctx: PrecisionContext, events=None):
    """v @ M with per-op rounding; accumulation runs over v's entries,
    vectorized across M's columns."""
    if ctx.native:
        return v @ M
    acc = np.zeros(M.shape[1])
    for i, vi in enumerate(v.tolist()):
        acc = ctx.rnd(acc + ctx.rnd(vi * M[i, :], events), events)
    return acc


def matmul(A, B, ctx: PrecisionContext, events=None):
    """Matrix product with every multiply and accumulation-add rounded.

    Accumulation is sequential left to right over the inner dimension.  In
    fp64 this is the native BLAS product.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    if ctx.native:
        return A @ B
    b_vec = B.ndim == 1
    Bm = B[:, None] if b_vec else B
    if A.shape[-1] != Bm.shape[0]:
        raise ValueError(f"inner dimensions disagree: {A.shape} x {B.shape}")
    C = np.zeros((A.shape[0], Bm.shape[1]))
    for k in range(Bm.shape[0]):
        C = ctx.rnd(C + ctx.rnd(A[:, k : k + 1] * Bm[k : k + 1, :], events), events)
    return C[:, 0] if b_vec else C


def matvec(A, x, ctx: PrecisionContext, events=None):
    return matmul(A, x, ctx, events)


def matvec_csc(M, x, ctx: PrecisionContext, events=None):
    """Sparse (CSC) matrix-vector product, columns accumulated in order."""
    if ctx.native:
        return M @ x
    y = np.zeros(M.shape[0])
    indptr, indices, data = M.indptr, M.indices, M.data
    for j in range(M.shape[1]):
        lo, hi = indptr[j], indptr[j + 1]
        if lo == hi or x[j] == 0.0:
            continue
        rows = indices[lo:hi]
        y[rows] = ctx.rnd(y[rows] + ctx.rnd(data[lo:hi] * x[j], events), events)
    return y


# ---------------------------------------------------------------------------
# factorizations

def lu_factor(A, ctx: PrecisionContext, events=None):
    """LU with partial pivoting, per-op rounding; returns (lu, ipiv).

    ``lu`` packs unit-lower L below the diagonal and U on/above it; ``ipiv``
    is the LAPACK-style sequence of row swaps.
    """
    A = np.asarray(A, float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("lu_factor needs a square matrix")
    lu = A.copy()
    ipiv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if lu[p, k] == 0.0:
            raise SingularPivotError(f"zero pivot in column {k}")
        if p != k:
            lu[[k, p], :] = lu[[p, k], :]
        ipiv[k] = p
        if k < n - 1:
            lu[k + 1 :, k] = ctx.rnd(lu[k + 1 :, k] / lu[k, k], events)
            outer = ctx.rnd(np.outer(lu[k + 1 :, k], lu[k, k + 1 :]), events)
            lu[k + 1 :, k + 1 :] = ctx.rnd(lu[k + 1 :, k + 1 :] - outer, events)
    return lu, ipiv


def lu_permutation(ipiv):
    """Row permutation p with A[p] = L U for the ipiv swap sequence."""
    p = np.arange(len(ipiv))
    for k, pk in enumerate(ipiv):
        if pk != k:
            p[[k, pk]] = p[[pk, k]]
    return p


def lu_solve(lu_piv, b, ctx: PrecisionContext, events=None):
    """Solve A x = b from packed LU factors, substitutions per-op rounded."""
    lu, ipiv = lu_piv
    n = lu.shape[0]
    x = np.array(b, dtype=float, copy=True)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    for k, pk in enumerate(ipiv):
        if pk != k:
            x[[k, pk], :] = x[[pk, k], :]
    for j in range(n - 1):  # unit lower forward substitution
        x[j + 1 :, :] = ctx.rnd(
            x[j + 1 :, :] - ctx.rnd(np.outer(lu[j + 1 :, j], x[j, :]), events), events
        )
    for j in range(n - 1, -1, -1):  # upper back substitution
        if lu[j, j] == 0.0:
            raise SingularPivotError(f"zero diagonal in U at {j}")
        x[j, :] = ctx.rnd(x[j, :] / lu[j, j], events)
        if j:
            x[:j, :] = ctx.rnd(
                x[:j, :] - ctx.rnd(np.outer(lu[:j, j], x[j, :]), events), events
            )
    return x[:, 0] if vec else x


@dataclass
class HouseholderQR:
    """Implicit Q (reflectors v with H = I - beta v v^T) plus R."""

    V: np.ndarray
    betas: np.ndarray
    R: np.ndarray
    shape: tuple


def qr_householder(A, ctx: PrecisionContext, events=None) -> HouseholderQR:
    """Householder QR with per-op rounding; requires rows >= cols."""
    A = np.asarray(A, float)
    m, n = A.shape
    if m < n:
        raise ValueError("qr_householder needs rows >= cols")
    R = A.copy()
    V = np.zeros((m, n))
    betas = np.zeros(n)
    for j in range(n):
        x = R[j:, j]
        normx = seq_norm2(x, ctx, events)
        if normx == 0.0:
            continue  # zero column: identity reflector, R diagonal stays 0
        alpha = -math.copysign(normx, x[0] if x[0] != 0 else 1.0)
        v = x.copy()
        v[0] = ctx.rnd_s(v[0] - alpha, events)
        vtv = seq_dot(v, v, ctx, events)
        if vtv == 0.0:
            continue
        beta = ctx.rnd_s(2.0 / vtv, events)
        w = ctx.rnd(beta * _row_gemv(v, R[j:, j:], ctx, events), events)
        R[j:, j:] = ctx.rnd(R[j:, j:] - ctx.rnd(np.outer(v, w), events), events)
        R[j, j] = alpha  # the reflector maps the column here exactly
        R[j + 1 :, j] = 0.0
        V[j:, j] = v
        betas[j] = beta
    return HouseholderQR(V, betas, np.triu(R[:n, :]), (m, n))


def apply_qt(qr: HouseholderQR, b, ctx: PrecisionContext, events=None):
    """Q^T b via the stored reflectors."""
    y = np.array(b, dtype=float, copy=True)
    for j in range(qr.shape[1]):
        if qr.betas[j] == 0.0:
            continue
        v = qr.V[j:, j]
        w = ctx.rnd_s(qr.betas[j] * seq_dot(v, y[j:], ctx, events), events)
        y[j:] = ctx.rnd(y[j:] - ctx.rnd(v * w, events), events)
    return y


def qr_solve(qr: HouseholderQR, b, ctx: PrecisionContext, events=None):
    """Least-squares solution of min ||b - A x||_2 from a Householder QR."""
    n = qr.shape[1]
    y = apply_qt(qr, b, ctx, events)
    return solve_triangular(qr.R[:n, :n], y[:n], ctx, lower=False, events=events)


def chol(A, ctx: PrecisionContext, events=None):
    """Upper-triangular C with A ~= C^T C, per-op rounded.

    Raises :class:`NotPositiveDefiniteError` on a nonpositive pivot.
    """
    A = np.asarray(A, float)
    n = A.shape[0]
    W = A.copy()
    C = np.zeros_like(W)
    for k in range(n):
        d = W[k, k]
        if not d > 0.0:
            raise NotPositiveDefiniteError(f"pivot {d!r} at step {k}")
        ck = ctx.rnd_s(math.sqrt(d), events)
        C[k, k] = ck
        if k < n - 1:
            row = ctx.rnd(W[k, k + 1 :] / ck, events)
            C[k, k + 1 :] = row
            W[k + 1 :, k + 1 :] = ctx.rnd(
                W[k + 1 :, k + 1 :] - ctx.rnd(np.outer(row, row), events), events
            )
    return C


def solve_triangular(T, B, ctx: PrecisionContext, lower=False, side="left",
                     unit_diagonal=False, events=None):
    """Triangular solve with per-op rounded substitution.

    side="left" solves T X = B; side="right" solves X T = B.
    """
    T = np.asarray(T, float)
    if side == "right":
        out = solve_triangular(T.T, np.asarray(B, float).T, ctx,
                               lower=not lower, side="left",
                               unit_diagonal=unit_diagonal, events=events)
        return out.T
    n = T.shape[0]
    x = np.array(B, dtype=float, copy=True)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    order = range(n) if lower else range(n - 1, -1, -1)
    for j in order:
        if not unit_diagonal:
            if T[j, j] == 0.0:
                raise SingularPivotError(f"zero diagonal at {j}")
            x[j, :] = ctx.rnd(x[j, :] / T[j, j], events)
        rest = slice(j + 1, n) if lower else slice(0, j)
        if rest.stop - (rest.start or 0) > 0:
            x[rest, :] = ctx.rnd(
                x[rest, :] - ctx.rnd(np.outer(T[rest, j], x[j, :]), events), events
            )
    return x[:, 0] if vec else x


# ---------------------------------------------------------------------------
# fp64 decompositions and condition numbers (diagnostics)

def svd(A):
    """Economy-size SVD in working (fp64) precision: returns (U, s, Vt)."""
    try:
        return np.linalg.svd(np.asarray(A, float), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(str(exc)) from exc


def cond_inf(A, max_n: int = 4096) -> float:
    """Infinity-norm condition number via an explicit inverse (desk scale)."""
    A = np.asarray(A, float)
    n = A.shape[0]
    if n > max_n:
        raise ValueError(f"explicit inverse capped at n={max_n}")
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularPivotError(str(exc)) from exc
    ninf = lambda M: float(np.max(np.sum(np.abs(M), axis=1)))
    return ninf(A) * ninf(Ainv)


def cond2_abs(A, max_n: int = 4096, iters: int = 100, rtol: float = 1e-10) -> float:
    """Scaling-insensitive condition number || |A^-1| |A| ||_2.

    The spectral norm comes from power iteration on the explicit product
    (deterministic all-ones start; the product is entrywise nonnegative, so
    the dominant direction is never missed).
    """
    A = np.asarray(A, float)
    n = A.shape[0]
    if n > max_n:
        raise ValueError(f"explicit inverse capped at n={max_n}")
    try:
        P = np.abs(np.linalg.inv(A)) @ np.abs(A)
    except np.linalg.LinAlgError as exc:
        raise SingularPivotError(str(exc)) from exc
    v = np.full(n, 1.0 / math.sqrt(n))
    sigma = 0.0
    for _ in range(iters):
        w = P @ v
        s = float(np.linalg.norm(w))
        if s == 0.0:
            return 0.0
        v = P.T @ (w / s)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return s
        v /= nv
        if abs(nv - sigma) <= rtol * nv:
            sigma = nv
            break
        sigma = nv
    return sigma
