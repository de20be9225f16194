"""Dense linear-algebra core.

Validated float64 matrices, a one-sided Jacobi SVD (the basis for every
condition number in the package), and a checked SPD solver.  Everything is
desk scale: dimensions are capped at 4096 and all routines are
deterministic for a given input.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from equilab import _kernels
from equilab.errors import (
    ConvergenceError,
    DimensionError,
    NonFiniteError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    RankDeficientError,
)

MAX_DIM = 4096
MAX_SWEEPS = 60
# Absolute Gram threshold scale: off-diagonal entries of B^T B are driven
# below _ABS_TOL_SCALE * ||A||_F^2.
_ABS_TOL_SCALE = 1e-14
# Relative floor: |<b_i,b_j>| is also driven below rel_tol*||b_i||*||b_j||,
# which keeps U orthonormal even when a pair of singular values is tiny
# compared to ||A||_F.  32*eps*len(column) sits safely above the rounding
# noise of the pair dot products.
_REL_TOL_FLOOR = 1e-14

KERNEL_BACKEND = _kernels.BACKEND


def _validated(a, name="matrix"):
    """Coerce to a fresh validated float64 2-d array."""
    if isinstance(a, Matrix):
        return a.array.copy()
    arr = np.array(a, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got ndim={arr.ndim}")
    n, m = arr.shape
    if n < 1 or m < 1:
        raise DimensionError(f"{name} must be non-empty, got shape {arr.shape}")
    if n > MAX_DIM or m > MAX_DIM:
        raise DimensionError(f"{name} exceeds the {MAX_DIM} dimension cap: {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


class Matrix:
    """Immutable dense float64 matrix with validated construction.

    Rejects non-finite entries, empty axes, and anything larger than
    4096 on a side.  The underlying array is read-only; use .array for
    numpy interop.
    """

    __slots__ = ("_a",)

    def __init__(self, data):
        arr = _validated(data)
        arr.flags.writeable = False
        object.__setattr__(self, "_a", arr)

    @property
    def array(self):
        return self._a

    @property
    def rows(self):
        return self._a.shape[0]

    @property
    def cols(self):
        return self._a.shape[1]

    @property
    def shape(self):
        return self._a.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._a if not copy else self._a.copy()
        return self._a.astype(dtype)

    def __getitem__(self, key):
        return self._a[key]

    def __eq__(self, other):
        if not isinstance(other, Matrix):
            return NotImplemented
        return self._a.shape == other._a.shape and bool(np.all(self._a == other._a))

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols})"

    def to_text(self, path):
        write_matrix_text(path, self._a)

    @classmethod
    def from_text(cls, path):
        return cls(read_matrix_text(path))


def write_matrix_text(path, a):
    """Write a matrix as text: 'rows cols' header line, one row per line.

    Floats are written with repr so a read-back round-trips exactly.
    """
    arr = _validated(a)
    lines = [f"{arr.shape[0]} {arr.shape[1]}"]
    for row in arr:
        lines.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_text(path):
    """Read the text format written by write_matrix_text.

    Rejects ragged rows, bad headers, and non-finite values.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DimensionError(f"{path}: empty matrix file")
    head = lines[0].split()
    if len(head) != 2:
        raise DimensionError(f"{path}: header must be 'rows cols', got {lines[0]!r}")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError:
        raise DimensionError(f"{path}: non-integer header {lines[0]!r}") from None
    if len(lines) - 1 != n:
        raise DimensionError(f"{path}: expected {n} rows, found {len(lines) - 1}")
    out = np.empty((n, m), dtype=np.float64)
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != m:
            raise DimensionError(f"{path}: row {i} has {len(parts)} entries, expected {m}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise NonFiniteError(f"{path}: row {i} has a non-numeric entry") from None
    return _validated(out, name=str(path))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD A = u @ diag(sigma) @ vt with sigma sorted descending."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self):
        return (self.u * self.sigma) @ self.vt


def _complete_zero_columns(u, sigma):
    """Replace columns of u whose sigma is exactly zero with unit vectors
    orthogonal to the rest, chosen deterministically from the standard
    basis by largest residual (ties break toward the lower index)."""
    zero = np.flatnonzero(sigma == 0.0)
    if zero.size == 0:
        return u
    p = u.shape[0]
    active = [j for j in range(u.shape[1]) if sigma[j] > 0.0]
    for j in zero:
        if active:
            ua = u[:, active]
            scores = 1.0 - np.einsum("ij,ij->i", ua, ua)
        else:
            scores = np.ones(p)
        pick = int(np.argmax(scores))
        v = np.zeros(p)
        v[pick] = 1.0
        for _ in range(2):  # twice-is-enough re-orthogonalization
            if active:
                ua = u[:, active]
                v = v - ua @ (ua.T @ v)
        v /= np.linalg.norm(v)
        u[:, j] = v
        active.append(j)
    return u


def svd(a):
    """One-sided Jacobi SVD.

    Returns SvdResult(u, sigma, vt) with u of shape (n, k), sigma of
    length k = min(n, m) sorted descending, and vt of shape (k, m).
    Singular vectors are sign-canonicalized: the first entry of each right
    singular vector above 1e-12 of its max magnitude is positive.

    Raises ConvergenceError if 60 cyclic sweeps do not converge (not
    observed for finite float64 input at desk scale).
    """
    arr = _validated(a)
    n, m = arr.shape
    fro_sq = float(np.sum(arr * arr))
    transposed = n < m
    # Factor the tall orientation; bt rows are its columns.
    target = arr if not transposed else arr.T
    p, q = target.shape
    bt = np.ascontiguousarray(target.T)
    vt = np.eye(q)
    abs_tol = _ABS_TOL_SCALE * fro_sq
    rel_tol = max(_REL_TOL_FLOOR, 32.0 * np.finfo(np.float64).eps * p)
    sweeps, converged = _kernels.jacobi_sweeps(bt, vt, rel_tol, abs_tol, MAX_SWEEPS)
    if not converged:
        raise ConvergenceError(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")

    sig = np.sqrt(np.einsum("ij,ij->i", bt, bt))
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    safe = np.where(sig > 0.0, sig, 1.0)
    u_t = (bt[order] / safe[:, None]).T  # (p, q) orthonormal columns
    u_t = _complete_zero_columns(u_t, sig)
    vt_t = vt[order]  # (q, q), rows are right singular vectors of target

    if transposed:
        u, vt_out = vt_t.T, u_t.T
    else:
        u, vt_out = u_t, vt_t

    # Sign convention keyed to the rows of vt.
    for i in range(vt_out.shape[0]):
        row = vt_out[i]
        thresh = 1e-12 * np.max(np.abs(row))
        idx = np.flatnonzero(np.abs(row) > thresh)
        lead = idx[0] if idx.size else 0
        if row[lead] < 0.0:
            vt_out[i] = -row
            u[:, i] = -u[:, i]

    u = np.ascontiguousarray(u)
    vt_out = np.ascontiguousarray(vt_out)
    for x in (u, sig, vt_out):
        x.flags.writeable = False
    return SvdResult(u=u, sigma=sig, vt=vt_out)


def condition_number(a, rank_tol=1e-12):
    """Spectral condition number sigma_max / sigma_min via the Jacobi SVD.

    Raises RankDeficientError (carrying the extreme singular values) when
    sigma_min <= rank_tol * sigma_max, including for the zero matrix.
    rank_tol must lie in (0, 1).
    """
    if not (0.0 < rank_tol < 1.0):
        raise DimensionError(f"rank_tol must be in (0, 1), got {rank_tol!r}")
    res = svd(a)
    s_max = float(res.sigma[0])
    s_min = float(res.sigma[-1])
    if s_min <= rank_tol * s_max or s_max == 0.0:
        raise RankDeficientError(s_max, s_min, rank_tol)
    return s_max / s_min


def pseudo_condition_number(sigma, rank_tol):
    """sigma_max over the smallest singular value above rank_tol*sigma_max.

    Helper for rank-aware comparisons; returns (value, n_surviving).
    For an all-zero spectrum returns (nan, 0).
    """
    sig = np.asarray(sigma, dtype=np.float64)
    s_max = float(sig[0]) if sig.size else 0.0
    if s_max == 0.0:
        return float("nan"), 0
    keep = sig > rank_tol * s_max
    n_keep = int(np.count_nonzero(keep))
    s_min = float(sig[keep][-1])
    return s_max / s_min, n_keep


def matmul(a, b):
    av = _validated(a, "left operand")
    bv = _validated(b, "right operand")
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"cannot multiply {av.shape} by {bv.shape}")
    return av @ bv


def transpose(a):
    return _validated(a).T.copy()


def frobenius_norm(a):
    return float(np.sqrt(np.sum(_validated(a) ** 2)))


def row_norms2(a):
    """Euclidean norm of each row."""
    arr = _validated(a)
    return np.sqrt(np.einsum("ij,ij->i", arr, arr))


def col_norms2(a):
    """Euclidean norm of each column."""
    arr = _validated(a)
    return np.sqrt(np.einsum("ij,ij->j", arr, arr))


def solve_spd(a, b, sym_tol=1e-12):
    """Solve A x = b for symmetric positive definite A.

    Checks symmetry to sym_tol (relative, Frobenius), factors by Cholesky
    (failure raises NotPositiveDefiniteError), and applies one step of
    iterative refinement.  In test builds the residual is asserted to be
    <= 1e-9 * max(1, ||b||).
    """
    av = _validated(a, "A")
    n, m = av.shape
    if n != m:
        raise DimensionError(f"A must be square, got {av.shape}")
    bv = np.asarray(b, dtype=np.float64)
    squeeze = bv.ndim == 1
    if squeeze:
        bv = bv[:, None]
    if bv.shape[0] != n:
        raise DimensionError(f"b has {bv.shape[0]} rows, A is {n}x{n}")
    if not np.isfinite(bv).all():
        raise NonFiniteError("b contains non-finite entries")
    asym = np.linalg.norm(av - av.T)
    if asym > sym_tol * max(np.linalg.norm(av), np.finfo(np.float64).tiny):
        raise NotSymmetricError(f"A is not symmetric: ||A-A^T||={asym!r}")
    av = 0.5 * (av + av.T)
    try:
        factor = cho_factor(av, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:  # scipy reuses numpy's LinAlgError
        raise NotPositiveDefiniteError(str(exc)) from exc
    x = cho_solve(factor, bv, check_finite=False)
    # one refinement step in working precision
    r = bv - av @ x
    x = x + cho_solve(factor, r, check_finite=False)
    resid = float(np.linalg.norm(bv - av @ x))
    assert resid <= 1e-9 * max(1.0, float(np.linalg.norm(bv))), (
        f"solve_spd residual {resid!r} exceeds tolerance"
    )
    return x[:, 0] if squeeze else x
