"""Dense real-matrix utilities with explicit numerical tolerances.

Every exact relation used by the certificates (``⪯ 0``, ``=``, image
inclusion) is decided here against one of three tolerances bundled in
:class:`Tolerance`.  Functions never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import AsymmetricBeyondTol, Infeasible, NonSquare, RowMismatch

__all__ = [
    "Tolerance", "DEFAULT_TOL", "as_matrix", "block_diag",
    "symmetric_part", "max_eigenvalue", "min_eigenvalue",
    "is_negative_semidefinite", "is_positive_definite",
    "numerical_rank", "image_subset", "solve_factor", "pseudoinverse",
    "kernel_basis", "schur_complement", "is_injective", "max_abs",
]


@dataclass(frozen=True)
class Tolerance:
    """Slack used to realize exact matrix relations in floating point.

    Parameters
    ----------
    definiteness_tol : float
        Allowed eigenvalue slack for semidefiniteness tests.
    rank_tol : float
        Singular values below ``rank_tol * sigma_max`` count as zero.
    residual_tol : float
        Relative residual allowed for equalities and least-squares solves.
    """

    definiteness_tol: float = 1e-9
    rank_tol: float = 1e-10
    residual_tol: float = 1e-9

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value >= 0 and np.isfinite(value)):
                raise ValueError(f"{name} must be a finite nonnegative number, got {value!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"definiteness_tol", "rank_tol", "residual_tol"}
        if unknown:
            raise ValueError(f"unknown tolerance keys: {sorted(unknown)}")
        return cls(**data)


DEFAULT_TOL = Tolerance()


def as_matrix(a, rows=None, cols=None, name="matrix"):
    """Coerce ``a`` to a finite 2-D float array, optionally checking its shape.

    Scalars become 1x1 and 1-D input is read as a column.
    """
    m = np.asarray(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(-1, 1)
    elif m.ndim != 2:
        raise ValueError(f"{name} must be at most 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    if rows is not None and m.shape[0] != rows:
        raise RowMismatch(f"{name} must have {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise RowMismatch(f"{name} must have {cols} columns, got {m.shape[1]}")
    return m


def block_diag(*blocks):
    """Block-diagonal stacking that keeps zero-sized blocks' dimensions."""
    mats = [np.asarray(b, dtype=float) if np.ndim(b) == 2 else as_matrix(b) for b in blocks]
    rows = sum(b.shape[0] for b in mats)
    cols = sum(b.shape[1] for b in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in mats:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def max_abs(a):
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


def symmetric_part(S, tol=DEFAULT_TOL):
    """Return ``(S + S^T)/2`` after gating the asymmetry of ``S``."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {S.shape}")
    if S.size == 0:
        return S.copy()
    asym = max_abs(S - S.T)
    if asym > tol.residual_tol * (1.0 + max_abs(S)):
        raise AsymmetricBeyondTol(f"matrix asymmetry {asym:.3e} exceeds tolerance")
    return 0.5 * (S + S.T)


def max_eigenvalue(S, tol=DEFAULT_TOL):
    """Largest eigenvalue of the symmetric part (``-inf`` for an empty matrix)."""
    H = symmetric_part(S, tol)
    if H.size == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(H)[-1])


def min_eigenvalue(S, tol=DEFAULT_TOL):
    H = symmetric_part(S, tol)
    if H.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(H)[0])


def is_negative_semidefinite(S, tol=DEFAULT_TOL):
    return max_eigenvalue(S, tol) <= tol.definiteness_tol


def is_positive_definite(S, tol=DEFAULT_TOL):
    """True iff the smallest eigenvalue clears ``definiteness_tol``.

    The zero matrix is therefore never positive definite.
    """
    return min_eigenvalue(S, tol) > tol.definiteness_tol


def numerical_rank(A, tol=DEFAULT_TOL):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol.rank_tol * s[0]))


def is_injective(P, tol=DEFAULT_TOL):
    P = np.asarray(P, dtype=float)
    return numerical_rank(P, tol) == P.shape[1]


def image_subset(A, B, tol=DEFAULT_TOL):
    """Decide ``im A ⊆ im B`` by comparing ``rank B`` with ``rank [B | A]``.

    For a sum of images ``im B1 + im B2`` pass ``np.hstack([B1, B2])`` as ``B``.
    """
    A = as_matrix(A, name="A")
    B = as_matrix(B, name="B")
    if A.shape[0] != B.shape[0]:
        raise RowMismatch(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    if A.shape[1] == 0:
        return True
    return numerical_rank(B, tol) == numerical_rank(np.hstack([B, A]), tol)


def pseudoinverse(A, tol=DEFAULT_TOL):
    """Moore-Penrose pseudoinverse by SVD with a relative ``rank_tol`` cutoff."""
    A = as_matrix(A, name="A")
    m, n = A.shape
    if A.size == 0:
        return np.zeros((n, m))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros((n, m))
    keep = s > tol.rank_tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def kernel_basis(A, tol=DEFAULT_TOL):
    """Orthonormal basis of ``ker A`` as columns (``n x 0`` when trivial)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n)
    r = numerical_rank(A, tol)
    if r == 0:
        return np.eye(n)
    _, _, Vt = np.linalg.svd(A, full_matrices=True)
    return Vt[r:].T.copy()


def solve_factor(Y, X, tol=DEFAULT_TOL):
    """Minimum-norm ``G`` with ``X @ G = Y``.

    Raises
    ------
    Infeasible
        If the least-squares residual exceeds
        ``residual_tol * (1 + ||Y||_F)``.
    """
    Y = as_matrix(Y, name="Y")
    X = as_matrix(X, name="X")
    if X.shape[0] != Y.shape[0]:
        raise RowMismatch(f"row counts differ: X has {X.shape[0]}, Y has {Y.shape[0]}")
    G = pseudoinverse(X, tol) @ Y
    residual = float(np.linalg.norm(X @ G - Y)) if Y.size else 0.0
    if residual > tol.residual_tol * (1.0 + float(np.linalg.norm(Y))):
        raise Infeasible(f"X G = Y has no solution (residual {residual:.3e})",
                         step="solve_factor", residual=residual)
    return G


def schur_complement(S, k):
    """Schur complement of the trailing block: ``S11 - S12 S22^{-1} S21``.

    ``k`` is the size of the leading block ``S11``.
    """
    S = np.asarray(S, dtype=float)
    S11, S12 = S[:k, :k], S[:k, k:]
    S21, S22 = S[k:, :k], S[k:, k:]
    if S22.size == 0:
        return S11.copy()
    return S11 - S12 @ np.linalg.solve(S22, S21)
