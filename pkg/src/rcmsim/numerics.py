"""Dense linear-algebra primitives used by the projection and control layers.

All operators are tolerant of the small, dense matrices this package works
with (at most ~13 rows: 7 joints + 6 task dimensions); there is no sparse
path. Singular-value tolerances are relative to the largest singular value so
the pseudoinverse and the projector built from it stay mutually consistent.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMatrix, NotPositiveDefinite, RankDeficientConstraint

DEFAULT_RTOL = 1e-10


@dataclass(frozen=True)
class PinvOptions:
    """Pseudoinverse behaviour.

    relative_tolerance: singular values below ``tol * sigma_max`` are treated
        as zero.
    damping: when positive, return the damped inverse A^T (A A^T + d^2 I)^-1
        instead of truncating small singular values.
    """

    relative_tolerance: float = DEFAULT_RTOL
    damping: float = 0.0

    def __post_init__(self):
        if not self.relative_tolerance > 0:
            raise ValueError("relative_tolerance must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")


def _check_finite(A: np.ndarray, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return A


def pinv(A: np.ndarray, opts: PinvOptions | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD, with optional damping."""
    opts = opts or PinvOptions()
    A = _check_finite(A, "pinv input")
    if A.ndim != 2:
        raise InvalidMatrix("pinv expects a 2-D matrix")
    if A.size == 0:
        return np.zeros((A.shape[1], A.shape[0]))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if opts.damping > 0.0:
        inv_s = s / (s * s + opts.damping * opts.damping)
    else:
        cutoff = opts.relative_tolerance * (s[0] if s.size else 0.0)
        inv_s = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (Vt.T * inv_s) @ U.T


def projector_and_pinv(
    Jc: np.ndarray, opts: PinvOptions | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Null-space projector of a full-row-rank constraint Jacobian plus its
    pseudoinverse, from a single SVD.

    Returns (P, Jc_pinv) with P = I - Jc_pinv Jc symmetric and idempotent.
    Raises RankDeficientConstraint when any singular value falls below the
    relative tolerance (the constraint set is then ill-posed).
    """
    opts = opts or PinvOptions()
    Jc = _check_finite(Jc, "constraint Jacobian")
    if Jc.ndim != 2:
        raise InvalidMatrix("constraint Jacobian must be 2-D")
    k, n = Jc.shape
    if k == 0:
        return np.eye(n), np.zeros((n, 0))
    if k > n:
        raise RankDeficientConstraint(f"more constraints ({k}) than joints ({n})")
    U, s, Vt = np.linalg.svd(Jc, full_matrices=False)
    if s[-1] <= opts.relative_tolerance * s[0]:
        raise RankDeficientConstraint(
            f"constraint Jacobian rank < {k} (sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e})"
        )
    # P = I - V1 V1^T is symmetric by construction, unlike I - pinv(Jc) @ Jc.
    P = np.eye(n) - Vt.T @ Vt
    Jc_pinv = (Vt.T / s) @ U.T
    return P, Jc_pinv


def orth_projector(Jc: np.ndarray, opts: PinvOptions | None = None) -> np.ndarray:
    """Orthogonal projector onto the null space of ``Jc``."""
    P, _ = projector_and_pinv(Jc, opts)
    return P


def matrix_sqrt(M: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root of a symmetric positive-definite matrix."""
    M = _check_finite(M, "matrix_sqrt input")
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotPositiveDefinite("matrix_sqrt expects a square matrix")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > sym_tol * scale:
        raise NotPositiveDefinite("matrix_sqrt input is not symmetric")
    w, Q = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] <= 0.0:
        raise NotPositiveDefinite(f"matrix_sqrt input has eigenvalue {w[0]:.3e} <= 0")
    S = (Q * np.sqrt(w)) @ Q.T
    return 0.5 * (S + S.T)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = _check_finite(np.asarray(v, dtype=float).reshape(3), "skew input")
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )
