"""Dense covariance and spectral primitives used by every estimator."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, InvalidInput, NotPSD, RankDeficient

RANK_TOL = 1e-10
PSD_TOL = 1e-8


@dataclass(frozen=True)
class SvdTriple:
    """Truncated SVD ``M ~ left @ diag(singulars) @ right.T``."""

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray

    @property
    def rank(self):
        return self.singulars.shape[0]


def as_data_matrix(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise InvalidInput(f"{name} must be a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput(f"{name} contains non-finite values")
    return X


def symmetrize(A):
    return 0.5 * (A + A.T)


def sample_covariance(X, center=False):
    """Return ``X.T @ X / n``, optionally after column-centering."""
    X = as_data_matrix(X)
    if center:
        X = X - X.mean(axis=0)
    return symmetrize(X.T @ X) / X.shape[0]


def cross_covariance(X, Y, center=False):
    """Return ``X.T @ Y / n`` with the same centering convention as
    :func:`sample_covariance`."""
    X = as_data_matrix(X, "X")
    Y = as_data_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if center:
        X = X - X.mean(axis=0)
        Y = Y - Y.mean(axis=0)
    return X.T @ Y / X.shape[0]


def ledoit_wolf_shrinkage(X, center=True):
    """Ledoit-Wolf estimate toward ``mu * I``.

    Returns
    -------
    sigma : ndarray (d, d)
        ``(1 - alpha) * S + alpha * mu * I``.
    alpha : float
        Shrinkage intensity in ``[0, 1]``.
    """
    X = as_data_matrix(X)
    n, d = X.shape
    if n < 2:
        raise InvalidInput("Ledoit-Wolf needs at least two samples")
    if center:
        X = X - X.mean(axis=0)
    S = symmetrize(X.T @ X) / n
    mu = np.trace(S) / d
    target_gap = S.copy()
    target_gap[np.diag_indices(d)] -= mu
    denom = np.sum(target_gap ** 2)
    # sum_k ||x_k x_k^T - S||_F^2 = sum_k ||x_k||^4 - n ||S||_F^2
    row_sq = np.sum(X ** 2, axis=1)
    beta = (np.sum(row_sq ** 2) - n * np.sum(S ** 2)) / n ** 2
    beta = max(beta, 0.0)
    if denom <= 0.0:
        alpha = 0.0
    else:
        alpha = min(1.0, beta / denom)
    if alpha >= 1.0:
        return mu * np.eye(d), 1.0
    sigma = (1.0 - alpha) * S
    sigma[np.diag_indices(d)] += alpha * mu
    return sigma, alpha


def ledoit_wolf(X, center=True):
    return ledoit_wolf_shrinkage(X, center=center)[0]


def _eigh_psd(A, tol):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {A.shape}")
    w, Q = np.linalg.eigh(symmetrize(A))
    top = max(np.max(np.abs(w)), 0.0) if w.size else 0.0
    if w.size and w[0] < -tol * top:
        raise NotPSD(f"smallest eigenvalue {w[0]:.3e} below -{tol:g} * {top:.3e}")
    return w, Q, top


def sym_sqrt(A, tol=PSD_TOL):
    """Principal PSD square root; small negative eigenvalues are clamped to 0."""
    w, Q, _ = _eigh_psd(A, tol)
    return symmetrize((Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T)


def sym_inv_sqrt(A, rank_tol=RANK_TOL, psd_tol=PSD_TOL):
    """Pseudo-inverse square root of a PSD matrix.

    Eigenvalues above ``rank_tol * lambda_max`` map to ``lambda ** -0.5``,
    the rest to zero.
    """
    w, Q, top = _eigh_psd(A, psd_tol)
    keep = w > rank_tol * top
    if top <= 0.0 or not np.any(keep):
        raise RankDeficient("all eigenvalues fall below the rank threshold")
    scale = np.zeros_like(w)
    scale[keep] = 1.0 / np.sqrt(w[keep])
    return symmetrize((Q * scale) @ Q.T)


def is_full_rank_psd(A, rank_tol=RANK_TOL):
    w = np.linalg.eigvalsh(symmetrize(np.asarray(A, dtype=float)))
    return w.size > 0 and w[-1] > 0 and w[0] > rank_tol * w[-1]


def _fix_signs(U, Vt):
    # largest-magnitude entry of each left vector made positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, Vt * signs[:, None]


def top_r_svd(M, r):
    """Best rank-``r`` factors with a deterministic sign convention."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidInput("top_r_svd expects a 2-D matrix")
    if not (isinstance(r, (int, np.integer)) and 1 <= r <= min(M.shape)):
        raise InvalidInput(f"r={r!r} out of range for shape {M.shape}")
    U, s, Vt = sla.svd(M, full_matrices=False, lapack_driver="gesdd")
    U, Vt = _fix_signs(U[:, :r], Vt[:r])
    return SvdTriple(left=U, singulars=s[:r].copy(), right=Vt.T.copy())


def pseudo_inverse(M, rank_tol=RANK_TOL, scale=None, return_rank=False):
    """Moore-Penrose pseudo-inverse, zeroing singular values below
    ``rank_tol * scale`` (``scale`` defaults to ``sigma_max(M)``)."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        out = np.zeros(M.shape[::-1])
        return (out, 0) if return_rank else out
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    ref = s[0] if scale is None else max(float(scale), s[0] if s.size else 0.0)
    keep = s > rank_tol * ref if ref > 0 else np.zeros(s.shape, dtype=bool)
    out = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return (out, int(keep.sum())) if return_rank else out


def orthonormal_basis(A, rank_tol=RANK_TOL):
    """Orthonormal basis of the column span of ``A`` (rank-revealing)."""
    A = np.asarray(A, dtype=float)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0]
    return U[:, s > rank_tol * s[0]]
