"""Canonical correlation estimators built on reduced-rank regression.

The response block is whitened, ``B`` is estimated by (penalized) least
squares, and canonical pairs are read off an SVD of the whitened fit.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import admm
from .admm import AdmmConfig
from .exceptions import DimensionMismatch, EmptyModel, InvalidInput, RankDeficient
from .graphs import GraphStructure
from .linalg import (
    RANK_TOL,
    as_data_matrix,
    cross_covariance,
    is_full_rank_psd,
    ledoit_wolf,
    pseudo_inverse,
    sample_covariance,
    sym_inv_sqrt,
    sym_sqrt,
    top_r_svd,
)

LAMBDA_FLOOR = 1e-10

log = logging.getLogger(__name__)


# -- penalties -----------------------------------------------------------------

@dataclass(frozen=True)
class NoPenalty:
    kind = "none"
    rho = 0.0


@dataclass(frozen=True)
class SparsePenalty:
    rho: float
    kind = "sparse"


@dataclass(frozen=True)
class GroupPenalty:
    partition: tuple
    rho: float
    kind = "group"

    @staticmethod
    def contiguous(p, size, rho):
        groups = tuple(tuple(range(s, min(s + size, p))) for s in range(0, p, size))
        return GroupPenalty(partition=groups, rho=rho)


@dataclass(frozen=True)
class GraphPenalty:
    graph: GraphStructure
    rho: float
    kind = "graph"


@dataclass(frozen=True, eq=False)
class RidgePenalty:
    rho: float
    kernel: Optional[np.ndarray] = None
    kind = "ridge"


def with_rho(penalty, rho):
    if isinstance(penalty, NoPenalty):
        return penalty
    return replace(penalty, rho=float(rho))


# -- model ---------------------------------------------------------------------

@dataclass
class CcaModel:
    u_directions: np.ndarray
    v_directions: np.ndarray
    correlations: np.ndarray
    method: str
    penalty_value: float = 0.0
    support: Optional[np.ndarray] = None
    requested_rank: Optional[int] = None
    x_mean: Optional[np.ndarray] = None
    y_mean: Optional[np.ndarray] = None
    gram_u: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)
    coef: Optional[np.ndarray] = field(default=None, repr=False)
    trace: Optional[admm.SolveTrace] = field(default=None, repr=False)

    @property
    def rank(self):
        return self.correlations.shape[0]

    def center(self, X, Y):
        """Apply the training-time centering (a no-op for uncentered fits)."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.x_mean is not None:
            X = X - self.x_mean
        if self.y_mean is not None:
            Y = Y - self.y_mean
        return X, Y

    def to_dict(self):
        out = {
            "method": self.method,
            "rho": float(self.penalty_value),
            "rank": int(self.rank),
            "requested_rank": int(self.requested_rank or self.rank),
            "correlations": self.correlations.tolist(),
            "U": self.u_directions.tolist(),
            "V": self.v_directions.tolist(),
            "support": None if self.support is None else [int(i) + 1 for i in self.support],
            "gram_u": None if self.gram_u is None else self.gram_u.tolist(),
            "x_mean": None if self.x_mean is None else self.x_mean.tolist(),
            "y_mean": None if self.y_mean is None else self.y_mean.tolist(),
            "warnings": list(self.warnings),
        }
        return out


@dataclass(frozen=True)
class FitOptions:
    """Options shared by every fitting routine.

    ``u_recovery`` is ``"via_B"`` (``U = B V0 / Lambda``) or ``"via_sqrt"``
    (``U = Sigma_X^{-1/2} U0``, unpenalized fits only).
    """

    r: int = 1
    penalty: object = field(default_factory=NoPenalty)
    shrink_sigma_y: bool = False
    u_recovery: str = "via_B"
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    center: bool = False
    pinv: bool = False

    def __post_init__(self):
        if int(self.r) < 1:
            raise InvalidInput(f"r must be >= 1, got {self.r}")
        if self.u_recovery not in ("via_B", "via_sqrt"):
            raise InvalidInput(f"unknown u_recovery {self.u_recovery!r}")

    def with_rho(self, rho):
        return replace(self, penalty=with_rho(self.penalty, rho))


# -- building blocks -------------------------------------------------------------

def _prepare(X, Y, center):
    X = as_data_matrix(X, "X")
    Y = as_data_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    x_mean = y_mean = None
    if center:
        x_mean = X.mean(axis=0)
        y_mean = Y.mean(axis=0)
        X = X - x_mean
        Y = Y - y_mean
    return X, Y, x_mean, y_mean


def normalize_y(Y, shrink=False, center=False):
    """Whiten the response block.

    Returns ``(Y0, inv_sqrt)`` with ``Y0 = Y @ inv_sqrt`` where ``inv_sqrt`` is
    the inverse square root of the (optionally Ledoit-Wolf shrunk) sample
    covariance of ``Y``.
    """
    Y = as_data_matrix(Y, "Y")
    if shrink:
        sigma = ledoit_wolf(Y, center=center)
    else:
        sigma = sample_covariance(Y, center=center)
        if not is_full_rank_psd(sigma):
            raise RankDeficient("sample covariance of Y is rank deficient; enable shrinkage")
    inv_sqrt = sym_inv_sqrt(sigma)
    return Y @ inv_sqrt, inv_sqrt


def _check_rank(r, q):
    if r > q:
        raise InvalidInput(f"r={r} exceeds the response dimension q={q}")


def _directions_from_fit(fit_matrix, B, y_inv_sqrt, r, warn):
    """SVD of a whitened fit -> (U, V, Lambda), dropping null components."""
    k = min(r, *fit_matrix.shape)
    svd = top_r_svd(fit_matrix, k)
    keep = svd.singulars > LAMBDA_FLOOR
    if not np.all(keep):
        warn.append(f"rank reduced from {r} to {int(keep.sum())}: vanishing correlations")
    if k < r and np.all(keep):
        warn.append(f"rank reduced from {r} to {k}: support smaller than r")
    lam = svd.singulars[keep]
    V0 = svd.right[:, keep]
    U = B @ V0 / lam if lam.size else np.zeros((B.shape[0], 0))
    return U, y_inv_sqrt @ V0, lam, svd.left[:, keep]


def fit_cca_rrr(X, Y, opts):
    """Unpenalized two-step estimator (OLS on the whitened response, then SVD).

    With ``opts.pinv`` the inverse of the design covariance is replaced by
    its pseudo-inverse, which gives the minimum-norm least-squares baseline
    for rank-deficient designs.
    """
    X, Y, x_mean, y_mean = _prepare(X, Y, opts.center)
    r = int(opts.r)
    _check_rank(r, Y.shape[1])
    Y0, y_inv_sqrt = normalize_y(Y, shrink=opts.shrink_sigma_y)
    sx = sample_covariance(X)
    full = is_full_rank_psd(sx)
    if not full and not opts.pinv:
        raise RankDeficient("sample covariance of X is rank deficient")
    sxy0 = cross_covariance(X, Y0)
    if full:
        B = np.linalg.solve(sx, sxy0)
    else:
        B = pseudo_inverse(sx) @ sxy0
    sx_half = sym_sqrt(sx)
    warn = []
    U, V, lam, U0 = _directions_from_fit(sx_half @ B, B, y_inv_sqrt, r, warn)
    if opts.u_recovery == "via_sqrt":
        U = sym_inv_sqrt(sx) @ U0
    return CcaModel(
        u_directions=U,
        v_directions=V,
        correlations=lam,
        method="rrr-pinv" if opts.pinv else "rrr",
        requested_rank=r,
        x_mean=x_mean,
        y_mean=y_mean,
        gram_u=U.T @ sx @ U,
        warnings=warn,
        coef=B,
    )


def solve_penalized_ols(X, Y0, penalty, cfg, init=None, cache=None):
    """Dispatch to the matching regression solver; returns ``(B, trace)``."""
    kind = penalty.kind
    cfg = cfg.with_rho(penalty.rho)
    if kind == "sparse":
        return admm.solve_sparse_l21(X, Y0, cfg, init=init, cache=cache)
    if kind == "group":
        return admm.solve_group_l21(X, Y0, penalty.partition, cfg, init=init, cache=cache)
    if kind == "graph":
        return admm.solve_graph_tv(X, Y0, penalty.graph, cfg, init=init, cache=cache)
    if kind == "ridge":
        B = admm.solve_ridge(X, Y0, penalty.kernel, penalty.rho)
        return B, admm.SolveTrace(converged=True)
    raise InvalidInput(f"unsupported penalty kind {kind!r}")


def fit_cca_penalized(X, Y, opts, init=None, cache=None):
    """Penalized two-step estimator for the sparse, group, graph and ridge
    penalties. ``p`` may exceed ``n``.

    ``init`` optionally warm-starts the ADMM solver with a ``(B, Z, U)`` state;
    ``cache`` is a dict reused across fits on the same ``X``.
    """
    penalty = opts.penalty
    if penalty.kind == "none":
        raise InvalidInput("fit_cca_penalized needs a penalty; use fit_cca_rrr")
    X, Y, x_mean, y_mean = _prepare(X, Y, opts.center)
    n = X.shape[0]
    r = int(opts.r)
    _check_rank(r, Y.shape[1])
    Y0, y_inv_sqrt = normalize_y(Y, shrink=opts.shrink_sigma_y)
    B, trace = solve_penalized_ols(X, Y0, penalty, opts.admm, init=init, cache=cache)
    warn = []
    if trace is not None and not trace.converged:
        warn.append(f"solver stopped after {trace.iterations} iterations without converging")

    support = None
    if penalty.kind in ("sparse", "group"):
        support = np.flatnonzero(np.linalg.norm(B, axis=1) > 0)
        if support.size == 0:
            raise EmptyModel(penalty.rho)
        XI = X[:, support]
        sx_ii = sample_covariance(XI)
        fit_matrix = sym_sqrt(sx_ii) @ B[support]
    else:
        fit_matrix = X @ B / np.sqrt(n)
        if not np.any(fit_matrix):
            raise EmptyModel(penalty.rho)

    U, V, lam, _ = _directions_from_fit(fit_matrix, B, y_inv_sqrt, r, warn)
    if lam.size == 0:
        raise EmptyModel(penalty.rho)
    for msg in warn:
        log.debug("%s fit at rho=%g: %s", penalty.kind, penalty.rho, msg)
    XU = X @ U
    return CcaModel(
        u_directions=U,
        v_directions=V,
        correlations=lam,
        method=penalty.kind,
        penalty_value=float(penalty.rho),
        support=support,
        requested_rank=r,
        x_mean=x_mean,
        y_mean=y_mean,
        gram_u=XU.T @ XU / n,
        warnings=warn,
        coef=B,
        trace=trace,
    )


def fit(X, Y, opts, init=None, cache=None):
    """Fit with whichever estimator ``opts.penalty`` calls for."""
    if opts.penalty.kind == "none":
        return fit_cca_rrr(X, Y, opts)
    return fit_cca_penalized(X, Y, opts, init=init, cache=cache)


def cca_gep_oracle(X, Y, r, center=False):
    """Classical CCA from the SVD of ``Sx^{-1/2} Sxy Sy^{-1/2}``."""
    X, Y, x_mean, y_mean = _prepare(X, Y, center)
    _check_rank(r, Y.shape[1])
    sx = sample_covariance(X)
    sy = sample_covariance(Y)
    if not (is_full_rank_psd(sx) and is_full_rank_psd(sy)):
        raise RankDeficient("classical CCA needs full-rank covariances")
    wx = sym_inv_sqrt(sx)
    wy = sym_inv_sqrt(sy)
    svd = top_r_svd(wx @ cross_covariance(X, Y) @ wy, min(r, X.shape[1]))
    U = wx @ svd.left
    return CcaModel(
        u_directions=U,
        v_directions=wy @ svd.right,
        correlations=svd.singulars,
        method="gep",
        requested_rank=r,
        x_mean=x_mean,
        y_mean=y_mean,
        gram_u=U.T @ sx @ U,
    )


def canonical_variates(model, X, Y):
    """Return ``(X U, Y V)``; no centering or re-normalization."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.u_directions.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape}, U has {model.u_directions.shape[0]} rows")
    if Y.ndim != 2 or Y.shape[1] != model.v_directions.shape[0]:
        raise DimensionMismatch(f"Y has shape {Y.shape}, V has {model.v_directions.shape[0]} rows")
    if X.shape[0] != Y.shape[0]:
        raise DimensionMismatch("X and Y row counts differ")
    return X @ model.u_directions, Y @ model.v_directions
