"""ADMM solvers for penalized multivariate regression.

All solvers minimise ``(1/n) ||Y0 - X B||_F^2 + penalty(B)`` for the
row-sparse, group-sparse and graph total-variation penalties, plus a closed
form for the generalized ridge penalty ``rho * tr(B^T K B)``.

The splitting is ``B = Z`` with augmented term ``delta ||B - Z + U||_F^2``, so
the B-step solves ``(X^T X / n + delta I) B = X^T Y0 / n + delta (Z - U)`` and
the Z-step is a block shrinkage with threshold ``rho * w_g / (2 delta)``.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatch, InvalidInput, RankDeficient
from .linalg import RANK_TOL, as_data_matrix, pseudo_inverse


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 0.0
    delta: float = 1.0
    eps: float = 1e-5
    max_iter: int = 5000
    track_objective: bool = True

    def __post_init__(self):
        if not (self.rho >= 0 and np.isfinite(self.rho)):
            raise InvalidInput(f"rho must be finite and >= 0, got {self.rho!r}")
        if not self.delta > 0:
            raise InvalidInput(f"delta must be > 0, got {self.delta!r}")
        if not self.eps > 0:
            raise InvalidInput(f"eps must be > 0, got {self.eps!r}")
        if int(self.max_iter) < 1:
            raise InvalidInput(f"max_iter must be >= 1, got {self.max_iter!r}")

    def with_rho(self, rho):
        return AdmmConfig(rho=float(rho), delta=self.delta, eps=self.eps,
                          max_iter=self.max_iter, track_objective=self.track_objective)


@dataclass
class SolveTrace:
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    converged: bool = True
    objective_history: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    # (B, Z, U) at exit, for warm starts
    state: tuple = field(default=None, repr=False)

    def to_dict(self):
        return {
            "iterations": int(self.iterations),
            "primal_residual": float(self.primal_residual),
            "dual_residual": float(self.dual_residual),
            "converged": bool(self.converged),
            "objective_history": [float(v) for v in self.objective_history],
            "flags": list(self.flags),
        }


def row_shrink(x, t):
    """Block soft-threshold ``(1 - t / ||x||)_+ x``."""
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x)
    if nrm <= t or nrm == 0.0:
        return np.zeros_like(x)
    return (1.0 - t / nrm) * x


class _ShiftedGram:
    """Solves ``(D^T D / n + delta I) B = R`` from a thin SVD of ``D / sqrt(n)``.

    The same factors serve p <= n and p > n (Woodbury form), and give the
    quadratic ``tr(B^T D^T D B) / n`` in O(k p q).
    """

    def __init__(self, D, delta):
        n = D.shape[0]
        _, s, Vt = np.linalg.svd(D / np.sqrt(n), full_matrices=False)
        self.Vt = Vt
        self.s2 = s ** 2
        self.delta = delta
        self._corr = 1.0 / (self.s2 + delta) - 1.0 / delta

    def solve(self, R):
        return R / self.delta + self.Vt.T @ (self._corr[:, None] * (self.Vt @ R))

    def quad(self, B):
        proj = self.Vt @ B
        return float(np.sum(self.s2[:, None] * proj ** 2))


def _group_labels(partition, p):
    labels = np.full(p, -1, dtype=int)
    for gi, grp in enumerate(partition):
        idx = np.asarray(list(grp), dtype=int)
        if idx.size == 0:
            raise InvalidInput(f"group {gi} is empty")
        if np.any(idx < 0) or np.any(idx >= p):
            raise InvalidInput(f"group {gi} has indices outside [0, {p})")
        if np.any(labels[idx] >= 0) or np.unique(idx).size != idx.size:
            raise InvalidInput(f"group {gi} overlaps another group")
        labels[idx] = gi
    if np.any(labels < 0):
        raise InvalidInput("partition does not cover every covariate")
    return labels


def _block_norms(M, labels, n_groups):
    sq = np.bincount(labels, weights=np.einsum("ij,ij->i", M, M), minlength=n_groups)
    return np.sqrt(sq)


def _block_shrink(V, labels, thresholds):
    norms = _block_norms(V, labels, thresholds.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > thresholds, 1.0 - thresholds / norms, 0.0)
    return V * factor[labels][:, None]


def _check_xy(X, Y0):
    X = as_data_matrix(X, "X")
    Y0 = as_data_matrix(Y0, "Y0")
    if X.shape[0] != Y0.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows, Y0 has {Y0.shape[0]}")
    return X, Y0


def _admm_blocks(D, Y, labels, weights, cfg, init=None, project=None, factor=None):
    """Scaled ADMM for ``(1/n)||Y - D B||^2 + rho * sum_g w_g ||B_g||_F``.

    ``project``, when given, is an orthogonal projector applied to ``Z - U``
    in the B-step, which keeps ``B`` inside its range.
    """
    n, p = D.shape
    q = Y.shape[1]
    n_groups = weights.shape[0]
    delta = cfg.delta
    fac = factor if factor is not None else _ShiftedGram(D, delta)
    C = D.T @ Y / n
    y_sq = float(np.sum(Y ** 2)) / n
    thresholds = cfg.rho * weights / (2.0 * delta)

    if init is None:
        B = np.zeros((p, q))
        Z = np.zeros((p, q))
        U = np.zeros((p, q))
    else:
        B, Z, U = (np.array(a, dtype=float, copy=True) for a in init)

    def objective(M):
        fit = y_sq - 2.0 * float(np.sum(C * M)) + fac.quad(M)
        return fit + cfg.rho * float(np.dot(weights, _block_norms(M, labels, n_groups)))

    trace = SolveTrace(converged=False)
    r_norm = s_norm = np.inf
    for it in range(1, int(cfg.max_iter) + 1):
        B_old = B
        W = Z - U
        if project is not None:
            W = project @ W
        B = fac.solve(C + delta * W)
        Z = _block_shrink(B + U, labels, thresholds)
        U = U + B - Z
        r_norm = float(np.linalg.norm(B - Z))
        s_norm = float(np.linalg.norm(B - B_old))
        if cfg.track_objective:
            trace.objective_history.append(objective(Z))
        if r_norm <= cfg.eps and s_norm <= cfg.eps:
            trace.converged = True
            break
    trace.iterations = it
    trace.primal_residual = r_norm
    trace.dual_residual = s_norm
    trace.state = (B, Z, U)
    return Z, trace


def sparse_objective(X, Y0, B, rho):
    X, Y0 = _check_xy(X, Y0)
    n = X.shape[0]
    return float(np.sum((Y0 - X @ B) ** 2) / n + rho * np.linalg.norm(B, axis=1).sum())


def group_objective(X, Y0, B, partition, rho):
    X, Y0 = _check_xy(X, Y0)
    n = X.shape[0]
    pen = sum(np.sqrt(len(g)) * np.linalg.norm(B[list(g)]) for g in partition)
    return float(np.sum((Y0 - X @ B) ** 2) / n + rho * pen)


def graph_objective(X, Y0, B, g, rho):
    X, Y0 = _check_xy(X, Y0)
    n = X.shape[0]
    return float(np.sum((Y0 - X @ B) ** 2) / n + rho * g.tv_norm(B))


def ridge_objective(X, Y0, B, K, rho):
    X, Y0 = _check_xy(X, Y0)
    n = X.shape[0]
    return float(np.sum((Y0 - X @ B) ** 2) / n + rho * np.trace(B.T @ K @ B))


def _cached_factor(cache, D, delta):
    # cache is a caller-owned dict tied to one design matrix
    if cache is None:
        return _ShiftedGram(D, delta)
    fac = cache.get("factor")
    if fac is None or fac.delta != delta:
        fac = cache["factor"] = _ShiftedGram(D, delta)
    return fac


def solve_sparse_l21(X, Y0, cfg, init=None, cache=None):
    """Row-sparse (l21) penalized regression; returns the row-sparse iterate.

    ``init`` is an optional ``(B, Z, U)`` warm start and ``cache`` an optional
    dict reused across calls with the same ``X``.
    """
    X, Y0 = _check_xy(X, Y0)
    p = X.shape[1]
    return _admm_blocks(X, Y0, np.arange(p), np.ones(p), cfg, init=init,
                        factor=_cached_factor(cache, X, cfg.delta))


def solve_group_l21(X, Y0, partition, cfg, init=None, cache=None):
    """Group-sparse regression with weights ``sqrt(|G|)`` on each block.

    ``partition`` is a sequence of 0-based index collections covering
    ``range(p)`` exactly once.
    """
    X, Y0 = _check_xy(X, Y0)
    p = X.shape[1]
    labels = _group_labels(partition, p)
    sizes = np.bincount(labels, minlength=len(partition)).astype(float)
    return _admm_blocks(X, Y0, labels, np.sqrt(sizes), cfg, init=init,
                        factor=_cached_factor(cache, X, cfg.delta))


@dataclass
class _GraphDesign:
    comp_design: np.ndarray  # X A, n x n_c
    comp_pinv: np.ndarray  # (X A)^+
    basis: np.ndarray  # A, p x n_c, orthonormal component indicators
    edge_design: np.ndarray  # X Gamma^+, n x m
    deflated: np.ndarray  # (I - P) X Gamma^+
    range_proj: np.ndarray  # Gamma Gamma^+, or None for forests
    flags: list


def _graph_design(X, g):
    n = X.shape[0]
    A = np.zeros((g.p, g.n_components))
    for j, comp in enumerate(g.components):
        A[list(comp), j] = 1.0 / np.sqrt(len(comp))
    XA = X @ A
    flags = []
    # rank is judged against the scale of X, so cancelled component means
    # (round-off sized columns) count as missing
    x_scale = np.linalg.norm(X, 2) if X.size else 0.0
    XA_pinv, rank = pseudo_inverse(XA, scale=x_scale, return_rank=True)
    if rank < XA.shape[1]:
        flags.append("pi_design_rank_deficient")
    XG = X @ g.incidence_pinv
    deflated = XG - XA @ (XA_pinv @ XG)
    proj = None
    if g.m > g.p - g.n_components:
        # cycles: edge coefficients must stay in range(Gamma)
        proj = g.incidence @ g.incidence_pinv
    return _GraphDesign(XA, XA_pinv, A, XG, deflated, proj, flags)


def solve_graph_tv(X, Y0, g, cfg, init=None, cache=None):
    """Graph total-variation penalized regression ``rho * ||Gamma B||_{21}``.

    The component-mean part ``Pi B`` is unpenalized and solved by least
    squares; the edge part runs ADMM on ``Theta = Gamma B`` with the
    component-mean fit partialled out of the design.
    """
    X, Y0 = _check_xy(X, Y0)
    if g.p != X.shape[1]:
        raise DimensionMismatch(f"graph has {g.p} nodes but X has {X.shape[1]} columns")
    n, q = Y0.shape
    if cache is not None:
        d = cache.get("graph_design")
        if d is None:
            d = cache["graph_design"] = _graph_design(X, g)
    else:
        d = _graph_design(X, g)

    coef_pi = d.comp_pinv @ Y0
    resid = Y0 - d.comp_design @ coef_pi
    if g.m == 0:
        B = d.basis @ coef_pi
        trace = SolveTrace(converged=True, flags=list(d.flags), state=None)
        trace.objective_history.append(graph_objective(X, Y0, B, g, cfg.rho))
        return B, trace

    Z, trace = _admm_blocks(d.deflated, resid, np.arange(g.m), np.ones(g.m), cfg,
                            init=init, project=d.range_proj,
                            factor=_cached_factor(cache, d.deflated, cfg.delta))
    trace.flags.extend(d.flags)
    theta = Z if d.range_proj is None else d.range_proj @ Z
    coef_pi = d.comp_pinv @ (Y0 - d.edge_design @ theta)
    B = d.basis @ coef_pi + g.incidence_pinv @ theta
    return B, trace


def _ridge_primal(X, Y0, K, rho):
    n = X.shape[0]
    G = X.T @ X / n + rho * K
    rhs = X.T @ Y0 / n
    w = np.linalg.eigvalsh(0.5 * (G + G.T))
    if w[-1] <= 0 or w[0] <= RANK_TOL * w[-1]:
        raise RankDeficient("X^T X / n + rho K is singular; increase rho")
    return sla.solve(G, rhs, assume_a="pos")


def _ridge_dual(X, Y0, K, rho):
    n = X.shape[0]
    try:
        cK = sla.cho_factor(K)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("the dual ridge path needs a positive definite K") from exc
    KinvXt = sla.cho_solve(cK, X.T)
    H = X @ KinvXt + n * rho * np.eye(n)
    return KinvXt @ sla.solve(H, Y0, assume_a="pos")


def solve_ridge(X, Y0, K=None, rho=0.0, method="auto"):
    """Exact minimiser of ``(1/n)||Y0 - X B||^2 + rho tr(B^T K B)``.

    ``method='dual'`` only works with ``n x n`` systems and is chosen
    automatically when ``p > n``, ``rho > 0`` and ``K`` is positive definite.
    """
    X, Y0 = _check_xy(X, Y0)
    n, p = X.shape
    K = np.eye(p) if K is None else np.asarray(K, dtype=float)
    if K.shape != (p, p):
        raise DimensionMismatch(f"K must be {p}x{p}, got {K.shape}")
    if rho < 0:
        raise InvalidInput("rho must be >= 0")
    if method == "auto":
        method = "primal"
        if p > n and rho > 0:
            w = np.linalg.eigvalsh(0.5 * (K + K.T))
            if w[0] > RANK_TOL * max(w[-1], 0.0):
                method = "dual"
    if method == "primal":
        return _ridge_primal(X, Y0, K, rho)
    if method == "dual":
        if rho <= 0:
            raise RankDeficient("the dual ridge path needs rho > 0")
        return _ridge_dual(X, Y0, K, rho)
    raise InvalidInput(f"unknown ridge method {method!r}")


def rho_max(X, Y0, kind="sparse", partition=None, graph=None):
    """Smallest rho that zeroes the penalized part when ``X^T X / n = I``.

    Used as the upper anchor of cross-validation grids; for general designs
    it is a heuristic scale, not an exact threshold.
    """
    X, Y0 = _check_xy(X, Y0)
    n = X.shape[0]
    if kind == "sparse":
        C = X.T @ Y0 / n
        return float(2.0 * np.max(np.linalg.norm(C, axis=1)))
    if kind == "group":
        C = X.T @ Y0 / n
        labels = _group_labels(partition, X.shape[1])
        sizes = np.bincount(labels, minlength=len(partition)).astype(float)
        return float(2.0 * np.max(_block_norms(C, labels, len(partition)) / np.sqrt(sizes)))
    if kind == "graph":
        if graph is None:
            raise InvalidInput("graph penalty needs a GraphStructure")
        if graph.m == 0:
            return 0.0
        d = _graph_design(X, graph)
        resid = Y0 - d.comp_design @ (d.comp_pinv @ Y0)
        C = d.deflated.T @ resid / n
        return float(2.0 * np.max(np.linalg.norm(C, axis=1)))
    if kind == "ridge":
        # ridge never zeroes B; use the scale of the design Gram
        return float(np.linalg.norm(X, 2) ** 2 / n)
    raise InvalidInput(f"unknown penalty kind {kind!r}")
