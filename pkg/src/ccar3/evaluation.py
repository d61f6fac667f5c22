"""Recovery metrics, cross-validation and the replicate benchmark runner."""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import admm
from .estimators import (
    CcaModel,
    FitOptions,
    GraphPenalty,
    GroupPenalty,
    NoPenalty,
    RidgePenalty,
    SparsePenalty,
    canonical_variates,
    fit,
    normalize_y,
)
from .exceptions import CCAError, CvFailed, EmptyModel, InvalidInput
from .linalg import RANK_TOL, orthonormal_basis
from .synthetic import SimConfig, generate, sample_joint

log = logging.getLogger(__name__)


# -- subspace metrics ------------------------------------------------------------

def _bases(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] != B.shape[0]:
        raise InvalidInput(f"ambient dimensions differ: {A.shape[0]} vs {B.shape[0]}")
    QA = orthonormal_basis(A)
    QB = orthonormal_basis(B)
    if QA.shape[1] == 0 or QB.shape[1] == 0:
        raise InvalidInput("subspace distance is undefined for a zero matrix")
    return QA, QB


def principal_angles(A, B):
    """Principal angles (ascending) between the column spans of ``A`` and ``B``.

    When the ranks differ the list is padded with right angles up to the
    larger rank.
    """
    QA, QB = _bases(A, B)
    c = np.clip(np.linalg.svd(QA.T @ QB, compute_uv=False), 0.0, 1.0)
    k = max(QA.shape[1], QB.shape[1])
    angles = np.full(k, np.pi / 2)
    angles[: c.size] = np.arccos(c)
    return np.sort(angles)


def _residual_norm(QA, QB):
    # ||(I - QA QA^T) QB||_F, without the 1 - cos^2 cancellation
    R = QB - QA @ (QA.T @ QB)
    return float(np.sum(R * R))


def subspace_distance(A, B):
    """Chordal distance ``||sin Theta||_F`` between two column spans."""
    QA, QB = _bases(A, B)
    if QA.shape[1] > QB.shape[1]:
        sq = _residual_norm(QB, QA)
    elif QB.shape[1] > QA.shape[1]:
        sq = _residual_norm(QA, QB)
    else:
        # average of both orderings keeps the result exactly symmetric
        sq = 0.5 * (_residual_norm(QA, QB) + _residual_norm(QB, QA))
    return float(np.sqrt(max(sq, 0.0)))


def stacked_direction_distance(model, gt):
    """Distance between the spans of ``[U_hat; V_hat]`` and ``[U*; V*]``."""
    est = np.vstack([model.u_directions, model.v_directions])
    true = np.vstack([gt.u_star, gt.v_star])
    if est.shape[0] != true.shape[0]:
        raise InvalidInput("model and ground truth dimensions differ")
    return subspace_distance(est, true)


def validation_correlation(model, X_val, Y_val):
    """Mean Pearson correlation between paired held-out canonical variates."""
    X_val = np.asarray(X_val, dtype=float)
    Y_val = np.asarray(Y_val, dtype=float)
    if X_val.shape[0] < 3:
        raise InvalidInput("validation correlation needs at least 3 rows")
    X_val, Y_val = model.center(X_val, Y_val)
    xu, yv = canonical_variates(model, X_val, Y_val)
    r = max(model.requested_rank or model.rank, 1)
    total = 0.0
    for i in range(model.rank):
        a = xu[:, i] - xu[:, i].mean()
        b = yv[:, i] - yv[:, i].mean()
        den = np.sqrt(np.dot(a, a) * np.dot(b, b))
        if den > 0:
            total += float(np.dot(a, b) / den)
    return total / r


def variate_mse(model, X_test, Y_test):
    """Held-out ``(1/n) ||X U - Y V||_F^2``; components the model lost are
    charged 1 each (a zero X-variate against a unit-variance Y-variate)."""
    X_test, Y_test = model.center(X_test, Y_test)
    xu, yv = canonical_variates(model, X_test, Y_test)
    missing = (model.requested_rank or model.rank) - model.rank
    return float(np.sum((xu - yv) ** 2) / X_test.shape[0]) + float(missing)


@dataclass(frozen=True)
class SupportMetrics:
    fpr: float
    fnr: float
    est_support_size: int
    true_support_size: int

    def to_dict(self):
        return {
            "fpr": self.fpr,
            "fnr": self.fnr,
            "est_support_size": self.est_support_size,
            "true_support_size": self.true_support_size,
        }


def support_metrics(u_hat, u_star, tol=0.0):
    """False positive / negative rates of the estimated row support."""
    u_hat = np.asarray(u_hat, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    if u_hat.shape[0] != u_star.shape[0]:
        raise InvalidInput("u_hat and u_star must have the same number of rows")
    p = u_star.shape[0]
    est = set(np.flatnonzero(np.linalg.norm(u_hat.reshape(p, -1), axis=1) > tol))
    true = set(np.flatnonzero(np.linalg.norm(u_star.reshape(p, -1), axis=1) > tol))
    fpr = len(est - true) / max(1, p - len(true))
    fnr = len(true - est) / max(1, len(true))
    return SupportMetrics(fpr, fnr, len(est), len(true))


# -- cross-validation --------------------------------------------------------------

@dataclass
class CvReport:
    grid: list
    fold_scores: np.ndarray
    mean_scores: np.ndarray
    selected_rho: float
    selected_index: int
    refit: Optional[CcaModel] = None
    refit_error: Optional[str] = None
    folds: list = field(default_factory=list, repr=False)

    def to_dict(self):
        def clean(v):
            return None if not np.isfinite(v) else float(v)

        return {
            "grid": [float(g) for g in self.grid],
            "fold_scores": [[clean(v) for v in row] for row in self.fold_scores],
            "mean_scores": [clean(v) for v in self.mean_scores],
            "selected_rho": float(self.selected_rho),
            "selected_index": int(self.selected_index),
            "refit_error": self.refit_error,
        }


def fold_indices(n, k, seed):
    """Shuffle ``range(n)`` with ``seed`` and cut it into ``k`` contiguous chunks."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, k)]


def _penalty_scale(X, Y, opts):
    pen = opts.penalty
    Y0, _ = normalize_y(Y - Y.mean(axis=0) if opts.center else Y, shrink=opts.shrink_sigma_y)
    Xc = X - X.mean(axis=0) if opts.center else X
    if pen.kind == "group":
        return admm.rho_max(Xc, Y0, "group", partition=pen.partition)
    if pen.kind == "graph":
        return admm.rho_max(Xc, Y0, "graph", graph=pen.graph)
    return admm.rho_max(Xc, Y0, pen.kind)


def default_grid(X, Y, opts, n_grid=10, lo=1e-3, hi=1.0):
    """``n_grid`` log-spaced values over ``[lo, hi] * rho_max``."""
    scale = _penalty_scale(np.asarray(X, float), np.asarray(Y, float), opts)
    if scale <= 0:
        return [0.0]
    return list(scale * np.logspace(np.log10(lo), np.log10(hi), n_grid))


def kfold_cv(X, Y, opts, grid=None, k=5, seed=0, n_grid=10, grid_range=(1e-3, 1.0)):
    """Select ``rho`` by k-fold CV on held-out variate MSE and refit on all rows.

    The grid is swept from large to small ``rho`` with warm starts inside each
    fold. An empty model scores as if every X-variate were zero.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[0]
    if k < 2 or n < 2 * k:
        raise InvalidInput(f"need k >= 2 and n >= 2k (n={n}, k={k})")
    if opts.penalty.kind == "none":
        grid = [0.0]
    elif grid is None:
        grid = default_grid(X, Y, opts, n_grid, *grid_range)
    grid = [float(g) for g in grid]
    if not grid:
        raise InvalidInput("grid must be non-empty")
    r = int(opts.r)
    unique = sorted(set(grid), reverse=True)
    folds = fold_indices(n, k, seed)
    scores = np.full((k, len(grid)), np.inf)
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        Xtr, Ytr, Xte, Yte = X[train], Y[train], X[test], Y[test]
        cache = {}
        state = None
        by_rho = {}
        for rho in unique:
            try:
                model = fit(Xtr, Ytr, opts.with_rho(rho), init=state, cache=cache)
                if model.trace is not None and model.trace.state is not None:
                    state = model.trace.state
                by_rho[rho] = variate_mse(model, Xte, Yte)
            except EmptyModel:
                by_rho[rho] = float(r)
            except CCAError as exc:
                log.debug("fold %d rho=%g failed: %s", f, rho, exc)
                by_rho[rho] = np.inf
        scores[f] = [by_rho[g] for g in grid]
    with np.errstate(invalid="ignore"):
        means = scores.mean(axis=0)
    if not np.any(np.isfinite(means)):
        raise CvFailed("every grid point failed in at least one fold")
    best = np.min(means)
    ties = [i for i, v in enumerate(means) if v == best]
    sel = min(ties, key=lambda i: (grid[i], i))
    report = CvReport(grid=grid, fold_scores=scores, mean_scores=means,
                      selected_rho=grid[sel], selected_index=sel, folds=folds)
    try:
        report.refit = fit(X, Y, opts.with_rho(grid[sel]))
    except CCAError as exc:
        report.refit_error = f"{type(exc).__name__}: {exc}"
    return report


# -- benchmark -------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    """A named estimator configuration for :func:`benchmark_run`.

    ``penalty`` is one of ``none``, ``sparse``, ``group``, ``graph``, ``ridge``.
    ``rho=None`` selects the penalty by cross-validation.
    """

    name: str
    penalty: str = "sparse"
    rho: Optional[float] = None
    shrink_sigma_y: bool = True
    pinv: bool = False
    folds: int = 5
    n_grid: int = 10
    grid_range: tuple = (1e-3, 1.0)
    r: Optional[int] = None
    delta: float = 1.0
    eps: float = 1e-5
    max_iter: int = 5000

    def options(self, gt, r):
        kind = self.penalty
        rho = 0.0 if self.rho is None else float(self.rho)
        if kind == "none":
            pen = NoPenalty()
        elif kind == "sparse":
            pen = SparsePenalty(rho)
        elif kind == "group":
            if gt.partition is None:
                raise InvalidInput("group method needs a regime with a known partition")
            pen = GroupPenalty(gt.partition, rho)
        elif kind == "graph":
            if gt.graph is None:
                raise InvalidInput("graph method needs a regime with a graph")
            pen = GraphPenalty(gt.graph, rho)
        elif kind == "ridge":
            pen = RidgePenalty(rho)
        else:
            raise InvalidInput(f"unknown penalty {kind!r}")
        return FitOptions(
            r=self.r or r,
            penalty=pen,
            shrink_sigma_y=self.shrink_sigma_y,
            pinv=self.pinv,
            admm=admm.AdmmConfig(delta=self.delta, eps=self.eps, max_iter=self.max_iter,
                                 track_objective=False),
        )

    def to_dict(self):
        d = dict(self.__dict__)
        d["grid_range"] = list(self.grid_range)
        return d


ROW_FIELDS = [
    "regime_index", "regime", "n", "p", "q", "r", "signal", "method", "replicate",
    "seed", "status", "selected_rho", "rank", "distance", "u_distance", "v_distance",
    "val_correlation", "val_mse", "fpr", "fnr", "est_support_size", "true_support_size",
    "tv_norm", "error",
]


def replicate_seed(seed, regime_index, replicate):
    return np.random.SeedSequence([int(seed), int(regime_index), int(replicate)])


def _score_row(model, gt, X_val, Y_val):
    row = {
        "rank": model.rank,
        "distance": stacked_direction_distance(model, gt),
        "u_distance": subspace_distance(model.u_directions, gt.u_star),
        "v_distance": subspace_distance(model.v_directions, gt.v_star),
        "val_correlation": validation_correlation(model, X_val, Y_val),
        "val_mse": variate_mse(model, X_val, Y_val),
    }
    sm = support_metrics(model.u_directions, gt.u_star)
    row.update(sm.to_dict())
    if gt.graph is not None:
        row["tv_norm"] = gt.graph.tv_norm(model.u_directions)
    return row


def _run_cell(args):
    """One (regime, replicate): generate data once, fit every method on it."""
    regime_index, cfg, methods, replicate, seed, n_val = args
    ss = replicate_seed(seed, regime_index, replicate)
    rng = np.random.default_rng(ss)
    gt = generate(cfg, rng)
    X, Y = sample_joint(gt, cfg.n, rng)
    X_val, Y_val = sample_joint(gt, n_val, rng)
    cv_seed = int(ss.generate_state(1)[0])
    rows, timings = [], []
    for method in methods:
        row = {f: None for f in ROW_FIELDS}
        row.update(regime_index=regime_index, regime=cfg.regime, n=cfg.n, p=cfg.p, q=cfg.q,
                   r=cfg.r, signal=cfg.signal, method=method.name, replicate=replicate,
                   seed=int(seed))
        t0 = time.perf_counter()
        try:
            opts = method.options(gt, cfg.r)
            if method.rho is None and method.penalty != "none":
                report = kfold_cv(X, Y, opts, k=method.folds, seed=cv_seed,
                                  n_grid=method.n_grid, grid_range=method.grid_range)
                if report.refit is None:
                    raise EmptyModel(report.selected_rho, report.refit_error)
                model, rho = report.refit, report.selected_rho
            else:
                model, rho = fit(X, Y, opts), opts.penalty.rho
            row.update(_score_row(model, gt, X_val, Y_val))
            row.update(status="ok", selected_rho=float(rho))
        except CCAError as exc:
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        timings.append({"regime_index": regime_index, "method": method.name,
                        "replicate": replicate, "seconds": time.perf_counter() - t0})
        rows.append(row)
    return rows, timings


def _sort_key(row):
    return (row["regime_index"], row["method"], row["replicate"])


def summarize(rows):
    """Per (regime, method) cell: counts, mean, median and IQR of each metric."""
    cells = {}
    for row in rows:
        cells.setdefault((row["regime_index"], row["method"]), []).append(row)
    out = []
    for (ri, name), group in sorted(cells.items()):
        ok = [g for g in group if g["status"] == "ok"]
        entry = {"regime_index": ri, "regime": group[0]["regime"], "n": group[0]["n"],
                 "p": group[0]["p"], "method": name, "replicates": len(group),
                 "succeeded": len(ok)}
        for metric in ("distance", "val_correlation", "val_mse", "fpr", "fnr",
                       "est_support_size", "tv_norm"):
            vals = np.array([g[metric] for g in ok if g[metric] is not None], dtype=float)
            if vals.size:
                q25, med, q75 = np.percentile(vals, [25, 50, 75])
                entry.update({f"{metric}_mean": float(vals.mean()), f"{metric}_median": float(med),
                              f"{metric}_q25": float(q25), f"{metric}_q75": float(q75)})
            else:
                entry.update({f"{metric}_{s}": None for s in ("mean", "median", "q25", "q75")})
        out.append(entry)
    return out


@dataclass
class BenchmarkResult:
    rows: list
    summary: list
    timings: list


def benchmark_run(regimes, methods, replicates, seed=0, jobs=1, n_val=500):
    """Generate, fit and score every (regime, method, replicate) cell.

    Each replicate draws one dataset shared by all methods. Rows are returned
    in canonical order, so the result does not depend on ``jobs``. Failed
    fits are recorded with ``status='failed'``.
    """
    regimes = [r if isinstance(r, SimConfig) else SimConfig(**r) for r in regimes]
    methods = [m if isinstance(m, MethodSpec) else MethodSpec(**m) for m in methods]
    if not regimes or not methods:
        raise InvalidInput("benchmark needs at least one regime and one method")
    tasks = [(ri, cfg, methods, rep, seed, n_val)
             for ri, cfg in enumerate(regimes) for rep in range(int(replicates))]
    rows, timings = [], []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    for r_rows, r_times in results:
        rows.extend(r_rows)
        timings.extend(r_times)
    rows.sort(key=_sort_key)
    timings.sort(key=lambda t: (t["regime_index"], t["method"], t["replicate"]))
    return BenchmarkResult(rows=rows, summary=summarize(rows), timings=timings)
