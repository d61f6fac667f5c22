"""Synthetic canonical-pair models with sparse, group and graph structure."""
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .exceptions import GenerationFailed, InvalidInput
from .graphs import GraphStructure, grid_graph
from .linalg import pseudo_inverse, sym_inv_sqrt, sym_sqrt

SIGNAL_INTERVALS = {
    "high": (0.75, 0.9),
    "medium": (0.55, 0.7),
    "low": (0.35, 0.5),
}
REGIMES = ("sparse", "group", "graph")
MAX_RETRIES = 100


@dataclass(frozen=True)
class SimConfig:
    regime: str = "sparse"
    n: int = 500
    p: int = 100
    q: int = 30
    r: int = 3
    r_pca: int = 5
    p1: int = 20
    n_nnz: int = 10
    group_size: int = 10
    active_groups: int = 5
    grid: Optional[tuple] = None
    edge_support: int = 5
    signal: str = "high"
    seed: int = 0
    ridge_eps: float = 0.0
    identifiable: bool = True

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidInput(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.signal not in SIGNAL_INTERVALS:
            raise InvalidInput(f"unknown signal {self.signal!r}")
        if self.regime == "graph":
            if self.grid is None or len(self.grid) != 2:
                raise InvalidInput("graph regime needs grid=(rows, cols)")
            object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))
            object.__setattr__(self, "p", self.grid[0] * self.grid[1])
        for name in ("n", "p", "q", "r", "r_pca", "p1"):
            if int(getattr(self, name)) < 1:
                raise InvalidInput(f"{name} must be >= 1")
        if self.r > self.q:
            raise InvalidInput("r must not exceed q")
        if not (self.r_pca <= self.p1 <= self.p):
            raise InvalidInput("need r_pca <= p1 <= p")
        if self.regime == "sparse" and not (self.r <= self.n_nnz <= self.p):
            raise InvalidInput("need r <= n_nnz <= p")
        if self.regime == "group":
            n_groups = -(-self.p // self.group_size)
            if not (1 <= self.active_groups <= n_groups):
                raise InvalidInput(f"active_groups must lie in [1, {n_groups}]")
        if self.ridge_eps < 0:
            raise InvalidInput("ridge_eps must be >= 0")

    def to_dict(self):
        d = asdict(self)
        if d["grid"] is not None:
            d["grid"] = list(d["grid"])
        return d


@dataclass(eq=False)
class GroundTruth:
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    sigma_xy: np.ndarray
    u_star: np.ndarray
    v_star: np.ndarray
    lambda_star: np.ndarray
    graph: Optional[GraphStructure] = field(default=None, repr=False)
    partition: Optional[tuple] = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.sigma_x.shape[0]

    @property
    def q(self):
        return self.sigma_y.shape[0]

    @property
    def support(self):
        return np.flatnonzero(np.linalg.norm(self.u_star, axis=1) > 0)

    def joint(self):
        return np.block([[self.sigma_x, self.sigma_xy], [self.sigma_xy.T, self.sigma_y]])

    def check(self, tol=1e-8):
        """Raise ``GenerationFailed`` unless all model invariants hold."""
        r = self.lambda_star.shape[0]
        gu = self.u_star.T @ self.sigma_x @ self.u_star
        gv = self.v_star.T @ self.sigma_y @ self.v_star
        if np.max(np.abs(gu - np.eye(r))) > tol or np.max(np.abs(gv - np.eye(r))) > tol:
            raise GenerationFailed("direction normalization violated")
        rebuilt = self.sigma_x @ self.u_star @ np.diag(self.lambda_star) @ self.v_star.T @ self.sigma_y
        if np.max(np.abs(rebuilt - self.sigma_xy)) > 1e-10 * max(1.0, np.max(np.abs(self.sigma_xy))):
            raise GenerationFailed("cross-covariance does not match the canonical-pair form")
        w = np.linalg.eigvalsh(self.joint())
        if w[0] < -tol * max(w[-1], 1.0):
            raise GenerationFailed(f"joint covariance not PSD (lambda_min={w[0]:.3e})")

    def to_dict(self):
        return {
            "sigma_x": self.sigma_x.tolist(),
            "sigma_y": self.sigma_y.tolist(),
            "sigma_xy": self.sigma_xy.tolist(),
            "u_star": self.u_star.tolist(),
            "v_star": self.v_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "support": [int(i) + 1 for i in self.support],
            **self.info,
        }


def signal_lambdas(strength, r):
    """``r`` canonical correlations evenly spaced over the signal interval,
    in decreasing order (the midpoint when ``r == 1``)."""
    try:
        lo, hi = SIGNAL_INTERVALS[str(strength).lower()]
    except KeyError:
        raise InvalidInput(f"unknown signal strength {strength!r}") from None
    if r < 1:
        raise InvalidInput("r must be >= 1")
    if r == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(hi, lo, r)


def _random_orthonormal(rng, d, k):
    Q, R = np.linalg.qr(rng.standard_normal((d, k)))
    return Q * np.sign(np.diag(R))


def block_covariance(rng, d, block, rank, ridge_eps=0.0):
    """``[[W W^T, 0], [0, I]]`` with ``W`` a random ``block x rank``
    orthonormal-columns matrix, plus ``ridge_eps * I``."""
    block = min(block, d)
    rank = min(rank, block)
    sigma = np.eye(d)
    W = _random_orthonormal(rng, block, rank)
    sigma[:block, :block] = W @ W.T
    if ridge_eps:
        sigma += ridge_eps * np.eye(d)
    return sigma


def _identifiable_part(M, sigma):
    """Project the rows of ``M`` on its support onto the range of ``sigma``
    restricted to that support.

    Components in the null space of a singular covariance leave the variates
    unchanged and cannot be estimated from data; removing them keeps the
    support and the variates intact.
    """
    S = np.flatnonzero(np.linalg.norm(M, axis=1) > 0)
    if S.size == 0:
        return M
    sub = sigma[np.ix_(S, S)]
    out = M.copy()
    out[S] = pseudo_inverse(sub) @ (sub @ M[S])
    return out


def _normalize(M, sigma, identifiable=False):
    """Return ``M (M^T sigma M)^{-1/2}`` or ``None`` if the Gram is singular."""
    if identifiable:
        M = _identifiable_part(M, sigma)
    G = M.T @ sigma @ M
    G = 0.5 * (G + G.T)
    w = np.linalg.eigvalsh(G)
    if w[-1] <= 0 or w[0] <= 1e-8 * w[-1]:
        return None
    return M @ sym_inv_sqrt(G)


def _sparse_rows(rng, rows, support, r):
    M = np.zeros((rows, r))
    M[support] = rng.uniform(-1.0, 1.0, size=(len(support), r))
    return M


def _assemble(cfg, rng, draw_u, extra=None):
    lam = signal_lambdas(cfg.signal, cfg.r)
    sigma_x = block_covariance(rng, cfg.p, cfg.p1, cfg.r_pca, cfg.ridge_eps)
    sigma_y = block_covariance(rng, cfg.q, cfg.p1, cfg.r_pca, cfg.ridge_eps)
    for attempt in range(MAX_RETRIES):
        U = _normalize(draw_u(), sigma_x, cfg.identifiable)
        V = _normalize(rng.uniform(-1.0, 1.0, size=(cfg.q, cfg.r)), sigma_y, cfg.identifiable)
        if U is None or V is None:
            continue
        sigma_xy = sigma_x @ U @ np.diag(lam) @ V.T @ sigma_y
        gt = GroundTruth(sigma_x, sigma_y, sigma_xy, U, V, lam, info={"attempts": attempt + 1})
        try:
            gt.check()
        except Exception:
            continue
        if extra:
            extra(gt)
        return gt
    raise GenerationFailed(f"no valid draw after {MAX_RETRIES} attempts")


def gen_sparse_model(cfg, rng=None):
    """Row-sparse ``U*`` with ``n_nnz`` active rows."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng

    def draw():
        support = np.sort(rng.choice(cfg.p, size=cfg.n_nnz, replace=False))
        return _sparse_rows(rng, cfg.p, support, cfg.r)

    return _assemble(cfg, rng, draw)


def contiguous_groups(p, size):
    return tuple(tuple(range(s, min(s + size, p))) for s in range(0, p, size))


def gen_group_model(cfg, rng=None):
    """``U*`` supported on ``active_groups`` contiguous groups."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    groups = contiguous_groups(cfg.p, cfg.group_size)

    def draw():
        active = np.sort(rng.choice(len(groups), size=cfg.active_groups, replace=False))
        support = np.array([j for a in active for j in groups[a]])
        return _sparse_rows(rng, cfg.p, support, cfg.r)

    def extra(gt):
        gt.partition = groups
        gt.info["group_size"] = cfg.group_size
        gt.info["active_groups"] = [
            gi + 1 for gi, grp in enumerate(groups) if np.any(gt.u_star[list(grp)])
        ]

    return _assemble(cfg, rng, draw, extra)


def gen_graph_model(cfg, rng=None):
    """``U* = Gamma^+ U_edge`` normalized, on a 2-D grid.

    ``U_edge`` is row-sparse over edges; the realized support size of
    ``Gamma U*`` is recorded in ``info``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    g = grid_graph(*cfg.grid)
    k = min(cfg.edge_support, g.m)

    def draw():
        support = np.sort(rng.choice(g.m, size=k, replace=False))
        return g.incidence_pinv @ _sparse_rows(rng, g.m, support, cfg.r)

    def extra(gt):
        gt.graph = g
        diffs = np.linalg.norm(g.incidence @ gt.u_star, axis=1)
        scale = max(float(np.max(diffs)), 1e-300)
        gt.info["edge_support_requested"] = k
        gt.info["edge_support_realized"] = int(np.sum(diffs > 1e-10 * scale))
        gt.info["grid"] = list(cfg.grid)

    return _assemble(cfg, rng, draw, extra)


GENERATORS = {
    "sparse": gen_sparse_model,
    "group": gen_group_model,
    "graph": gen_graph_model,
}


def generate(cfg, rng=None):
    return GENERATORS[cfg.regime](cfg, rng)


def sample_joint(gt, n, rng):
    """Draw ``n`` rows from ``N(0, joint)`` through its symmetric square root,
    which also covers degenerate covariances."""
    S = sym_sqrt(gt.joint())
    W = rng.standard_normal((n, S.shape[0])) @ S
    return W[:, :gt.p].copy(), W[:, gt.p:].copy()
