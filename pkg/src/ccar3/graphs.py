"""Incidence, Laplacian and component projector for the graph penalty."""
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .exceptions import InvalidGraph, InvalidInput
from .linalg import RANK_TOL, pseudo_inverse


@dataclass(frozen=True, eq=False)
class GraphStructure:
    """Immutable graph on ``p`` nodes with cached derived operators.

    Node indices are 0-based internally; edges are stored as ``(k, k')`` with
    ``k < k'`` and oriented ``+1`` at ``k``, ``-1`` at ``k'``.
    """

    p: int
    edges: tuple
    incidence: np.ndarray = field(repr=False)
    incidence_pinv: np.ndarray = field(repr=False)
    laplacian: np.ndarray = field(repr=False)
    projector: np.ndarray = field(repr=False)
    components: tuple = field(repr=False)

    @property
    def m(self):
        return len(self.edges)

    @property
    def n_components(self):
        return len(self.components)

    def tv_norm(self, B):
        """``||Gamma B||_{21}``."""
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if self.m == 0:
            return 0.0
        return float(np.linalg.norm(self.incidence @ B, axis=1).sum())


def build_graph(p, edges, one_based=False):
    """Build a :class:`GraphStructure` from a node count and an edge list."""
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise InvalidGraph(f"node count must be a positive integer, got {p!r}")
    p = int(p)
    offset = 1 if one_based else 0
    seen = set()
    canon = []
    for e in edges:
        a, b = (int(v) - offset for v in e)
        if a == b:
            raise InvalidGraph(f"self-loop at node {a + offset}")
        if not (0 <= a < p and 0 <= b < p):
            raise InvalidGraph(f"edge {tuple(e)} has an endpoint outside [{offset}, {p - 1 + offset}]")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise InvalidGraph(f"duplicate edge {tuple(e)}")
        seen.add(key)
        canon.append(key)
    m = len(canon)

    gamma = np.zeros((m, p))
    if m:
        rows = np.arange(m)
        src = np.array([e[0] for e in canon])
        dst = np.array([e[1] for e in canon])
        gamma[rows, src] = 1.0
        gamma[rows, dst] = -1.0
    laplacian = gamma.T @ gamma

    if m:
        adj = coo_matrix((np.ones(m), (src, dst)), shape=(p, p))
        n_c, labels = connected_components(adj, directed=False)
    else:
        n_c, labels = p, np.arange(p)
    # order components by their smallest node for reproducibility
    comps = {}
    for node, lab in enumerate(labels):
        comps.setdefault(lab, []).append(node)
    components = tuple(sorted((tuple(c) for c in comps.values()), key=lambda c: c[0]))

    projector = np.zeros((p, p))
    for comp in components:
        idx = np.array(comp)
        projector[np.ix_(idx, idx)] = 1.0 / len(comp)

    pinv = pseudo_inverse(gamma) if m else np.zeros((p, 0))

    for arr in (gamma, pinv, laplacian, projector):
        arr.setflags(write=False)
    return GraphStructure(
        p=p,
        edges=tuple(canon),
        incidence=gamma,
        incidence_pinv=pinv,
        laplacian=laplacian,
        projector=projector,
        components=components,
    )


def grid_graph(rows, cols):
    """4-neighbour lattice; node ``(i, j)`` has index ``i * cols + j``."""
    if rows < 1 or cols < 1:
        raise InvalidInput("grid dimensions must be positive")
    edges = []
    for i in range(rows):
        for j in range(cols):
            k = i * cols + j
            if j + 1 < cols:
                edges.append((k, k + 1))
            if i + 1 < rows:
                edges.append((k, k + cols))
    return build_graph(rows * cols, edges)


def knn_graph(coords, k):
    """Symmetrized k-nearest-neighbour graph under Euclidean distance.

    Ties are broken in favour of the lower node index.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    n = coords.shape[0]
    if not (1 <= k < n):
        raise InvalidInput(f"k must satisfy 1 <= k < {n}, got {k}")
    dist = cdist(coords, coords)
    edges = set()
    for i in range(n):
        d = dist[i].copy()
        d[i] = np.inf
        # stable sort keeps lower indices first among equal distances
        order = np.argsort(d, kind="stable")[:k]
        for j in order:
            edges.add((min(i, int(j)), max(i, int(j))))
    return build_graph(n, sorted(edges))


def spectral_constants(g, rank_tol=RANK_TOL):
    """Return ``(kappa2, sigma_max_L, rho_gamma)``.

    ``kappa2`` is the smallest non-zero Laplacian eigenvalue (``None`` for an
    edgeless graph); ``rho_gamma`` is the largest column norm of the incidence
    pseudo-inverse.
    """
    w = np.linalg.eigvalsh(g.laplacian)
    top = float(w[-1]) if w.size else 0.0
    if g.m == 0 or top <= 0:
        return None, 0.0, 0.0
    nz = w[w > rank_tol * top]
    kappa2 = float(nz[0])
    rho_gamma = float(np.max(np.linalg.norm(g.incidence_pinv, axis=0)))
    return kappa2, top, rho_gamma


def read_edge_csv(path):
    """Read a ``src,dst`` CSV with 1-based node indices; returns 0-based pairs."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["src", "dst"]:
            raise InvalidGraph(f"{path}: expected header 'src,dst'")
        edges = []
        for row in reader:
            if not row:
                continue
            edges.append((int(row[0]) - 1, int(row[1]) - 1))
    return edges


def write_edge_csv(path, g):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for a, b in g.edges:
            w.writerow([a + 1, b + 1])
