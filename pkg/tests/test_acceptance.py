"""Acceptance criteria AC-1 .. AC-11.

Each test records one PASS/FAIL line (printed in the pytest terminal
summary, or directly when run as ``python tests/test_acceptance.py``) and
then asserts the criterion at its stated tolerance.
"""
import functools
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from ccar3.admm import (  # noqa: E402
    AdmmConfig,
    graph_objective,
    group_objective,
    rho_max,
    solve_graph_tv,
    solve_group_l21,
    solve_ridge,
    solve_sparse_l21,
    sparse_objective,
)
from ccar3.cli import main as cli_main  # noqa: E402
from ccar3.estimators import FitOptions, cca_gep_oracle, fit_cca_rrr, normalize_y  # noqa: E402
from ccar3.evaluation import MethodSpec, benchmark_run, subspace_distance  # noqa: E402
from ccar3.graphs import build_graph  # noqa: E402
from ccar3.linalg import sample_covariance, sym_inv_sqrt  # noqa: E402
from ccar3.synthetic import SimConfig, generate, sample_joint  # noqa: E402

from oracles import subgradient_oracle  # noqa: E402

RESULTS = {}
BENCH_SEED = 2024


def record(ac, ok, detail, seconds=None):
    extra = f" [{seconds:.1f}s]" if seconds is not None else ""
    RESULTS[ac] = f"{ac} {'PASS' if ok else 'FAIL'}: {detail}{extra}"
    return ok


def median_of(rows, method, metric, **match):
    vals = [r[metric] for r in rows
            if r["method"] == method and r["status"] == "ok" and r[metric] is not None
            and all(r[k] == v for k, v in match.items())]
    return float(np.median(vals)) if vals else float("nan"), len(vals)


# -- AC-1 ----------------------------------------------------------------------

def test_ac1_oracle_equivalence():
    t0 = time.perf_counter()
    worst_corr = worst_dist = 0.0
    for seed in range(20):
        # dense U*; ridge_eps keeps Sigma_X full rank so both estimators apply
        cfg = SimConfig(regime="sparse", n=2000, p=10, q=6, r=3, p1=8, r_pca=4, n_nnz=10,
                        ridge_eps=0.5, seed=seed)
        rng = np.random.default_rng(seed)
        gt = generate(cfg, rng)
        X, Y = sample_joint(gt, cfg.n, rng)
        a = fit_cca_rrr(X, Y, FitOptions(r=3))
        b = cca_gep_oracle(X, Y, 3)
        worst_corr = max(worst_corr, float(np.max(np.abs(a.correlations - b.correlations))))
        worst_dist = max(worst_dist, subspace_distance(
            np.vstack([a.u_directions, a.v_directions]),
            np.vstack([b.u_directions, b.v_directions])))
    dt = time.perf_counter() - t0
    ok = worst_corr <= 1e-8 and worst_dist <= 1e-6 and dt < 10
    record("AC-1", ok, f"max |corr diff| {worst_corr:.2e} (<=1e-8), "
                       f"max stacked distance {worst_dist:.2e} (<=1e-6)", dt)
    assert ok, RESULTS["AC-1"]


# -- AC-2 ----------------------------------------------------------------------

def test_ac2_regression_loss_identity():
    t0 = time.perf_counter()
    n, p, q, r = 100, 8, 5, 2
    rng = np.random.default_rng(7)
    X = rng.standard_normal((n, p))
    Y = X[:, :q] @ rng.standard_normal((q, q)) + rng.standard_normal((n, q))
    Y0, W = normalize_y(Y)
    sx = sample_covariance(X)
    worst = 0.0
    for _ in range(50):
        U = rng.standard_normal((p, r))
        U = U @ sym_inv_sqrt(U.T @ sx @ U)
        V0 = np.linalg.qr(rng.standard_normal((q, r)))[0]
        lhs = np.linalg.norm(Y @ (W @ V0) - X @ U) ** 2
        rhs = np.linalg.norm(Y0 - X @ U @ V0.T) ** 2 + (r - q) * n
        worst = max(worst, abs(lhs - rhs))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 * n and dt < 5
    record("AC-2", ok, f"max identity gap {worst:.2e} (<= {1e-6 * n:.0e})", dt)
    assert ok, RESULTS["AC-2"]


# -- AC-3 ----------------------------------------------------------------------

def _kkt_blocks(X, Y, B, rho, labels, weights, eps):
    n = X.shape[0]
    G = (2.0 / n) * X.T @ (X @ B - Y)
    worst = 0.0
    for g in range(weights.shape[0]):
        idx = labels == g
        nb = np.linalg.norm(B[idx])
        if nb > 0:
            worst = max(worst, np.linalg.norm(G[idx] + rho * weights[g] * B[idx] / nb) - 10 * eps)
        else:
            worst = max(worst, np.linalg.norm(G[idx]) - rho * weights[g] - 10 * eps)
    return worst


def test_ac3_admm_correctness():
    t0 = time.perf_counter()
    eps = 1e-6
    n, p, q, b = 60, 12, 4, 10
    rng = np.random.default_rng(33)
    X = rng.standard_normal((b, n, p))
    Btrue = np.zeros((b, p, q))
    Btrue[:, :4] = rng.standard_normal((b, 4, q))
    Y = X @ Btrue + rng.standard_normal((b, n, q))
    cfg = AdmmConfig(eps=eps, max_iter=200_000)
    worst_rel = {}
    worst_kkt = -np.inf
    all_conv = True

    # sparse
    rhos = np.array([0.3 * rho_max(X[i], Y[i]) for i in range(b)])
    ref = subgradient_oracle(X, Y, rhos, np.arange(p), np.ones(p))
    rel = []
    for i in range(b):
        B, tr = solve_sparse_l21(X[i], Y[i], cfg.with_rho(rhos[i]))
        all_conv &= tr.converged
        f = sparse_objective(X[i], Y[i], B, rhos[i])
        rel.append(abs(f - ref[i]) / ref[i])
        worst_kkt = max(worst_kkt, _kkt_blocks(X[i], Y[i], B, rhos[i], np.arange(p), np.ones(p), eps))
    worst_rel["sparse"] = max(rel)

    # group: three blocks of four
    part = [list(range(k, k + 4)) for k in (0, 4, 8)]
    labels = np.repeat(np.arange(3), 4)
    w = np.full(3, 2.0)
    rhos = np.array([0.4 * rho_max(X[i], Y[i], "group", partition=part) for i in range(b)])
    ref = subgradient_oracle(X, Y, rhos, labels, w)
    rel = []
    for i in range(b):
        B, tr = solve_group_l21(X[i], Y[i], part, cfg.with_rho(rhos[i]))
        all_conv &= tr.converged
        f = group_objective(X[i], Y[i], B, part, rhos[i])
        rel.append(abs(f - ref[i]) / ref[i])
        worst_kkt = max(worst_kkt, _kkt_blocks(X[i], Y[i], B, rhos[i], labels, w, eps))
    worst_rel["group"] = max(rel)

    # graph: random graphs on 10 nodes with 12 edges (cycles included)
    pg, m = 10, 12
    pairs = [(i, j) for i in range(pg) for j in range(i + 1, pg)]
    graphs = [build_graph(pg, [pairs[k] for k in np.sort(rng.choice(len(pairs), m, replace=False))])
              for _ in range(b)]
    Xg = X[:, :, :pg]
    Yg = Xg @ np.stack([gr.incidence_pinv @ rng.standard_normal((m, q)) for gr in graphs]) \
        + rng.standard_normal((b, n, q))
    rhos = np.array([0.3 * rho_max(Xg[i], Yg[i], "graph", graph=graphs[i]) for i in range(b)])
    A = np.stack([np.asarray(gr.incidence) for gr in graphs])
    ref = subgradient_oracle(Xg, Yg, rhos, np.arange(m), np.ones(m), A=A)
    rel = []
    for i in range(b):
        B, tr = solve_graph_tv(Xg[i], Yg[i], graphs[i], cfg.with_rho(rhos[i]))
        all_conv &= tr.converged
        f = graph_objective(Xg[i], Yg[i], B, graphs[i], rhos[i])
        rel.append(abs(f - ref[i]) / ref[i])
    worst_rel["graph"] = max(rel)

    dt = time.perf_counter() - t0
    ok = all(v <= 1e-4 for v in worst_rel.values()) and worst_kkt <= 0 and all_conv and dt < 60
    detail = ", ".join(f"{k} rel gap {v:.1e}" for k, v in worst_rel.items())
    record("AC-3", ok, f"{detail} (<=1e-4); KKT excess {worst_kkt:.1e} (<=0); "
                       f"converged={all_conv}", dt)
    assert ok, RESULTS["AC-3"]


# -- AC-4 ----------------------------------------------------------------------

def test_ac4_ridge_dual():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n, p = 15, 40
        X = rng.standard_normal((n, p))
        Y = rng.standard_normal((n, 3))
        A = rng.standard_normal((p, p))
        for K in (np.eye(p), A @ A.T / p + 0.1 * np.eye(p)):
            rho = 0.5
            d = np.linalg.norm(solve_ridge(X, Y, K, rho, method="primal")
                               - solve_ridge(X, Y, K, rho, method="dual"))
            worst = max(worst, d)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 5
    record("AC-4", ok, f"max primal-dual Frobenius gap {worst:.2e} (<=1e-8)", dt)
    assert ok, RESULTS["AC-4"]


# -- AC-5 / AC-6 -------------------------------------------------------------------

SPARSE_METHODS = (MethodSpec("sparse", "sparse"), MethodSpec("pinv", "none", pinv=True))


@functools.lru_cache(maxsize=None)
def sparse_benchmark():
    regimes = [SimConfig(regime="sparse", n=500, p=100, q=30, r=3, signal="high"),
               SimConfig(regime="sparse", n=500, p=300, q=30, r=3, signal="high"),
               SimConfig(regime="sparse", n=2000, p=300, q=30, r=3, signal="high")]
    t0 = time.perf_counter()
    res = benchmark_run(regimes, SPARSE_METHODS, replicates=20, seed=BENCH_SEED)
    return res.rows, time.perf_counter() - t0


def test_ac5_sparse_trend():
    rows, dt = sparse_benchmark()
    sp300, k1 = median_of(rows, "sparse", "distance", p=300, n=500)
    pi300, k2 = median_of(rows, "pinv", "distance", p=300, n=500)
    sp2000, k3 = median_of(rows, "sparse", "distance", p=300, n=2000)
    ok_a = sp300 <= 0.75 * pi300
    ok_b = sp2000 <= 0.6 * sp300
    ok = ok_a and ok_b and dt < 15 * 60 and min(k1, k2, k3) == 20
    record("AC-5", ok, f"(a) sparse {sp300:.3f} vs pinv {pi300:.3f} at p=300 "
                       f"(ratio {sp300 / pi300:.2f} <= 0.75: {ok_a}); "
                       f"(b) n=2000 {sp2000:.3f} vs n=500 {sp300:.3f} "
                       f"(ratio {sp2000 / sp300:.2f} <= 0.60: {ok_b})", dt)
    assert ok, RESULTS["AC-5"]


def test_ac6_support_recovery():
    rows, _ = sparse_benchmark()
    size, k = median_of(rows, "sparse", "est_support_size", p=100, n=500)
    fnr, _ = median_of(rows, "sparse", "fnr", p=100, n=500)
    ok = size <= 50 and fnr <= 0.2 and k == 20
    sel = [r for r in rows if r["method"] == "sparse" and r["p"] == 100 and r["status"] == "ok"]
    exact = np.mean([r["fnr"] == 0 for r in sel])
    small = np.mean([r["est_support_size"] <= 5 * r["true_support_size"] for r in sel])
    record("AC-6", ok, f"median support {size:.1f} (<=50), median FNR {fnr:.2f} (<=0.2) "
                       f"over {k} seeds; supplementary: FNR=0 in {exact:.0%} of reps, "
                       f"support <= 5*s_u in {small:.0%}")
    assert ok, RESULTS["AC-6"]


# -- AC-7 ----------------------------------------------------------------------

def test_ac7_group_vs_sparse():
    regimes = [SimConfig(regime="group", n=500, p=p, q=30, r=3, signal="high") for p in (100, 300)]
    methods = [MethodSpec("group", "group"), MethodSpec("sparse", "sparse")]
    t0 = time.perf_counter()
    rows = benchmark_run(regimes, methods, replicates=20, seed=BENCH_SEED).rows
    dt = time.perf_counter() - t0
    parts, ok = [], dt < 15 * 60
    for p in (100, 300):
        g, _ = median_of(rows, "group", "distance", p=p)
        s, _ = median_of(rows, "sparse", "distance", p=p)
        ok &= g <= s
        parts.append(f"p={p}: group {g:.3f} vs sparse {s:.3f}")
    record("AC-7", ok, "; ".join(parts), dt)
    assert ok, RESULTS["AC-7"]


# -- AC-8 ----------------------------------------------------------------------

def test_ac8_graph_vs_sparse():
    regimes = [SimConfig(regime="graph", grid=(10, 10), n=500, q=30, r=3, signal="high")]
    methods = [MethodSpec("graph", "graph"), MethodSpec("sparse", "sparse")]
    t0 = time.perf_counter()
    rows = benchmark_run(regimes, methods, replicates=20, seed=BENCH_SEED).rows
    dt = time.perf_counter() - t0
    gd, _ = median_of(rows, "graph", "distance")
    sd, _ = median_of(rows, "sparse", "distance")
    gt, _ = median_of(rows, "graph", "tv_norm")
    st, _ = median_of(rows, "sparse", "tv_norm")
    ok = gd <= sd and gt <= 0.5 * st
    record("AC-8", ok, f"distance graph {gd:.3f} vs sparse {sd:.3f}; "
                       f"median ||Gamma U||_21 graph {gt:.3f} vs sparse {st:.3f} "
                       f"(ratio {gt / st:.2f} <= 0.50)", dt)
    assert ok, RESULTS["AC-8"]


# -- AC-9 ----------------------------------------------------------------------

def test_ac9_graph_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        p = int(rng.integers(1, 51))
        pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
        dens = rng.uniform(0, 0.3)
        g = build_graph(p, [e for e, keep in zip(pairs, rng.random(len(pairs)) < dens) if keep])
        G, P, L = g.incidence, g.projector, g.laplacian
        errs = [np.abs(P @ P - P).max(), np.abs(G @ P).max() if g.m else 0.0,
                np.abs(P + g.incidence_pinv @ G - np.eye(p)).max(),
                np.abs(L - G.T @ G).max(), abs(np.trace(P) - g.n_components)]
        worst = max(worst, max(errs))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 10
    record("AC-9", ok, f"max identity error {worst:.2e} (<=1e-9) over 50 graphs", dt)
    assert ok, RESULTS["AC-9"]


# -- AC-10 -----------------------------------------------------------------------

def test_ac10_metric_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    fails = []
    for i in range(200):
        d = int(rng.integers(2, 15))
        r = int(rng.integers(1, d))
        A, B, C = (rng.standard_normal((d, r)) for _ in range(3))
        dab = subspace_distance(A, B)
        R = rng.standard_normal((r, r)) + 3 * np.eye(r)
        checks = {
            "symmetry": dab == subspace_distance(B, A),
            "identity": subspace_distance(A, A @ R) <= 1e-10,
            "triangle": dab <= subspace_distance(A, C) + subspace_distance(C, B) + 1e-8,
            "invariance": abs(subspace_distance(A @ R, B) - dab) <= 1e-9
            and abs(subspace_distance(A, B @ R) - dab) <= 1e-9,
            "range": -1e-12 <= dab <= np.sqrt(r) + 1e-12,
        }
        fails += [f"{i}:{k}" for k, v in checks.items() if not v]
    dt = time.perf_counter() - t0
    ok = not fails and dt < 5
    record("AC-10", ok, f"{200 - len(set(f.split(':')[0] for f in fails))}/200 instances pass "
                        f"symmetry, identity, triangle, invariance", dt)
    assert ok, RESULTS["AC-10"] + f" {fails[:5]}"


# -- AC-11 -----------------------------------------------------------------------

def _tree(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


def test_ac11_determinism(tmp_path):
    t0 = time.perf_counter()
    sim = ["simulate", "--regime", "sparse", "--p", "60", "--q", "10", "--n", "200", "--r", "2",
           "--seed", "5"]
    for tag in ("s1", "s2"):
        assert cli_main([*sim, "--out", str(tmp_path / tag)]) == 0
    same_sim = _tree(tmp_path / "s1") == _tree(tmp_path / "s2")
    data = tmp_path / "s1"
    cv = ["cv", "--method", "sparse", "--r", "2", "--n-grid", "4", "--seed", "3",
          "--x", str(data / "X.csv"), "--y", str(data / "Y.csv")]
    for tag in ("c1", "c2"):
        assert cli_main([*cv, "--out", str(tmp_path / tag)]) == 0
    same_cv = _tree(tmp_path / "c1") == _tree(tmp_path / "c2")
    spec = {"regimes": [{"regime": "sparse", "n": 150, "p": 30, "q": 6, "r": 2},
                        {"regime": "graph", "grid": [4, 5], "n": 150, "q": 6, "r": 2}],
            "methods": [{"name": "sparse", "penalty": "sparse", "n_grid": 4, "folds": 3},
                        {"name": "pinv", "penalty": "none", "pinv": True}],
            "replicates": 3, "seed": 11}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    outs = {}
    for tag, jobs in (("b1", "1"), ("b1r", "1"), ("b4", "4")):
        assert cli_main(["benchmark", "--spec", str(tmp_path / "spec.json"), "--jobs", jobs,
                         "--out", str(tmp_path / tag)]) == 0
        outs[tag] = {k: v for k, v in _tree(tmp_path / tag).items() if k != "timings.csv"}
    same_bench = outs["b1"] == outs["b1r"]
    same_jobs = outs["b1"]["results.csv"] == outs["b4"]["results.csv"]
    dt = time.perf_counter() - t0
    ok = same_sim and same_cv and same_bench and same_jobs
    record("AC-11", ok, f"simulate identical={same_sim}, cv identical={same_cv}, "
                        f"benchmark identical={same_bench}, jobs 1 vs 4 results.csv "
                        f"identical={same_jobs}", dt)
    assert ok, RESULTS["AC-11"]


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
