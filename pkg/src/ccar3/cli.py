"""Command-line front end: ``ccar3 {simulate,fit,cv,benchmark}``.

Settings come from flags, an optional ``--config`` JSON file and built-in
defaults, in that order of precedence. Logs go to stderr; stdout only
carries the final JSON summary when ``--json`` is given.
"""
import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .admm import AdmmConfig
from .estimators import (
    FitOptions,
    GraphPenalty,
    GroupPenalty,
    NoPenalty,
    RidgePenalty,
    SparsePenalty,
    cca_gep_oracle,
    fit,
)
from .evaluation import ROW_FIELDS, MethodSpec, benchmark_run, kfold_cv
from .exceptions import CCAError, CvFailed, EmptyModel, InvalidInput, RankDeficient
from .graphs import build_graph, read_edge_csv, write_edge_csv
from .synthetic import REGIMES, SIGNAL_INTERVALS, SimConfig, generate, sample_joint

log = logging.getLogger("ccar3")

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_RANK, EXIT_EMPTY, EXIT_CV = 0, 1, 2, 3, 4, 5
JOBS_ENV = "CCAR3_JOBS"
METHODS = ("rrr", "pinv", "gep", "sparse", "group", "graph", "ridge")

SIM_DEFAULTS = {
    "regime": "sparse", "n": 500, "p": 100, "q": 30, "r": 3, "r_pca": 5, "p1": 20,
    "n_nnz": 10, "group_size": 10, "active_groups": 5, "grid": None, "edge_support": 5,
    "signal": "high", "seed": 0, "ridge_eps": 0.0, "out": None,
}
FIT_DEFAULTS = {
    "x": None, "y": None, "method": "rrr", "r": 1, "rho": None, "edges": None,
    "group_size": None, "shrink_y": False, "center": True, "u_recovery": "via_B",
    "delta": 1.0, "eps": 1e-5, "max_iter": 5000, "out": None,
}
CV_DEFAULTS = dict(FIT_DEFAULTS, shrink_y=True, folds=5, grid=None, n_grid=10,
                   grid_lo=1e-3, grid_hi=1.0, seed=0)
BENCH_DEFAULTS = {"spec": None, "out": None, "jobs": None, "seed": None, "replicates": None,
                  "n_val": None}
DEFAULTS = {"simulate": SIM_DEFAULTS, "fit": FIT_DEFAULTS, "cv": CV_DEFAULTS,
            "benchmark": BENCH_DEFAULTS}


class UsageError(Exception):
    pass


# -- IO helpers ----------------------------------------------------------------

def fmt_float(v):
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(v))


def write_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        for row in M:
            w.writerow([fmt_float(v) for v in row])


def read_matrix(path):
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise InvalidInput(f"{path}: empty matrix file")
    if len({len(r) for r in rows}) != 1:
        raise InvalidInput(f"{path}: ragged rows")
    return np.array(rows, dtype=float)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_table(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(fields)
        for row in rows:
            out = []
            for f in fields:
                v = row.get(f)
                if v is None:
                    out.append("")
                elif isinstance(v, (float, np.floating)):
                    out.append(fmt_float(v) if math.isfinite(v) else "")
                else:
                    out.append(str(v))
            w.writerow(out)


def _outdir(path):
    if path is None:
        raise UsageError("--out is required")
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- config resolution ---------------------------------------------------------

def resolve(command, args):
    """Merge defaults < config file < explicit flags; reject unknown keys."""
    defaults = DEFAULTS[command]
    merged = dict(defaults)
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    return merged


def _parse_grid_dims(v):
    if v is None or isinstance(v, (list, tuple)):
        return None if v is None else tuple(int(x) for x in v)
    try:
        a, b = str(v).lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise UsageError(f"grid must look like ROWSxCOLS, got {v!r}") from None


def _parse_rho_grid(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    try:
        return [float(x) for x in str(v).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"grid must be comma-separated numbers, got {v!r}") from None


# -- commands ------------------------------------------------------------------

def cmd_simulate(cfg):
    out = _outdir(cfg["out"])
    sim_keys = {k: v for k, v in cfg.items() if k != "out"}
    sim_keys["grid"] = _parse_grid_dims(sim_keys["grid"])
    sim = SimConfig(**sim_keys)
    rng = np.random.default_rng(sim.seed)
    gt = generate(sim, rng)
    X, Y = sample_joint(gt, sim.n, rng)
    write_matrix(out / "X.csv", X)
    write_matrix(out / "Y.csv", Y)
    write_matrix(out / "U_star.csv", gt.u_star)
    write_matrix(out / "V_star.csv", gt.v_star)
    write_json(out / "ground_truth.json", gt.to_dict())
    if gt.graph is not None:
        write_edge_csv(out / "edges.csv", gt.graph)
    meta = _meta("simulate", cfg, {"seed": sim.seed, "sim_config": sim.to_dict()})
    write_json(out / "meta.json", meta)
    log.info("simulated %s regime: n=%d p=%d q=%d into %s", sim.regime, sim.n, sim.p, sim.q, out)
    return {"out": str(out), "support": [int(i) + 1 for i in gt.support],
            "lambda_star": gt.lambda_star.tolist()}


def _meta(command, cfg, extra=None):
    # the output location is not a model setting; leaving it out keeps reruns
    # into different directories byte-identical
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    meta = {"command": command, "version": __version__, "config": cfg}
    if extra:
        meta.update(extra)
    return meta


def _load_xy(cfg):
    if not cfg["x"] or not cfg["y"]:
        raise UsageError("--x and --y are required")
    return read_matrix(cfg["x"]), read_matrix(cfg["y"])


def _fit_options(cfg, p):
    method = cfg["method"]
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {METHODS}")
    rho = cfg["rho"]
    rho = 0.0 if rho is None else float(rho)
    if method in ("rrr", "pinv", "gep"):
        pen = NoPenalty()
    elif method == "sparse":
        pen = SparsePenalty(rho)
    elif method == "group":
        if not cfg["group_size"]:
            raise UsageError("--method group needs --group-size")
        pen = GroupPenalty.contiguous(p, int(cfg["group_size"]), rho)
    elif method == "graph":
        if not cfg["edges"]:
            raise UsageError("--method graph needs --edges")
        pen = GraphPenalty(build_graph(p, read_edge_csv(cfg["edges"])), rho)
    else:
        pen = RidgePenalty(rho)
    admm_cfg = AdmmConfig(delta=float(cfg["delta"]), eps=float(cfg["eps"]),
                          max_iter=int(cfg["max_iter"]))
    return FitOptions(r=int(cfg["r"]), penalty=pen, shrink_sigma_y=bool(cfg["shrink_y"]),
                      u_recovery=cfg["u_recovery"], admm=admm_cfg,
                      center=bool(cfg["center"]), pinv=(method == "pinv"))


def _trace_dict(model):
    if model.trace is None:
        return {"solver": "closed_form", "converged": True, "iterations": 0,
                "primal_residual": 0.0, "dual_residual": 0.0, "objective_history": [],
                "flags": []}
    d = model.trace.to_dict()
    d["solver"] = "admm"
    return d


def _model_dict(model, cfg, command):
    d = model.to_dict()
    d["meta"] = _meta(command, cfg)
    return d


def cmd_fit(cfg):
    out = _outdir(cfg["out"])
    X, Y = _load_xy(cfg)
    opts = _fit_options(cfg, X.shape[1])
    if opts.penalty.kind != "none" and cfg["rho"] is None:
        raise UsageError(f"--method {cfg['method']} needs --rho (or use the cv command)")
    if cfg["method"] == "gep":
        model = cca_gep_oracle(X, Y, opts.r, center=opts.center)
    else:
        model = fit(X, Y, opts)
    write_json(out / "model.json", _model_dict(model, cfg, "fit"))
    write_json(out / "trace.json", _trace_dict(model))
    log.info("fit %s: rank %d, correlations %s", model.method, model.rank,
             np.round(model.correlations, 4).tolist())
    return {"out": str(out), "method": model.method, "correlations": model.correlations.tolist()}


def cmd_cv(cfg):
    out = _outdir(cfg["out"])
    k = int(cfg["folds"])
    if k < 2:
        raise UsageError("--folds must be >= 2")
    if cfg["method"] == "gep":
        raise UsageError("cv does not apply to --method gep")
    X, Y = _load_xy(cfg)
    opts = _fit_options(cfg, X.shape[1])
    grid = _parse_rho_grid(cfg["grid"])
    report = kfold_cv(X, Y, opts, grid=grid, k=k, seed=int(cfg["seed"]),
                      n_grid=int(cfg["n_grid"]),
                      grid_range=(float(cfg["grid_lo"]), float(cfg["grid_hi"])))
    rep = report.to_dict()
    rep["folds"] = k
    rep["seed"] = int(cfg["seed"])
    rep["meta"] = _meta("cv", cfg)
    write_json(out / "cv_report.json", rep)
    if report.refit is None:
        raise EmptyModel(report.selected_rho, report.refit_error or "refit failed")
    write_json(out / "model.json", _model_dict(report.refit, cfg, "cv"))
    write_json(out / "trace.json", _trace_dict(report.refit))
    log.info("cv selected rho=%g (index %d)", report.selected_rho, report.selected_index)
    return {"out": str(out), "selected_rho": report.selected_rho}


def _load_spec(path):
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read benchmark spec {path}: {exc}") from None
    allowed = {"regimes", "methods", "replicates", "seed", "n_val"}
    if not isinstance(spec, dict) or "regimes" not in spec or "methods" not in spec:
        raise UsageError("benchmark spec needs 'regimes' and 'methods'")
    unknown = sorted(set(spec) - allowed)
    if unknown:
        raise UsageError(f"unknown benchmark spec keys: {', '.join(unknown)}")
    return spec


def _default_jobs():
    v = os.environ.get(JOBS_ENV)
    if not v:
        return 1
    try:
        return max(1, int(v))
    except ValueError:
        raise UsageError(f"{JOBS_ENV} must be an integer, got {v!r}") from None


def cmd_benchmark(cfg):
    if not cfg["spec"]:
        raise UsageError("--spec is required")
    out = _outdir(cfg["out"])
    spec = _load_spec(cfg["spec"])
    replicates = cfg["replicates"] if cfg["replicates"] is not None else spec.get("replicates", 1)
    seed = cfg["seed"] if cfg["seed"] is not None else spec.get("seed", 0)
    n_val = cfg["n_val"] if cfg["n_val"] is not None else spec.get("n_val", 500)
    jobs = int(cfg["jobs"]) if cfg["jobs"] is not None else _default_jobs()
    try:
        regimes = []
        for reg in spec["regimes"]:
            reg = dict(reg)
            if "grid" in reg:
                reg["grid"] = _parse_grid_dims(reg["grid"])
            regimes.append(SimConfig(**reg))
        methods = []
        for m in spec["methods"]:
            m = dict(m)
            if "grid_range" in m:
                m["grid_range"] = tuple(m["grid_range"])
            methods.append(MethodSpec(**m))
        result = benchmark_run(regimes, methods, int(replicates), seed=int(seed), jobs=jobs,
                               n_val=int(n_val))
    except TypeError as exc:
        raise UsageError(f"invalid benchmark spec: {exc}") from None
    write_table(out / "results.csv", result.rows, ROW_FIELDS)
    summary_fields = list(result.summary[0].keys()) if result.summary else []
    write_table(out / "summary.csv", result.summary, summary_fields)
    write_table(out / "timings.csv", result.timings,
                ["regime_index", "method", "replicate", "seconds"])
    # jobs only affects wall time, so it stays out of the deterministic outputs
    meta_cfg = {k: v for k, v in cfg.items() if k != "jobs"}
    write_json(out / "results.json", {
        "schema_version": 1,
        "meta": _meta("benchmark", meta_cfg, {"seed": int(seed), "replicates": int(replicates),
                                               "n_val": int(n_val)}),
        "regimes": [r.to_dict() for r in regimes],
        "methods": [m.to_dict() for m in methods],
        "rows": result.rows,
        "summary": result.summary,
    })
    ok = sum(1 for r in result.rows if r["status"] == "ok")
    log.info("benchmark: %d/%d rows succeeded", ok, len(result.rows))
    if ok == 0:
        raise CCAError("no benchmark row succeeded")
    return {"out": str(out), "rows": len(result.rows), "succeeded": ok}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "cv": cmd_cv, "benchmark": cmd_benchmark}


# -- argument parsing -------------------------------------------------------------

def _add_fit_args(sp):
    sp.add_argument("--x", help="CSV matrix of X (no header)")
    sp.add_argument("--y", help="CSV matrix of Y (no header)")
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--r", type=int)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--edges", help="edge list CSV with header src,dst (1-based)")
    sp.add_argument("--group-size", dest="group_size", type=int,
                    help="contiguous groups of this size")
    sp.add_argument("--shrink-y", dest="shrink_y", action="store_const", const=True,
                    help="Ledoit-Wolf shrinkage of the Y covariance")
    sp.add_argument("--no-shrink-y", dest="shrink_y", action="store_const", const=False)
    sp.add_argument("--center", action="store_const", const=True,
                    help="column-center X and Y (default)")
    sp.add_argument("--no-center", dest="center", action="store_const", const=False)
    sp.add_argument("--u-recovery", dest="u_recovery", choices=("via_B", "via_sqrt"))
    sp.add_argument("--delta", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--out")


def build_parser():
    parser = argparse.ArgumentParser(prog="ccar3", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings (flags take precedence)")
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    common.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset")
    sp.add_argument("--regime", choices=REGIMES)
    for name in ("n", "p", "q", "r", "r_pca", "p1", "n_nnz", "group_size", "active_groups",
                 "edge_support", "seed"):
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    sp.add_argument("--grid", help="grid graph size, e.g. 10x10")
    sp.add_argument("--signal", choices=tuple(SIGNAL_INTERVALS))
    sp.add_argument("--ridge-eps", dest="ridge_eps", type=float)
    sp.add_argument("--out")

    sp = sub.add_parser("fit", parents=[common], help="fit canonical directions")
    _add_fit_args(sp)

    sp = sub.add_parser("cv", parents=[common], help="select rho by k-fold CV and refit")
    _add_fit_args(sp)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--grid", help="comma-separated rho values")
    sp.add_argument("--n-grid", dest="n_grid", type=int)
    sp.add_argument("--grid-lo", dest="grid_lo", type=float)
    sp.add_argument("--grid-hi", dest="grid_hi", type=float)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("benchmark", parents=[common], help="run a simulation benchmark")
    sp.add_argument("--spec", help="JSON with regimes, methods, replicates, seed")
    sp.add_argument("--out")
    sp.add_argument("--jobs", type=int, help=f"worker processes (default ${JOBS_ENV} or 1)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--n-val", dest="n_val", type=int)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = resolve(args.command, args)
        summary = COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ccar3 {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RankDeficient as exc:
        print(f"ccar3: rank deficiency: {exc}", file=sys.stderr)
        return EXIT_RANK
    except EmptyModel as exc:
        print(f"ccar3: empty model: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except CvFailed as exc:
        print(f"ccar3: cross-validation failed: {exc}", file=sys.stderr)
        return EXIT_CV
    except InvalidInput as exc:
        parser.print_usage(sys.stderr)
        print(f"ccar3 {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CCAError, OSError) as exc:
        print(f"ccar3: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    if args.json:
        json.dump(_clean(summary), sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
