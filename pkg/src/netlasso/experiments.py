"""End-to-end pipelines for the classification, housing, event-detection and
scaling experiments. Each returns a JSON-serializable report."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict

import networkx as nx
import numpy as np

from .admm import SolverConfig, solve
from .datasets import events as ev
from .datasets.housing import build_knn_graph, load_housing, read_housing_csv, split_indices
from .datasets.svm import SvmBenchmarkSpec, gen_svm_benchmark, svm_accuracy
from .graph import build_graph
from .inference import predict_node
from .nonconvex import NonconvexConfig, solve_nonconvex
from .objectives import QuadraticObjective
from .regpath import PathConfig, lambda_initial_heuristic, solve_path

log = logging.getLogger(__name__)

RECALL_LEVELS = (30, 29, 28, 27, 26, 24, 18)


def _path_records(path, metric_name):
    rows = []
    for pt in path.points:
        row = {"lambda": pt.lam, metric_name: pt.metric, "n_clusters": pt.n_clusters, "error": pt.error}
        if pt.result is not None:
            row.update(iterations=pt.result.iterations, converged=pt.result.converged,
                       objective=pt.result.objective, best_iter=pt.result.best_iter)
        rows.append(row)
    return rows


def _summarize(path, metric_name, better):
    vals = [(pt.metric, pt.lam) for pt in path.points if pt.metric is not None]
    best = better(vals, key=lambda t: t[0]) if vals else (None, None)
    return {
        "best": best[0],
        "best_lambda": best[1],
        "lambda_critical_est": path.lambda_critical_est,
        "stop_reason": path.stop_reason,
        "path": _path_records(path, metric_name),
    }


# -- networked SVM ------------------------------------------------------------

def run_svm(spec=SvmBenchmarkSpec(), cfg=None, pcfg=None, ncfg=None, modes=("convex", "nonconvex")):
    cfg = cfg or SolverConfig()
    pcfg = pcfg or PathConfig()
    bench = gen_svm_benchmark(spec)
    g = bench.graph
    metric = lambda lam, res: svm_accuracy(bench, res.x)
    report = {
        "experiment": "svm",
        "params": {"spec": asdict(spec), "rho": cfg.rho, "alpha": pcfg.alpha},
        "graph": {"nodes": g.m, "edges": g.n, "inter_group_fraction": bench.inter_group_fraction},
    }
    for mode in modes:
        t0 = time.perf_counter()
        path = solve_path(g, cfg, pcfg, mode, ncfg or NonconvexConfig(base=cfg), metric)
        summary = _summarize(path, "accuracy", max)
        summary["seconds"] = time.perf_counter() - t0
        report[mode] = summary
        if mode == "convex":
            report["local_baseline"] = path.points[0].metric
            report["global_baseline"] = path.points[-1].metric if path.stop_reason == "consensus" else None
    report["table"] = {
        "local_svm": report.get("local_baseline"),
        "global_svm": report.get("global_baseline"),
        "convex": report.get("convex", {}).get("best"),
        "nonconvex": report.get("nonconvex", {}).get("best"),
    }
    return report


# -- housing ------------------------------------------------------------------

def consensus_regression(train, mu):
    """Direct solve of the all-nodes-agree problem: one ridge regression over
    every training sale, ridge weight summed over nodes."""
    F = np.hstack([train.features, np.ones((train.n, 1))])
    D = np.diag([1.0] * (F.shape[1] - 1) + [0.0])
    return np.linalg.solve(F.T @ F + mu * train.n * D, F.T @ train.price)


def run_housing(csv_path, n_test=200, seed=0, k=5, mu=0.5, cfg=None, pcfg=None, ncfg=None,
                modes=("convex", "nonconvex")):
    cfg = cfg or SolverConfig()
    pcfg = pcfg or PathConfig()
    raw, _ = read_housing_csv(csv_path)
    n = len(raw["price"])
    train_idx, test_idx = split_indices(n, n_test, seed)
    data = load_housing(csv_path, train_idx)
    train, test = data.subset(train_idx), data.subset(test_idx)
    objectives = train.objectives(mu)
    g, test_nbrs = build_knn_graph(train.latitude, train.longitude, k, test.latitude, test.longitude,
                                   objectives=objectives)
    design = np.hstack([test.features, np.ones((test.n, 1))])

    def mse_for(X):
        preds = np.array([predict_node(X, nb) @ design[t] for t, nb in enumerate(test_nbrs)])
        return float(np.mean((preds - test.price) ** 2))

    metric = lambda lam, res: mse_for(res.x)
    x_cons = consensus_regression(train, mu)
    report = {
        "experiment": "housing",
        "params": {"n_test": n_test, "seed": seed, "k": k, "mu": mu, "rho": cfg.rho, "alpha": pcfg.alpha},
        "data": {"records": n, "skipped": data.n_skipped, "frac_missing_any": data.frac_missing_any},
        "graph": {"nodes": g.m, "edges": g.n},
        "consensus_baseline": mse_for(np.tile(x_cons, (g.m, 1))),
        "naive_mean_baseline": float(np.mean(test.price ** 2)),
    }
    for mode in modes:
        t0 = time.perf_counter()
        path = solve_path(g, cfg, pcfg, mode, ncfg or NonconvexConfig(base=cfg), metric)
        summary = _summarize(path, "mse", min)
        summary["seconds"] = time.perf_counter() - t0
        report[mode] = summary
        if mode == "convex":
            report["geographic_baseline"] = path.points[0].metric
    report["table"] = {
        "geographic": report.get("geographic_baseline"),
        "regularized_linear_regression": report["consensus_baseline"],
        "naive_mean": report["naive_mean_baseline"],
        "convex": report.get("convex", {}).get("best"),
        "nonconvex": report.get("nonconvex", {}).get("best"),
    }
    return report


# -- event detection ----------------------------------------------------------

def event_curve(series, truth, lam, mu_grid, k_min=2, mode="convex", cfg=None, ncfg=None):
    """(mu, n_predicted, n_correct) per mu, warm-starting across the mu sweep."""
    cfg = cfg or SolverConfig()
    xbar = ev.detrend_series(series)
    warm = None
    rows = []
    for mu in sorted(mu_grid):
        g = ev.event_graph(xbar, mu)
        if mode == "convex":
            res = solve(g, lam, cfg, warm)
        else:
            res = solve_nonconvex(g, lam, ncfg or NonconvexConfig(base=cfg), warm)
        warm = res.state
        pred = ev.detect_events(res.x, k_min)
        rows.append({"mu": float(mu), "predicted": len(pred), "correct": ev.match_events(pred, truth),
                     "iterations": res.iterations, "converged": res.converged})
    return rows


def poisson_curve(series, truth, eps_grid, k_min=2):
    rows = []
    for eps, pred in ev.poisson_baseline(series, eps_grid, k_min).items():
        rows.append({"epsilon": eps, "predicted": len(pred), "correct": ev.match_events(pred, truth)})
    return rows


def default_mu_grid(n=60, lo=0.5, hi=400.0):
    return list(np.geomspace(lo, hi, n))


def default_eps_grid(n=80):
    return list(np.geomspace(1e-30, 1e-1, n))


def run_events(series, truth, lam=2.0, mu_grid=None, eps_grid=None, k_min=2, cfg=None, ncfg=None,
               modes=("convex", "nonconvex"), levels=RECALL_LEVELS):
    mu_grid = default_mu_grid() if mu_grid is None else mu_grid
    eps_grid = default_eps_grid() if eps_grid is None else eps_grid
    report = {
        "experiment": "events",
        "params": {"lambda": lam, "k_min": k_min, "mu_grid": [float(m) for m in mu_grid],
                   "eps_grid": [float(e) for e in eps_grid]},
        "data": {"T": series.T, "n_truth": len(truth)},
    }
    curves = {}
    for mode in modes:
        t0 = time.perf_counter()
        curves[mode] = event_curve(series, truth, lam, mu_grid, k_min, mode, cfg, ncfg)
        report[mode] = {"curve": curves[mode], "seconds": time.perf_counter() - t0}
    curves["poisson"] = poisson_curve(series, truth, eps_grid, k_min)
    report["poisson"] = {"curve": curves["poisson"]}
    levels = [r for r in levels if r <= len(truth)]
    report["table"] = {
        name: {str(r): n for r, n in ev.recall_table(((row["predicted"], row["correct"]) for row in c), levels).items()}
        for name, c in curves.items()
    }
    return report


# -- scaling ------------------------------------------------------------------

def regular_quadratic_graph(nodes, dim, seed=0):
    rng = np.random.default_rng(seed)
    G = nx.random_regular_graph(3, nodes, seed=int(rng.integers(2**31)))
    A = rng.standard_normal((nodes, dim))
    edges = [(u, v, 1.0) for u, v in G.edges()]
    return build_graph(nodes, dim, edges, [QuadraticObjective(a) for a in A])


def mid_path_lambda(g, alpha=2.0, steps=6, seed=0):
    """A lambda halfway along a 12-point geometric path from the heuristic start."""
    x0 = np.stack([o.a for o in g.objectives])
    return lambda_initial_heuristic(g, x0, seed=seed) * alpha**steps


def run_bench(nodes=(2000,), dims=(50,), seed=0, cfg=None, lam=None):
    cfg = cfg or SolverConfig()
    rows = []
    for m in nodes:
        if m < 4 or m % 2:
            raise ValueError("3-regular graphs need an even node count >= 4")
        for q in dims:
            g = regular_quadratic_graph(m, q, seed)
            lam_used = mid_path_lambda(g, seed=seed) if lam is None else lam
            t0 = time.perf_counter()
            res = solve(g, lam_used, cfg)
            dt = time.perf_counter() - t0
            rows.append({"nodes": m, "dim": q, "unknowns": m * q, "lambda": lam_used,
                         "iterations": res.iterations, "converged": res.converged, "seconds": dt})
    return rows
