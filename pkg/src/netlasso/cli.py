"""``netlasso`` command-line interface.

Exit codes: 0 success, 2 usage, 3 parse, 4 non-convergence, 5 resource.
All randomness derives from ``--seed`` through ``numpy.random.default_rng``
(PCG64).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .admm import SolverConfig, extract_clusters, solve
from .graph import GraphError, GraphParseError, build_graph, format_edge_list, parse_edge_list
from .inference import predict_node
from .nonconvex import NonconvexConfig, solve_nonconvex
from .objectives import ProxError, objective_from_dict, objective_to_dict
from .regpath import PathConfig, solve_path

log = logging.getLogger("netlasso")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NONCONVERGED, EXIT_RESOURCE = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


class ParseError(Exception):
    pass


SCHEMAS = {
    "manifest": "manifest.schema.json",
    "result": "result.schema.json",
    "path": "path.schema.json",
    "report": "report.schema.json",
    "bench": "bench.schema.json",
    "infer": "infer.schema.json",
    "dataset": "dataset.schema.json",
}


def load_schema(name):
    """JSON schema for an output document kind (see ``SCHEMAS``)."""
    text = resources.files("netlasso").joinpath("schemas", SCHEMAS[name]).read_text()
    return json.loads(text)


# -- run bookkeeping ------------------------------------------------------------

class Run:
    """Collects outputs, timings and input fingerprints for one command."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = _without_out_dir(argv)
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_name = self._free_manifest_name()
        self.outputs = []
        self.datasets = {}
        self.timing = {}

    def _free_manifest_name(self):
        # One manifest per distinct invocation. A deterministic rerun rewrites
        # identical bytes; otherwise an existing manifest is never replaced.
        key = hashlib.sha256(json.dumps([__version__, self.argv]).encode()).hexdigest()[:12]
        name, i = f"manifest-{key}.json", 0
        if self.args.deterministic:
            return name
        while (self.out_dir / name).exists():
            i += 1
            name = f"manifest-{key}.{i}.json"
        return name

    def fingerprint(self, path):
        h = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.datasets[str(path)] = h

    def phase(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timing[name] = time.perf_counter() - self.t0

        return _Timer()

    def write_text(self, name, text):
        (self.out_dir / name).write_text(text)
        self.outputs.append(name)

    def write_json(self, name, doc):
        doc = dict(doc, manifest=self.manifest_name)
        if self.args.deterministic:
            doc = _strip_timing(doc)
        self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def write_matrix(self, name, X):
        buf = io.StringIO()
        np.savetxt(buf, np.atleast_2d(X), fmt="%.17g", delimiter=",")
        self.write_text(name, buf.getvalue())

    def write_rows(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.write_text(name, buf.getvalue())

    def finish(self):
        config = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "out_dir")}
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "version": __version__,
            "config": config,
            "seed": self.args.seed,
            "datasets": self.datasets,
            "timing": None if self.args.deterministic else self.timing,
            "outputs": self.outputs,
        }
        (self.out_dir / self.manifest_name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _without_out_dir(argv):
    # the manifest sits in the output directory; recording it would make
    # identical runs into different directories differ
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out-dir":
            skip = True
        elif not a.startswith("--out-dir="):
            out.append(a)
    return out


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _jsonable(doc):
    return json.loads(json.dumps(doc, default=_json_default))


# -- input loading --------------------------------------------------------------

def load_problem(graph_path, objectives_path=None):
    try:
        text = Path(graph_path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read graph file: {err}") from None
    try:
        m, p, edges = parse_edge_list(text)
    except GraphParseError as err:
        raise ParseError(f"{graph_path}: {err}") from None
    objectives = None
    if objectives_path is not None:
        objectives = load_objectives(objectives_path)
        if len(objectives) != m:
            raise ParseError(f"{objectives_path}: {len(objectives)} objectives for {m} nodes")
    try:
        return build_graph(m, p, edges, objectives)
    except GraphError as err:
        raise ParseError(f"{graph_path}: {err}") from None


def load_objectives(path):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise UsageError(f"cannot read objectives file: {err}") from None
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}:{err.lineno}: {err.msg}") from None
    items = doc["objectives"] if isinstance(doc, dict) else doc
    out = []
    for i, d in enumerate(items):
        try:
            out.append(objective_from_dict(d))
        except (KeyError, ValueError, TypeError) as err:
            raise ParseError(f"{path}: objective {i}: {err}") from None
    return out


def load_matrix(path):
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as err:
        raise UsageError(f"cannot read matrix: {err}") from None
    except ValueError as err:
        raise ParseError(f"{path}: {err}") from None
    return X


def solver_config(args):
    workers = args.workers if args.workers is not None else SolverConfig.default_workers()
    try:
        return SolverConfig(rho=args.rho, eps_abs=args.eps_abs, eps_rel=args.eps_rel,
                            max_iter=args.max_iter, workers=workers, deterministic=args.deterministic)
    except ValueError as err:
        raise UsageError(str(err)) from None


def nonconvex_config(args, cfg):
    try:
        return NonconvexConfig(base=cfg, fixed_iters=args.fixed_iters, eps_log=args.eps_log)
    except ValueError as err:
        raise UsageError(str(err)) from None


def path_config(args):
    try:
        return PathConfig(alpha=args.alpha, lambda_initial=args.lambda_init, eps_path=args.eps_path,
                          max_lambdas=args.max_lambdas, seed=args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None


def _result_doc(g, res, mode, x_file, trace_file):
    clusters = extract_clusters(g, res)
    return {
        "lambda": res.lam,
        "mode": mode,
        "iterations": res.iterations,
        "converged": res.converged,
        "objective": res.objective,
        "best_iter": res.best_iter,
        "primal_residuals": res.primal_residuals,
        "dual_residuals": res.dual_residuals,
        "consensus_edges": [bool(c) for c in res.consensus_edges],
        "theta": [float(t) for t in res.theta],
        "clusters": [int(c) for c in clusters],
        "n_clusters": int(clusters.max()) + 1 if len(clusters) else 0,
        "x_file": x_file,
        "trace_file": trace_file,
    }


# -- commands -------------------------------------------------------------------

def cmd_solve(args, run):
    g = load_problem(args.graph, args.objectives)
    run.fingerprint(args.graph)
    if args.objectives:
        run.fingerprint(args.objectives)
    if not args.lam >= 0:
        raise UsageError("--lambda must be non-negative")
    cfg = solver_config(args)
    trace = io.StringIO()
    with run.phase("solve"):
        if args.mode == "convex":
            res = solve(g, args.lam, cfg, trace=trace)
        else:
            res = solve_nonconvex(g, args.lam, nonconvex_config(args, cfg), trace=trace)
    run.write_matrix("x.csv", res.x)
    run.write_text("trace.csv", trace.getvalue())
    run.write_json("result.json", _result_doc(g, res, args.mode, "x.csv", "trace.csv"))
    if args.mode == "convex" and not res.converged:
        log.error("no convergence within --max-iter=%d", cfg.max_iter)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_path(args, run):
    g = load_problem(args.graph, args.objectives)
    run.fingerprint(args.graph)
    if args.objectives:
        run.fingerprint(args.objectives)
    cfg = solver_config(args)
    with run.phase("path"):
        path = solve_path(g, cfg, path_config(args), args.mode, nonconvex_config(args, cfg))
    points = []
    for i, pt in enumerate(path.points):
        rec = {"index": i, "lambda": pt.lam, "metric": None, "n_clusters": pt.n_clusters, "error": pt.error}
        if pt.result is not None:
            x_file = f"x_{i:03d}.csv"
            run.write_matrix(x_file, pt.result.x)
            rec.update(objective=pt.result.objective, iterations=pt.result.iterations,
                       converged=pt.result.converged, x_file=x_file, metric=pt.result.objective)
            if args.mode == "nonconvex":
                rec["best_iter"] = pt.result.best_iter
        points.append(rec)
    doc = {
        "mode": args.mode,
        "metric_name": "objective",
        "points": points,
        "lambda_critical_est": path.lambda_critical_est,
        "stop_reason": path.stop_reason,
        "consensus_x": None if path.consensus_x is None else path.consensus_x.tolist(),
    }
    if args.plot_data:
        _plot_rows(run, "plot_data.csv", points, "metric")
    run.write_json("path.json", doc)
    return EXIT_OK


def _plot_rows(run, name, points, key):
    rows = [[repr(float(p["lambda"])), "" if p.get(key) is None else repr(float(p[key]))] for p in points]
    run.write_rows(name, ["lambda", "metric"], rows)


def cmd_infer(args, run):
    X = load_matrix(args.x)
    run.fingerprint(args.x)
    run.fingerprint(args.neighbors)
    try:
        doc = json.loads(Path(args.neighbors).read_text())
    except OSError as err:
        raise UsageError(f"cannot read neighbors: {err}") from None
    except json.JSONDecodeError as err:
        raise ParseError(f"{args.neighbors}:{err.lineno}: {err.msg}") from None
    rows = []
    with run.phase("infer"):
        for t, nb in enumerate(doc):
            try:
                pairs = [(int(j), float(w)) for j, w in nb]
                if any(not 0 <= j < len(X) for j, _ in pairs):
                    raise ValueError("neighbor index out of range")
                rows.append(predict_node(X, pairs, tol=args.tol))
            except (ValueError, TypeError) as err:
                raise ParseError(f"{args.neighbors}: new node {t}: {err}") from None
    run.write_matrix("x_new.csv", np.array(rows).reshape(len(rows), X.shape[1]))
    run.write_json("infer.json", {"n_new": len(rows), "x_file": "x_new.csv"})
    return EXIT_OK


def cmd_dataset(args, run):
    from .datasets import events as ev
    from .datasets.housing import build_knn_graph, load_housing, read_housing_csv, split_indices
    from .datasets.svm import SvmBenchmarkSpec, gen_svm_benchmark

    if args.name == "svm":
        spec = SvmBenchmarkSpec(n_nodes=args.nodes, n_groups=args.groups, seed=args.seed)
        with run.phase("generate"):
            bench = gen_svm_benchmark(spec)
        g = bench.graph
        test = {"W": bench.test_W.tolist(), "y": bench.test_y.tolist(), "groups": bench.groups.tolist()}
        run.write_text("test.json", json.dumps(test) + "\n")
    elif args.name == "housing":
        if not args.csv:
            raise UsageError("dataset housing needs --csv")
        run.fingerprint(args.csv)
        raw, _ = read_housing_csv(args.csv)
        tr, te = split_indices(len(raw["price"]), args.n_test, args.seed)
        data = load_housing(args.csv, tr)
        train, test = data.subset(tr), data.subset(te)
        g, nbrs = build_knn_graph(train.latitude, train.longitude, args.k, test.latitude, test.longitude,
                                  objectives=train.objectives(args.mu))
        run.write_text("test_neighbors.json", json.dumps(nbrs) + "\n")
        run.write_matrix("test_design.csv", np.hstack([test.features, np.ones((test.n, 1)), test.price[:, None]]))
    else:
        series, _ = _event_inputs(args, run)
        g = ev.event_graph(ev.detrend_series(series), args.mu)
    run.write_text("graph.txt", format_edge_list(g))
    run.write_text("objectives.json", json.dumps([objective_to_dict(o) for o in g.objectives]) + "\n")
    run.write_json("dataset.json", {"name": args.name, "nodes": g.m, "edges": g.n, "dim": g.p})
    return EXIT_OK


def _event_inputs(args, run):
    from .datasets import events as ev

    if args.synthetic:
        try:
            return ev.synth_event_series(weeks=args.weeks, seed=args.seed)
        except ValueError as err:
            raise UsageError(str(err)) from None
    if not (args.calit2 and args.events):
        raise UsageError("event data needs --calit2 and --events, or --synthetic")
    for p in (args.calit2, args.events):
        if not Path(p).exists():
            raise UsageError(f"missing dataset path {p}")
        run.fingerprint(p)
    try:
        series = ev.load_calit2(args.calit2)
        truth = ev.load_event_list(args.events, series)
    except ValueError as err:
        raise ParseError(str(err)) from None
    return series, truth


def cmd_experiment(args, run):
    from . import experiments as ex
    from .datasets.svm import SvmBenchmarkSpec

    cfg = solver_config(args)
    ncfg = nonconvex_config(args, cfg)
    modes = ("convex", "nonconvex") if args.mode == "both" else (args.mode,)
    if args.name == "svm":
        spec = SvmBenchmarkSpec(n_nodes=args.nodes, n_groups=args.groups, c=args.svm_c, seed=args.seed)
        with run.phase("svm"):
            report = ex.run_svm(spec, cfg, path_config(args), ncfg, modes)
        metric = "accuracy"
    elif args.name == "housing":
        if not args.csv or not Path(args.csv).exists():
            raise UsageError("experiment housing needs an existing --csv")
        run.fingerprint(args.csv)
        with run.phase("housing"):
            report = ex.run_housing(args.csv, args.n_test, args.seed, args.k, args.mu, cfg,
                                    path_config(args), ncfg, modes)
        metric = "mse"
    else:
        series, truth = _event_inputs(args, run)
        with run.phase("events"):
            report = ex.run_events(series, truth, args.lam if args.lam is not None else 2.0,
                                   cfg=cfg, ncfg=ncfg, modes=modes, k_min=args.k_min)
        metric = None
    report = _jsonable(report)
    if args.plot_data and metric:
        for mode in modes:
            _plot_rows(run, f"plot_{mode}.csv", report[mode]["path"], metric)
    if args.plot_data and args.name == "events":
        for name in (*modes, "poisson"):
            rows = [[r["predicted"], r["correct"]] for r in report[name]["curve"]]
            run.write_rows(f"plot_{name}.csv", ["predicted", "correct"], rows)
    run.write_json("report.json", report)
    return EXIT_OK


def cmd_bench(args, run):
    from .experiments import run_bench

    if any(m < 4 or m % 2 for m in args.nodes):
        raise UsageError("--nodes entries must be even and >= 4")
    if any(q < 1 for q in args.dim):
        raise UsageError("--dim entries must be positive")
    cfg = solver_config(args)
    with run.phase("bench"):
        rows = run_bench(args.nodes, args.dim, args.seed, cfg, args.lam)
    header = ["nodes", "dim", "unknowns", "lambda", "iterations", "converged"]
    if not args.deterministic:
        header.append("seconds")
    run.write_rows("bench.csv", header, [[repr(float(r[h])) if h in ("lambda", "seconds") else r[h] for h in header] for r in rows])
    run.write_json("bench.json", {"rows": _jsonable(rows)})
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _int_list(s):
    try:
        return [int(v) for v in s.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--rho", type=float, default=1.0)
    common.add_argument("--eps-abs", type=float, default=1e-4)
    common.add_argument("--eps-rel", type=float, default=1e-3)
    common.add_argument("--max-iter", type=_positive_int, default=1000)
    common.add_argument("--workers", type=_positive_int, default=None,
                        help="solver threads (default: $NETLASSO_WORKERS or 1)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--deterministic", action="store_true",
                        help="omit timings so reruns are bit-identical")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--plot-data", action="store_true")
    common.add_argument("--eps-log", type=float, default=1.0)
    common.add_argument("--fixed-iters", type=_positive_int, default=500)
    common.add_argument("--verbose", "-v", action="store_true")

    pathflags = argparse.ArgumentParser(add_help=False)
    pathflags.add_argument("--alpha", type=float, default=2.0)
    pathflags.add_argument("--lambda-init", type=float, default=None)
    pathflags.add_argument("--eps-path", type=float, default=1e-6)
    pathflags.add_argument("--max-lambdas", type=_positive_int, default=50)

    evflags = argparse.ArgumentParser(add_help=False)
    evflags.add_argument("--calit2", help="CalIt2 counts CSV")
    evflags.add_argument("--events", help="truth events CSV")
    evflags.add_argument("--synthetic", action="store_true", help="use a generated series instead")
    evflags.add_argument("--weeks", type=_positive_int, default=15)

    parser = argparse.ArgumentParser(prog="netlasso", description="Network lasso solver and experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve at one lambda")
    p.add_argument("--mode", choices=("convex", "nonconvex"), default="convex")
    p.add_argument("graph")
    p.add_argument("objectives", nargs="?")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("path", parents=[common, pathflags], help="regularization path")
    p.add_argument("--mode", choices=("convex", "nonconvex"), default="convex")
    p.add_argument("graph")
    p.add_argument("objectives", nargs="?")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("infer", parents=[common], help="values at new nodes")
    p.add_argument("x", help="solved x matrix CSV")
    p.add_argument("neighbors", help="JSON list of [[train_index, weight], ...] per new node")
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("dataset", parents=[common, evflags], help="write graph and objectives files")
    p.add_argument("name", choices=("svm", "housing", "events"))
    p.add_argument("--nodes", type=_positive_int, default=1000)
    p.add_argument("--groups", type=_positive_int, default=20)
    p.add_argument("--csv")
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--mu", type=float, default=0.5)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("experiment", parents=[common, pathflags, evflags], help="end-to-end experiment")
    p.add_argument("name", choices=("svm", "housing", "events"))
    p.add_argument("--mode", choices=("convex", "nonconvex", "both"), default="both")
    p.add_argument("--nodes", type=_positive_int, default=1000)
    p.add_argument("--groups", type=_positive_int, default=20)
    p.add_argument("--svm-c", type=float, default=0.75)
    p.add_argument("--csv")
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--k-min", type=_positive_int, default=2)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench", parents=[common], help="scaling on 3-regular quadratic graphs")
    p.add_argument("--nodes", type=_int_list, default=[2000])
    p.add_argument("--dim", type=_int_list, default=[50, 100, 200])
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args, argv)
        code = args.func(args, run)
        run.finish()
        return code
    except UsageError as err:
        parser.error(str(err))
    except ParseError as err:
        print(f"netlasso: parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except ProxError as err:
        print(f"netlasso: prox failed at node {err.node}: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except MemoryError:
        print("netlasso: out of memory", file=sys.stderr)
        return EXIT_RESOURCE
    except OSError as err:
        print(f"netlasso: {err}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
