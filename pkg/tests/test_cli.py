import json

import jsonschema
import numpy as np
import pytest

from netlasso import cli


def toy_files(tmp_path, edges="0\t1\t1.0\n", A=((0.0, 0.0), (2.0, 4.0))):
    g = tmp_path / "g.txt"
    g.write_text(f"NODES {len(A)} DIM {len(A[0])}\n{edges}")
    o = tmp_path / "obj.json"
    o.write_text(json.dumps([{"type": "quadratic", "a": list(a)} for a in A]))
    return str(g), str(o)


def run(argv):
    return cli.main([str(a) for a in argv])


def validate(path, kind):
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, cli.load_schema(kind))
    return doc


def manifest_of(out, doc):
    man = validate(out / doc["manifest"], "manifest")
    assert set(man["outputs"]) <= {p.name for p in out.iterdir()}
    return man


class TestSolve:
    def test_lambda_zero_gives_minimizers(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "out"
        assert run(["solve", g, o, "--lambda", 0, "--out-dir", out]) == cli.EXIT_OK
        X = np.loadtxt(out / "x.csv", delimiter=",")
        np.testing.assert_allclose(X, [[0, 0], [2, 4]], atol=1e-8)
        doc = validate(out / "result.json", "result")
        assert doc["converged"] and doc["n_clusters"] == 2
        man = manifest_of(out, doc)
        assert man["command"] == "solve"
        assert len(man["datasets"]) == 2

    def test_huge_lambda_gives_consensus(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "out"
        code = run(["solve", g, o, "--lambda", 1e6, "--out-dir", out,
                    "--eps-abs", 1e-9, "--eps-rel", 1e-9, "--max-iter", 100000])
        assert code == cli.EXIT_OK
        X = np.loadtxt(out / "x.csv", delimiter=",")
        np.testing.assert_allclose(X, [[1, 2], [1, 2]], atol=1e-5)
        assert validate(out / "result.json", "result")["n_clusters"] == 1

    def test_trace_has_one_row_per_iteration(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "out"
        run(["solve", g, o, "--lambda", 0.5, "--out-dir", out])
        doc = json.loads((out / "result.json").read_text())
        lines = (out / "trace.csv").read_text().strip().splitlines()
        assert len(lines) == doc["iterations"] + 1

    def test_malformed_edge_line(self, tmp_path, capsys):
        g, o = toy_files(tmp_path, edges="0\t1\n")
        assert run(["solve", g, o, "--lambda", 1, "--out-dir", tmp_path / "out"]) == cli.EXIT_PARSE
        err = capsys.readouterr().err
        assert "line 2" in err and "expected 3 fields" in err

    def test_objective_count_mismatch(self, tmp_path):
        g, _ = toy_files(tmp_path)
        o = tmp_path / "short.json"
        o.write_text(json.dumps([{"type": "quadratic", "a": [0, 0]}]))
        assert run(["solve", g, o, "--lambda", 1, "--out-dir", tmp_path / "out"]) == cli.EXIT_PARSE

    def test_nonconvergence_exit_code(self, tmp_path):
        g, o = toy_files(tmp_path)
        code = run(["solve", g, o, "--lambda", 3, "--max-iter", 2, "--out-dir", tmp_path / "out"])
        assert code == cli.EXIT_NONCONVERGED

    def test_missing_graph_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["solve", tmp_path / "nope.txt", "--lambda", 1, "--out-dir", tmp_path])
        assert exc.value.code == cli.EXIT_USAGE

    def test_negative_lambda_is_usage_error(self, tmp_path):
        g, o = toy_files(tmp_path)
        with pytest.raises(SystemExit) as exc:
            run(["solve", g, o, "--lambda", -1, "--out-dir", tmp_path / "out"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_nonconvex_mode(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "out"
        assert run(["solve", g, o, "--lambda", 1, "--mode", "nonconvex", "--fixed-iters", 50,
                    "--out-dir", out]) == cli.EXIT_OK
        doc = validate(out / "result.json", "result")
        assert doc["mode"] == "nonconvex" and doc["best_iter"] is not None


class TestPath:
    def test_edgeless_two_points(self, tmp_path):
        g, o = toy_files(tmp_path, edges="")
        out = tmp_path / "out"
        assert run(["path", g, o, "--out-dir", out, "--plot-data"]) == cli.EXIT_OK
        doc = validate(out / "path.json", "path")
        assert len(doc["points"]) == 2
        rows = (out / "plot_data.csv").read_text().strip().splitlines()
        assert rows[0] == "lambda,metric" and len(rows) == 3

    def test_convex_path_reaches_consensus(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "out"
        run(["path", g, o, "--out-dir", out, "--eps-abs", 1e-8, "--eps-rel", 1e-8, "--max-iter", 20000])
        doc = validate(out / "path.json", "path")
        assert doc["stop_reason"] == "consensus"
        np.testing.assert_allclose(doc["consensus_x"], [1, 2], atol=1e-4)
        for pt in doc["points"]:
            assert (out / pt["x_file"]).exists()

    @pytest.mark.invariant
    def test_nonconvex_has_best_iter_column(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "out"
        run(["path", g, o, "--mode", "nonconvex", "--fixed-iters", 30, "--max-lambdas", 4, "--out-dir", out])
        doc = validate(out / "path.json", "path")
        assert all("best_iter" in pt for pt in doc["points"] if "x_file" in pt)

    def test_schema_rejects_nonconvex_without_best_iter(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "out"
        run(["path", g, o, "--mode", "nonconvex", "--fixed-iters", 30, "--max-lambdas", 3, "--out-dir", out])
        doc = json.loads((out / "path.json").read_text())
        del doc["points"][0]["best_iter"]
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(doc, cli.load_schema("path"))

    def test_bad_alpha_is_usage_error(self, tmp_path):
        g, o = toy_files(tmp_path)
        with pytest.raises(SystemExit) as exc:
            run(["path", g, o, "--alpha", 0.5, "--out-dir", tmp_path / "out"])
        assert exc.value.code == cli.EXIT_USAGE


class TestInfer:
    def test_two_anchor_midpoint_and_schema(self, tmp_path):
        x = tmp_path / "x.csv"
        np.savetxt(x, [[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]], delimiter=",")
        nb = tmp_path / "nb.json"
        nb.write_text(json.dumps([[[0, 3.0], [1, 1.0]], [[2, 1.0]]]))
        out = tmp_path / "out"
        assert run(["infer", x, nb, "--out-dir", out]) == cli.EXIT_OK
        X = np.loadtxt(out / "x_new.csv", delimiter=",", ndmin=2)
        np.testing.assert_array_equal(X, [[0, 0], [5, 5]])
        validate(out / "infer.json", "infer")

    def test_out_of_range_neighbor(self, tmp_path):
        x = tmp_path / "x.csv"
        np.savetxt(x, [[0.0], [1.0]], delimiter=",")
        nb = tmp_path / "nb.json"
        nb.write_text(json.dumps([[[7, 1.0]]]))
        assert run(["infer", x, nb, "--out-dir", tmp_path / "out"]) == cli.EXIT_PARSE


class TestDataset:
    def test_svm_roundtrips_into_solve(self, tmp_path):
        out = tmp_path / "ds"
        assert run(["dataset", "svm", "--nodes", 40, "--groups", 4, "--out-dir", out]) == cli.EXIT_OK
        doc = validate(out / "dataset.json", "dataset")
        assert doc["nodes"] == 40 and doc["dim"] == 51
        code = run(["solve", out / "graph.txt", out / "objectives.json", "--lambda", 0,
                    "--out-dir", tmp_path / "s"])
        assert code == cli.EXIT_OK

    def test_zero_nodes_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["dataset", "svm", "--nodes", 0, "--out-dir", tmp_path])
        assert exc.value.code == cli.EXIT_USAGE

    def test_events_without_data_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["dataset", "events", "--out-dir", tmp_path])
        assert exc.value.code == cli.EXIT_USAGE

    def test_events_missing_path_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["dataset", "events", "--calit2", tmp_path / "a.csv", "--events", tmp_path / "b.csv",
                 "--out-dir", tmp_path])
        assert exc.value.code == cli.EXIT_USAGE

    @pytest.mark.parametrize("weeks", [1, 2])
    def test_synthetic_too_short_is_usage_error(self, tmp_path, weeks):
        with pytest.raises(SystemExit) as exc:
            run(["dataset", "events", "--synthetic", "--weeks", weeks, "--out-dir", tmp_path])
        assert exc.value.code == cli.EXIT_USAGE

    def test_synthetic_events(self, tmp_path):
        out = tmp_path / "ds"
        assert run(["dataset", "events", "--synthetic", "--weeks", 4, "--out-dir", out]) == cli.EXIT_OK
        doc = validate(out / "dataset.json", "dataset")
        assert doc["nodes"] == 4 * 336 and doc["edges"] == 4 * 336 - 1


class TestBench:
    def test_small_bench(self, tmp_path):
        out = tmp_path / "b"
        assert run(["bench", "--nodes", 20, "--dim", "2,4", "--out-dir", out]) == cli.EXIT_OK
        doc = validate(out / "bench.json", "bench")
        assert [r["unknowns"] for r in doc["rows"]] == [40, 80]
        header = (out / "bench.csv").read_text().splitlines()[0]
        assert header.endswith("seconds")

    @pytest.mark.parametrize("nodes", ["0", "7"])
    def test_bad_node_counts(self, tmp_path, nodes):
        with pytest.raises(SystemExit) as exc:
            run(["bench", "--nodes", nodes, "--out-dir", tmp_path])
        assert exc.value.code == cli.EXIT_USAGE


@pytest.mark.invariant
class TestExperiment:
    def test_svm_report_schema(self, tmp_path):
        out = tmp_path / "e"
        code = run(["experiment", "svm", "--nodes", 40, "--groups", 4, "--mode", "convex",
                    "--max-lambdas", 4, "--plot-data", "--out-dir", out])
        assert code == cli.EXIT_OK
        doc = validate(out / "report.json", "report")
        assert set(doc["table"]) == {"local_svm", "global_svm", "convex", "nonconvex"}
        assert (out / "plot_convex.csv").exists()

    def test_events_report_schema(self, tmp_path):
        out = tmp_path / "e"
        code = run(["experiment", "events", "--synthetic", "--weeks", 4, "--mode", "convex",
                    "--plot-data", "--out-dir", out])
        assert code == cli.EXIT_OK
        doc = validate(out / "report.json", "report")
        assert {"convex", "poisson"} <= set(doc["table"])
        assert (out / "plot_poisson.csv").exists()

    def test_housing_needs_csv(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["experiment", "housing", "--csv", tmp_path / "none.csv", "--out-dir", tmp_path])
        assert exc.value.code == cli.EXIT_USAGE


@pytest.mark.invariant
class TestDeterminism:
    def files(self, out):
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    @pytest.mark.parametrize("extra", [
        ["solve", "@g", "@o", "--lambda", 0.7],
        ["path", "@g", "@o", "--plot-data"],
        ["path", "@g", "@o", "--mode", "nonconvex", "--fixed-iters", 40, "--max-lambdas", 4],
        ["bench", "--nodes", 20, "--dim", 3],
        ["dataset", "svm", "--nodes", 30, "--groups", 3],
    ])
    def test_bit_identical_reruns(self, tmp_path, extra):
        g, o = toy_files(tmp_path)
        argv = [{"@g": g, "@o": o}.get(a, a) for a in extra] + ["--deterministic", "--seed", 3]
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(argv + ["--out-dir", out]) == cli.EXIT_OK
            outs.append(self.files(out))
        assert outs[0] == outs[1]

    def test_rerun_in_same_dir_is_idempotent(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "a"
        argv = ["solve", g, o, "--lambda", 0.7, "--deterministic", "--out-dir", out]
        run(argv)
        first = self.files(out)
        run(argv)
        assert self.files(out) == first

    def test_nondeterministic_manifest_is_not_replaced(self, tmp_path):
        g, o = toy_files(tmp_path)
        out = tmp_path / "a"
        argv = ["solve", g, o, "--lambda", 0.7, "--out-dir", out]
        run(argv)
        run(argv)
        manifests = sorted(p.name for p in out.glob("manifest-*.json"))
        assert len(manifests) == 2
        man = json.loads((out / manifests[0]).read_text())
        assert man["timing"] is not None

    def test_workers_do_not_change_output(self, tmp_path):
        g, o = toy_files(tmp_path)
        xs = []
        for w in (1, 3):
            out = tmp_path / f"w{w}"
            run(["solve", g, o, "--lambda", 0.7, "--workers", w, "--deterministic", "--out-dir", out])
            xs.append((out / "x.csv").read_bytes())
        assert xs[0] == xs[1]

    def test_workers_env_fallback(self, tmp_path, monkeypatch):
        g, o = toy_files(tmp_path)
        monkeypatch.setenv("NETLASSO_WORKERS", "3")
        out = tmp_path / "env"
        run(["solve", g, o, "--lambda", 0.7, "--out-dir", out])
        doc = json.loads((out / "result.json").read_text())
        man = json.loads((out / doc["manifest"]).read_text())
        assert man["config"]["workers"] is None
        assert cli.solver_config(cli.build_parser().parse_args(["solve", g, "--lambda", "1"])).workers == 3
