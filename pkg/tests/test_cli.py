import csv
import json

import numpy as np
import pytest

from qvfdep import cli
from qvfdep import inference as inf
from qvfdep.families import FamilySpec
from qvfdep.graph import temporal_graph
from qvfdep.io import read_csv_rows
from qvfdep.process import ModelSpec, simulate


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def series(tmp_path):
    spec = ModelSpec(FamilySpec("invgamma-gamma", 4.0, 2.0), temporal_graph(10, 1), np.ones(10))
    y = simulate(spec, np.random.default_rng(1)).y
    path = tmp_path / "y.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"])
        w.writerows([[v] for v in y])
    return path


@pytest.fixture
def spec_file(tmp_path):
    spec = cli.preset_specs("fig4-spatial", 1.0)[0][1]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(spec.to_dict()))
    return path


class TestCorrelation:
    def test_fig3_rows(self, tmp_path):
        out = tmp_path / "c.csv"
        assert run("correlation", "--preset", "fig3-temporal", "--n0", 1, "--out", out) == 0
        rows = read_csv_rows(out)
        assert len(rows) == 16
        assert [int(r["k"]) for r in rows] == list(range(1, 17))
        assert all(r["i"] == "1" for r in rows)
        corr = [float(r["analytic"]) for r in rows]
        assert corr[0] == 1.0
        assert corr[1] == corr[2]
        assert corr[3] == corr[4]

    def test_embeds_metadata(self, tmp_path):
        out = tmp_path / "c.csv"
        run("correlation", "--preset", "fig3-temporal", "--n0", 1, "--seed", 5, "--out", out)
        head = [line for line in out.read_text().splitlines() if line.startswith("#")]
        keys = {line[1:].split(":")[0].strip() for line in head}
        assert {"seed", "spec_hash", "version"} <= keys
        assert "# seed: 5" in head

    def test_all_scenarios(self, tmp_path):
        out = tmp_path / "c.csv"
        assert run("correlation", "--preset", "fig4-spatial", "--out", out) == 0
        rows = read_csv_rows(out)
        assert len(rows) == 3 * 25
        assert {r["scenario"] for r in rows} == {f"fig4-spatial/n0={v:g}" for v in (0.1, 1, 10)}

    def test_mc_columns(self, tmp_path):
        out = tmp_path / "c.csv"
        assert run("correlation", "--preset", "fig4-spatial", "--n0", 1, "--replicates", 2000, "--out", out) == 0
        for r in read_csv_rows(out):
            assert abs(float(r["mc_estimate"]) - float(r["analytic"])) < 6 * float(r["mc_se"]) + 1e-12


class TestDeterminism:
    def test_validate_twice(self, tmp_path, spec_file):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert run("validate", "--spec", spec_file, "--replicates", 1000, "--seed", 7, "--out", out) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_output(self, tmp_path, spec_file):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("simulate", "--spec", spec_file, "--seed", 1, "--out", a)
        run("simulate", "--spec", spec_file, "--seed", 2, "--out", b)
        assert a.read_bytes() != b.read_bytes()

    def test_json_round_trip(self, tmp_path):
        first = tmp_path / "sim.json"
        assert run("simulate", "--preset", "fig4-spatial", "--n0", 10, "--replicates", 3,
                   "--seed", 4, "--format", "json", "--out", first) == 0
        payload = json.loads(first.read_text())
        scenario = payload["scenarios"][0]
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(scenario["spec"]))
        second = tmp_path / "sim2.json"
        assert run("simulate", "--spec", spec_path, "--replicates", 3, "--seed", 4,
                   "--format", "json", "--out", second) == 0
        again = json.loads(second.read_text())["scenarios"][0]
        assert again["y"] == scenario["y"]
        assert again["spec"] == scenario["spec"]

    def test_env_seed_echoed(self, tmp_path, spec_file, monkeypatch, capsys):
        monkeypatch.setenv(cli.SEED_ENV, "31")
        out = tmp_path / "m.json"
        assert run("moments", "--spec", spec_file, "--format", "json", "--out", out) == 0
        assert "seed=31" in capsys.readouterr().err
        assert json.loads(out.read_text())["meta"]["seed"] == 31


class TestFit:
    def test_smoke(self, tmp_path, series):
        out = tmp_path / "fit"
        assert run("fit", "--data", series, "--q", 0, "--iters", 100, "--seed", 3, "--out", out) == 0
        rows = read_csv_rows(out / "trace.csv")
        traces = inf.traces_from_rows(rows)
        # defaults: burn-in 33, thin 5, two chains
        assert len(traces) == 2
        assert all(len(t) == 14 and t.s.shape == (14, 10) for t in traces)
        summary = json.loads((out / "summary.json").read_text())
        assert {"dic", "d_bar", "p_d", "predictions"} <= set(summary)
        assert len(summary["predictions"]) == 10

    def test_predict_from_trace(self, tmp_path, series):
        out = tmp_path / "fit"
        run("fit", "--data", series, "--q", 1, "--iters", 150, "--seed", 3, "--out", out)
        pred = tmp_path / "p.csv"
        assert run("predict", "--data", series, "--q", 1, "--trace", out / "trace.csv", "--out", pred) == 0
        rows = read_csv_rows(pred)
        assert len(rows) == 10
        assert all(float(r["lower95"]) < float(r["point"]) < float(r["upper95"]) for r in rows)

    def test_fit_twice_identical(self, tmp_path, series):
        for name in ("a", "b"):
            assert run("fit", "--data", series, "--iters", 60, "--seed", 8, "--out", tmp_path / name) == 0
        for f in ("trace.csv", "summary.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestDicScan:
    def test_single_q(self, tmp_path, series):
        out = tmp_path / "d.csv"
        assert run("dic-scan", "--data", series, "--q", 0, "--iters", 120, "--out", out) == 0
        rows = read_csv_rows(out)
        assert len(rows) == 1
        assert rows[0]["q"] == "0" and rows[0]["best"] == "True"

    def test_flags_minimizer(self):
        y = np.linspace(1.0, 2.0, 8)
        rows = cli.dic_scan(y, [0, 1], inf.Priors(), inf.McmcConfig(200, 100, 1, 1), 0)
        assert [r["q"] for r in rows] == [0, 1]
        best = [r for r in rows if r["best"]]
        assert len(best) == 1 and best[0]["dic"] == min(r["dic"] for r in rows)

    def test_failures_do_not_abort(self, monkeypatch):
        real = inf.run_chains

        def flaky(data, priors, config, seed, workers=1):
            if len(data.graph.neighbors[-1]) > 1:  # fail every q > 0
                raise FloatingPointError("boom")
            return real(data, priors, config, seed, workers)

        monkeypatch.setattr(inf, "run_chains", flaky)
        rows = cli.dic_scan(np.linspace(1.0, 2.0, 6), [0, 1], inf.Priors(), inf.McmcConfig(100, 50, 1, 1), 0)
        assert rows[0]["dic"] is not None and rows[0]["best"]
        assert rows[1]["dic"] is None and rows[1]["error"] == "boom"

    def test_all_fail(self, tmp_path, series, monkeypatch):
        def broken(*args, **kwargs):
            raise FloatingPointError("boom")

        monkeypatch.setattr(inf, "run_chains", broken)
        out = tmp_path / "d.json"
        assert run("dic-scan", "--data", series, "--q", "0,1", "--format", "json", "--out", out) == cli.EXIT_NUMERIC
        payload = json.loads(out.read_text())
        assert payload["table"] == [] and len(payload["failures"]) == 2


class TestErrors:
    def test_bad_flag(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["correlation", "--bogus"])
        assert info.value.code == cli.EXIT_PARSE

    def test_missing_file(self, tmp_path, capsys):
        assert run("simulate", "--spec", tmp_path / "none.json") == cli.EXIT_PARSE
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["status"] == 2 and err["error"] == "parse"

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert run("moments", "--spec", path) == cli.EXIT_PARSE

    def test_invalid_parameters(self, tmp_path, spec_file):
        assert run("moments", "--spec", spec_file, "--n0", -1) == cli.EXIT_INVALID

    def test_invalid_data(self, tmp_path):
        path = tmp_path / "y.csv"
        path.write_text("y\n1.0\n-2.0\n3.0\n")
        assert run("fit", "--data", path, "--iters", 30, "--out", tmp_path / "o") == cli.EXIT_INVALID

    def test_invalid_graph(self, tmp_path):
        path = tmp_path / "g.json"
        path.write_text(json.dumps({"m": 2, "neighbors": [[2], [2]]}))
        assert run("graph", "--spec", path) == cli.EXIT_INVALID

    def test_numeric_failure(self, tmp_path, series, monkeypatch):
        def broken(*args, **kwargs):
            raise inf.NonFiniteTargetError("non-finite", None)

        monkeypatch.setattr(inf, "run_chains", broken)
        assert run("fit", "--data", series, "--iters", 30, "--out", tmp_path / "o") == cli.EXIT_NUMERIC


class TestGraph:
    def test_lattice(self, tmp_path):
        out = tmp_path / "g.csv"
        assert run("graph", "--preset", "fig2-lattice", "--out", out) == 0
        rows = read_csv_rows(out)
        assert rows[2]["neighbors"] == "1 2 3 4 5"

    def test_temporal(self, tmp_path):
        out = tmp_path / "g.json"
        assert run("graph", "--m", 4, "--q", 1, "--format", "json", "--out", out) == 0
        graph = json.loads(out.read_text())["graph"]
        assert graph["neighbors"][0] == [1]
        assert graph["neighbors"][3] == [3, 4]
