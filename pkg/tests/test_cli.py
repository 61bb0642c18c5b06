import json
import math
import subprocess
import sys

import numpy as np
import pytest

from sslcarma import io
from sslcarma.cli import main

GOLDEN_HEADERS = {
    "simulate": "n,t,Y,dS",
    "simulate_states": "n,t,Y,dS,X1,X2",
    "predict": "n,Y,Yhat,innovation,Delta",
    "predict_filter": "n,Y,Yhat,innovation,Delta,Y_reseasonalized,Yhat_reseasonalized",
    "rv": "n,RV",
    "deseasonalize": "n,rv",
    "reseasonalize": "n,RV",
    "compare_errors": "n,RV,abs_error_sslcarma,abs_error_levy",
}


def header(path):
    with open(path, encoding="utf-8") as fh:
        return fh.readline().rstrip("\n")


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "sim.csv"
    assert main(["simulate", "--model", "simulation_study", "--periods", "200", "--seed", "7",
                 "--out", str(out)]) == 0
    return out


def write_model(path, rates, drift=0.0):
    path.write_text(json.dumps({
        "carma": {"p": 2, "q": 1, "a": [3.0, 0.5], "b": [2.0]},
        "semilevy": {"lengths": [10, 2, 1], "rates": rates, "drift": drift,
                     "jump_law": {"law": "exponential", "rate": 0.25}},
        "m0": 13,
    }))
    return path


class TestSimulate:
    def test_rows_and_header(self, sim_csv):
        lines = sim_csv.read_text().splitlines()
        assert lines[0] == GOLDEN_HEADERS["simulate"]
        assert len(lines) == 1 + 2600
        assert "\r" not in sim_csv.read_text()

    def test_deterministic(self, sim_csv, tmp_path):
        again = tmp_path / "again.csv"
        main(["simulate", "--model", "simulation_study", "--periods", "200", "--seed", "7",
              "--out", str(again)])
        assert again.read_bytes() == sim_csv.read_bytes()

    def test_model_seed_and_env(self, tmp_path, monkeypatch):
        a, b, c = (tmp_path / f"{k}.csv" for k in "abc")
        main(["simulate", "--model", "simulation_study", "--periods", "3", "--out", str(a)])
        main(["simulate", "--model", "simulation_study", "--periods", "3", "--seed", "7",
              "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()  # bundled model carries seed 7
        monkeypatch.setenv("SSLCARMA_SEED", "8")
        main(["simulate", "--model", "simulation_study", "--periods", "3", "--out", str(c)])
        assert c.read_bytes() != a.read_bytes()
        assert json.loads((tmp_path / "c.csv.manifest.json").read_text())["seed"] == 8

    def test_states_columns(self, tmp_path):
        out = tmp_path / "s.csv"
        main(["simulate", "--model", "simulation_study", "--periods", "2", "--states",
              "--out", str(out)])
        assert header(out) == GOLDEN_HEADERS["simulate_states"]

    def test_zero_rate_model(self, tmp_path):
        model = write_model(tmp_path / "m.json", [0.0, 0.0, 0.0], drift=0.5)
        out = tmp_path / "z.csv"
        assert main(["simulate", "--model", str(model), "--periods", "4", "--seed", "1",
                     "--out", str(out)]) == 0
        cols = io.read_columns(out)
        np.testing.assert_array_equal(cols["dS"], 0.5)

    def test_invalid_model(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"carma": {"p": 2, "q": 1, "a": [-1, 0.5], "b": [2]},
                                   "semilevy": {"lengths": [1], "rates": [1]}, "m0": 1}))
        assert main(["simulate", "--model", str(bad), "--periods", "2", "--out",
                     str(tmp_path / "x.csv")]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ValidationError"

    def test_unknown_key(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"carma": {"p": 1, "q": 0, "a": [1]},
                                   "semilevy": {"lengths": [1], "rates": [1]}, "m0": 1,
                                   "colour": "red"}))
        assert main(["simulate", "--model", str(bad), "--periods", "2", "--out",
                     str(tmp_path / "x.csv")]) == 1


class TestEstimatePredict:
    def test_usage_error(self, sim_csv, tmp_path):
        assert main(["estimate", "--data", str(sim_csv), "--m0", "13",
                     "--out", str(tmp_path / "f.json")]) == 1

    def test_bad_option(self):
        assert main(["simulate", "--periods", "x"]) == 1

    def test_levy_mode_and_predict(self, sim_csv, tmp_path):
        fit = tmp_path / "fit.json"
        code = main(["estimate", "--data", str(sim_csv), "--mode", "levy", "--restarts", "1",
                     "--maxfev", "300", "--out", str(fit)])
        d = json.loads(fit.read_text())
        assert code == (0 if d["converged"] else 2)
        assert d["diagnostics"]["constant_q"] is True
        pred = tmp_path / "pred.csv"
        assert main(["predict", "--data", str(sim_csv), "--fit", str(fit),
                     "--out", str(pred)]) == 0
        assert header(pred) == GOLDEN_HEADERS["predict"]
        cols = io.read_columns(pred)
        np.testing.assert_allclose(cols["innovation"], cols["Y"] - cols["Yhat"], atol=1e-9)

    def test_ssl_mode(self, sim_csv, tmp_path):
        fit = tmp_path / "fit.json"
        code = main(["estimate", "--data", str(sim_csv), "--m0", "13", "--lengths", "10", "2",
                     "1", "--beta", "32", "--restarts", "1", "--maxfev", "200", "--out", str(fit)])
        d = json.loads(fit.read_text())
        assert list(d)[:6] == ["a", "b", "lambda", "sse", "converged", "evals"]
        assert code == (0 if d["converged"] else 2)
        assert len(d["lambda"]) == 3


@pytest.fixture(scope="module")
def prices(tmp_path_factory):
    path = tmp_path_factory.mktemp("px") / "prices.csv"
    rng = np.random.default_rng(3)
    p = 100 * np.exp(np.cumsum(rng.normal(0, 1e-3, 7800)))
    io.write_columns(path, ["timestamp", "price"], [np.arange(7800), p])
    return path


class TestVolatilityCommands:
    def test_rv_rows(self, prices, tmp_path):
        out = tmp_path / "rv.csv"
        assert main(["rv", "--prices", str(prices), "--k", "6", "--obs-per-day", "78",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == GOLDEN_HEADERS["rv"] and len(lines) == 1301

    def test_rv_parse_error_has_line(self, tmp_path, capsys):
        bad = tmp_path / "p.csv"
        bad.write_text("timestamp,price\n0,1.0\n1,abc\n")
        assert main(["rv", "--prices", str(bad), "--k", "1", "--out", str(tmp_path / "o")]) == 1
        assert "p.csv:3" in capsys.readouterr().err

    def test_round_trip(self, prices, tmp_path):
        rv = tmp_path / "rv.csv"
        main(["rv", "--prices", str(prices), "--k", "6", "--obs-per-day", "78", "--out", str(rv)])
        des, filt = tmp_path / "des.csv", tmp_path / "filter.json"
        assert main(["deseasonalize", "--data", str(rv), "--m0", "13", "--out", str(des),
                     "--filter-out", str(filt)]) == 0
        assert header(des) == GOLDEN_HEADERS["deseasonalize"]
        back = tmp_path / "back.csv"
        assert main(["reseasonalize", "--data", str(des), "--filter", str(filt),
                     "--out", str(back)]) == 0
        assert header(back) == GOLDEN_HEADERS["reseasonalize"]
        np.testing.assert_allclose(io.read_columns(back)["RV"], io.read_columns(rv)["RV"],
                                   rtol=1e-12)
        fit = tmp_path / "fit.json"
        main(["estimate", "--data", str(des), "--mode", "levy", "--restarts", "1",
              "--maxfev", "300", "--out", str(fit)])
        pred = tmp_path / "pred.csv"
        assert main(["predict", "--data", str(des), "--fit", str(fit), "--filter", str(filt),
                     "--out", str(pred)]) == 0
        assert header(pred) == GOLDEN_HEADERS["predict_filter"]
        cols = io.read_columns(pred)
        np.testing.assert_allclose(cols["Y_reseasonalized"], io.read_columns(rv)["RV"],
                                   rtol=1e-12)


class TestManifest:
    def test_replay(self, sim_csv):
        man = json.loads((sim_csv.parent / "sim.csv.manifest.json").read_text())
        assert man["seed"] == 7 and man["command"] == "simulate"
        assert man["outputs"][str(sim_csv)] == io.sha256_file(sim_csv)
        assert main(["replay", str(sim_csv.parent / "sim.csv.manifest.json")]) == 0

    def test_replay_detects_change(self, tmp_path):
        out = tmp_path / "r.csv"
        main(["simulate", "--model", "simulation_study", "--periods", "2", "--out", str(out)])
        man_path = tmp_path / "r.csv.manifest.json"
        man = json.loads(man_path.read_text())
        man["outputs"][str(out)] = "0" * 64
        man_path.write_text(json.dumps(man))
        assert main(["replay", str(man_path)]) != 0


def test_console_entry_point(tmp_path):
    out = tmp_path / "e.csv"
    r = subprocess.run([sys.executable, "-m", "sslcarma", "simulate", "--model",
                        "simulation_study", "--periods", "1", "--seed", "3", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert len(out.read_text().splitlines()) == 14
    assert not math.isnan(io.read_series(out).sum())


class TestAnalysisCommands:
    def test_compare(self, sim_csv, tmp_path):
        out, err = tmp_path / "cmp.json", tmp_path / "err.csv"
        code = main(["compare", "--data", str(sim_csv), "--m0", "13", "--lengths", "10", "2", "1",
                     "--restarts", "1", "--maxfev", "200", "--threads", "1",
                     "--out", str(out), "--errors", str(err)])
        rep = json.loads(out.read_text())
        assert code == (2 if "failures" in rep else 0)
        assert {"mae_sslcarma", "mae_levy", "ratio"} <= set(rep)
        assert header(err) == GOLDEN_HEADERS["compare_errors"]
        assert len(err.read_text().splitlines()) == 2601

    def test_study(self, tmp_path):
        out, est = tmp_path / "study.csv", tmp_path / "est.csv"
        assert main(["study", "--replications", "2", "--periods", "20", "--seed", "4",
                     "--restarts", "1", "--maxfev", "100", "--threads", "1",
                     "--out", str(out), "--estimates", str(est)]) == 0
        assert header(out) == "statistic,a1,a2,b0,lambda1,lambda2,lambda3,failures"
        assert header(est) == "replication,a1,a2,b0,lambda1,lambda2,lambda3"
