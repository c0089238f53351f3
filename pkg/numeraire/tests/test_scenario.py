import os

import numpy as np
import pandas as pd
import pytest
import ujson
from numpy.testing import assert_allclose

from numeraire.classes import INCONCLUSIVE, NAA, NOT_APPLICABLE, SAA
from numeraire.core_model import binomial_market
from numeraire.diagnostics import SequenceDiagnostics, TerminalLaw, hellinger_curve, tail_curve
from numeraire.numeraire import run
from numeraire.packed import pack_market, write_market
from numeraire.scenario import emit_plotdata, run_scenario


def _read(out, name="report.json"):
    with open(os.path.join(str(out), name)) as fp:
        return ujson.load(fp)


def test_tree_report(tmp_path):
    cfg = {
        "kind": "tree",
        "market": pack_market(binomial_market(1.2, 0.9, 0.6)),
        "grids": {"M_grid": [0.5, 1.0, 2.0]},
        "mc": {"seed": 0},
        "verify_samples": 20,
    }
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 0
    assert report["verdict"]["label"] == NOT_APPLICABLE

    saved = _read(tmp_path)
    assert_allclose(saved["solution"]["log_value"], 0.148342, atol=1e-6)
    assert saved["solution"]["gap"] <= 1e-9
    assert saved["duality"]["passed"]
    assert saved["tail_inequalities"]["failures"] == 0
    assert len(saved["provenance"]["config_hash"]) == 64
    assert saved["provenance"]["seed"] == 0
    assert saved["policy"]["eps1"] == 0.05

    for name in ("curves.csv", "tail.csv", "hellinger.csv", "np_profile.csv"):
        assert (tmp_path / name).is_file()
    assert len(pd.read_csv(tmp_path / "tail.csv")) == 3


def test_tree_from_file(tmp_path):
    write_market(str(tmp_path / "market.json"), binomial_market(1.2, 0.9, 0.6))
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(ujson.dumps({"kind": "tree", "inputs": ["market.json"], "mc": {"seed": 3}}))
    from numeraire.config import load_scenario

    code, _ = run_scenario(load_scenario(str(cfg_path)), str(tmp_path / "out"))
    assert code == 0
    assert (tmp_path / "out" / "report.json").is_file()


def test_arbitrage_exits_3(tmp_path):
    cfg = {"kind": "tree", "market": pack_market(binomial_market(1.2, 1.05, 0.5)), "mc": {"seed": 0}}
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 3
    assert "arbitrage" in report["error"]


def test_invalid_market_exits_2(tmp_path):
    doc = pack_market(binomial_market(1.2, 0.9, 0.6))
    doc["nodes"][1]["prob"] = 0.9
    code, report = run_scenario({"kind": "tree", "market": doc, "mc": {"seed": 0}}, str(tmp_path))
    assert code == 2
    assert "branch sum" in report["error"]


def test_empty_grid_exits_2(tmp_path):
    cfg = {"kind": "lognormal", "params": {"a": 1, "b": 1}, "grids": {"M_grid": []}, "mc": {"seed": 0}}
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 2
    assert "grids.M_grid" in report["error"]


LOGNORMAL = {
    "kind": "lognormal",
    "params": {"a": 1, "p": 1, "b": 1, "q": 0},
    "mc": {"seed": 5, "paths": 50},
    "n_max": 40,
}


def test_lognormal_bounded_series(tmp_path):
    code, report = run_scenario(dict(LOGNORMAL), str(tmp_path))
    assert code == 0
    assert report["verdict"]["label"] == NAA
    assert report["verdict"]["rule"] == "bounded-series"
    trend = pd.read_csv(tmp_path / "trend.csv")
    assert list(trend.columns) == ["n", "q25", "median", "q75", "expected_log"]
    assert trend["n"].iloc[-1] == 40


def test_lognormal_numeric(tmp_path):
    k = np.arange(1, 31)
    cfg = {
        "kind": "lognormal",
        "params": {"mode": "numeric", "mu": (0.01 / k).tolist(), "sigma": [0.2] * 30},
        "mc": {"seed": 2, "paths": 40},
        "n_max": 30,
    }
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 0
    assert "trend" in report
    assert report["verdict"]["label"] == NOT_APPLICABLE
    assert "trend" in report["verdict"]["basis"]
    assert report["monte_carlo_verdict"]["label"] in (NAA, SAA, INCONCLUSIVE)


def test_lognormal_symbolic_keeps_monte_carlo_verdict(tmp_path):
    code, report = run_scenario(dict(LOGNORMAL), str(tmp_path))
    assert code == 0
    assert report["monte_carlo_verdict"]["label"] in (NAA, SAA, INCONCLUSIVE)


def test_numerical_value_error_exits_3(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise ValueError("operands could not be broadcast together")

    monkeypatch.setattr("numeraire.scenario.monte_carlo_growth", broken)
    code, report = run_scenario(dict(LOGNORMAL), str(tmp_path))
    assert code == 3
    assert "broadcast" in report["error"]


def test_floating_point_error_exits_3(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise FloatingPointError("overflow encountered in exp")

    monkeypatch.setattr("numeraire.scenario.monte_carlo_growth", broken)
    assert run_scenario(dict(LOGNORMAL), str(tmp_path))[0] == 3


def test_bad_diffusion_model_exits_2(tmp_path):
    cfg = {
        "kind": "diffusion",
        "model": {"type": "scalar-power-family", "a": 1.0, "b": 1.0, "c": -1.0},
        "grids": {"n_list": [1, 2]},
        "mc": {"seed": 0},
    }
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 2
    assert "model" in report["error"]


def test_reruns_match_except_timestamp(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_scenario(dict(LOGNORMAL), str(a))[0] == 0
    assert run_scenario(dict(LOGNORMAL), str(b))[0] == 0

    def strip(path):
        lines = (path / "report.json").read_text().splitlines()
        return [line for line in lines if '"timestamp"' not in line]

    assert strip(a) == strip(b)
    assert (a / "curves.csv").read_text() == (b / "curves.csv").read_text()


def test_tree_sequence_family(tmp_path):
    cfg = {
        "kind": "tree-sequence",
        "family": {"type": "binomial", "u": 1.2, "d": 0.9, "p": 1 / 3, "shift": 0.5},
        "grids": {"n_list": [1, 2, 3, 4, 5, 6]},
        "mc": {"seed": 1},
    }
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 0
    assert [row["n"] for row in report["sequence"]] == [1, 2, 3, 4, 5, 6]
    assert report["sequence"][-1]["leaves"] == 2 ** 6
    assert report["limit_checks"]["triples_ok"]
    assert report["verdict"]["label"] == NAA


def test_tree_sequence_bad_shift(tmp_path):
    cfg = {
        "kind": "tree-sequence",
        "family": {"type": "binomial", "u": 1.2, "d": 0.9, "p": 0.5, "shift": 1.0},
        "grids": {"n_list": [1, 2]},
        "mc": {"seed": 1},
    }
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 2
    assert "family.shift" in report["error"]


def test_diffusion_constant(tmp_path):
    cfg = {
        "kind": "diffusion",
        "model": {"type": "constant", "mu": [0.5], "sigma": [[1.0]], "T": 4},
        "grids": {"n_list": [1, 2], "M_grid": [1.0, 10.0]},
        "mc": {"seed": 4, "paths": 300, "steps": 4},
    }
    code, report = run_scenario(cfg, str(tmp_path))
    assert code == 0
    assert_allclose(report["closed_form"]["lambda"], [0.5])
    assert report["last"]["n"] == 2
    assert set(report["tail_transfer"]) == {"value_tail", "integral_tail"}
    terminals = pd.read_csv(tmp_path / "terminals.csv")
    assert len(terminals) == 300
    curves = pd.read_csv(tmp_path / "curves.csv")
    assert "integral_tail" in set(curves["curve"])


def test_emit_plotdata_shapes(tmp_path):
    laws = [TerminalLaw([2.0, 0.5], [0.5, 0.5], n=n) for n in range(1, 4)]
    grid = [1.0, 2.0, 4.0, 8.0, 16.0]
    diag = SequenceDiagnostics(tail_curve(laws, grid), hellinger_curve(laws, [0.5, 0.1]))
    paths = emit_plotdata(diag, str(tmp_path))
    assert len(pd.read_csv(paths["tail.csv"])) == 15
    assert list(pd.read_csv(paths["tail.csv"]).columns) == ["n", "M", "tail", "se"]
    assert len(pd.read_csv(paths["hellinger.csv"])) == 6
    profile = pd.read_csv(paths["np_profile.csv"])
    assert len(profile) == 0
    assert list(profile.columns) == ["n", "delta", "power", "se"]


def test_emit_plotdata_empty(tmp_path):
    diag = SequenceDiagnostics(tail_curve([], [1.0, 10.0]), hellinger_curve([], [0.5]))
    paths = emit_plotdata(diag, str(tmp_path))
    for path in paths.values():
        frame = pd.read_csv(path)
        assert len(frame) == 0
        assert len(frame.columns) == 4


def test_cli_validate_and_run(tmp_path):
    settings = str(tmp_path / "settings" / "config.json")
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(ujson.dumps(dict(LOGNORMAL, n_max=10)))

    assert run(["--settings", settings, "validate", "--config", str(cfg_path)]) == 0

    out = tmp_path / "out"
    code = run(["--settings", settings, "run", "--config", str(cfg_path), "--out", str(out), "--threads", "2"])
    assert code == 0
    assert _read(out)["verdict"]["label"] == NAA


def test_cli_config_error(tmp_path):
    settings = str(tmp_path / "settings" / "config.json")
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(ujson.dumps(dict(LOGNORMAL, grids={"M_grid": []})))
    assert run(["--settings", settings, "validate", "--config", str(cfg_path)]) == 2
    assert run(["--settings", settings, "run", "--config", str(cfg_path)]) == 2


def test_cli_version():
    with pytest.raises(SystemExit) as err:
        run(["--version"])
    assert err.value.code == 0
