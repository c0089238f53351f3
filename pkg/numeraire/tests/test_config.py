import os

import pytest
import ujson

from numeraire.classes import ConfigError
from numeraire.config import ScenarioConfig, load_scenario, load_settings

LOGNORMAL = {"kind": "lognormal", "params": {"a": 1, "p": 1, "b": 1, "q": 0}, "mc": {"seed": 1}}


def test_defaults():
    cfg = ScenarioConfig(dict(LOGNORMAL))
    assert len(cfg.M_grid) == 9
    assert cfg.M_grid[0] == 1 and cfg.M_grid[-1] == 10000
    assert cfg.alpha_grid == [0.5, 0.25, 0.1, 0.05, 0.01]
    assert cfg.policy.eps1 == 0.05
    assert cfg.verify_samples == 100
    assert cfg.n_max == 1000


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"grids": {"M_grid": []}}, "grids.M_grid"),
        ({"grids": {"M_grid": [10, 1]}}, "grids.M_grid"),
        ({"grids": {"alpha_grid": [0.5, 1.5]}}, "grids.alpha_grid"),
        ({"grids": {"n_list": [1, 2.5]}}, "grids.n_list"),
        ({"mc": {}}, "mc.seed"),
        ({"mc": {"seed": -1}}, "mc.seed"),
        ({"mc": {"seed": 1, "paths": 0}}, "mc.paths"),
        ({"policy": {"eps1": 2}}, "policy"),
        ({"kind": "swap"}, "kind"),
        ({"params": {"mode": "numeric", "mu": [0.1], "sigma": [0.2]}}, "n_max"),
    ],
)
def test_rejects_with_field(patch, field):
    doc = dict(LOGNORMAL, **patch)
    with pytest.raises(ConfigError) as err:
        ScenarioConfig(doc)
    assert err.value.field == field
    assert str(err.value).startswith(field + ":")


def test_empty_grid_message():
    with pytest.raises(ConfigError, match="grids.M_grid: must be a nonempty list"):
        ScenarioConfig(dict(LOGNORMAL, grids={"M_grid": []}))


def test_alpha_grid_either_order():
    cfg = ScenarioConfig(dict(LOGNORMAL, grids={"alpha_grid": [0.1, 0.5]}))
    assert cfg.alpha_grid == [0.1, 0.5]


def test_kind_requirements():
    with pytest.raises(ConfigError, match="inputs"):
        ScenarioConfig({"kind": "tree", "mc": {"seed": 0}})
    with pytest.raises(ConfigError, match="n_list"):
        ScenarioConfig({"kind": "diffusion", "model": {"type": "constant"}, "mc": {"seed": 0}})
    with pytest.raises(ConfigError, match="family"):
        ScenarioConfig(
            {
                "kind": "tree-sequence",
                "family": {"type": "binomial", "u": 0.9, "d": 1.1, "p": 0.5},
                "grids": {"n_list": [1, 2]},
                "mc": {"seed": 0},
            }
        )


def test_inputs_resolve_against_config_folder(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(ujson.dumps({"kind": "tree", "inputs": ["market.json"], "mc": {"seed": 0}}))
    cfg = load_scenario(str(path))
    assert cfg.inputs == [os.path.join(str(tmp_path), "market.json")]


def test_corrupt_config(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError) as err:
        load_scenario(str(path))
    assert "bad.json" in str(err.value)


def test_digest_ignores_key_order():
    a = ScenarioConfig({"kind": "lognormal", "params": {"a": 1, "b": 1}, "mc": {"seed": 1}})
    b = ScenarioConfig({"mc": {"seed": 1}, "params": {"b": 1, "a": 1}, "kind": "lognormal"})
    assert a.digest() == b.digest()
    c = ScenarioConfig({"kind": "lognormal", "params": {"a": 1, "b": 1}, "mc": {"seed": 2}})
    assert a.digest() != c.digest()


def test_settings_first_run(tmp_path):
    path = tmp_path / "home" / "config.json"
    settings = load_settings(str(path))
    assert path.is_file()
    assert os.path.isdir(settings["LOG_FOLDER"])
    assert os.path.isdir(settings["OUT_DIR"])
    assert settings["THREADS"] == 1


def test_settings_threads_checked(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(ujson.dumps({"THREADS": 0, "LOG_FOLDER": str(tmp_path / "l"), "OUT_DIR": str(tmp_path / "o")}))
    with pytest.raises(ConfigError, match="THREADS"):
        load_settings(str(path))
