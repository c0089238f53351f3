# Global settings and scenario configs

import hashlib
import numbers
import os

import ujson

from .classes import ConfigError, Policy
from .colors import grn, ylw
from .packed import read, plain

SETTINGS_FILE = os.path.expanduser("~/.numeraire/config.json")  # Default settings path

KINDS = ("tree", "tree-sequence", "diffusion", "lognormal")

DEFAULT_GRIDS = {
    "M_grid": [10 ** (k / 2) for k in range(9)],
    "alpha_grid": [0.5, 0.25, 0.1, 0.05, 0.01],
    "delta_grid": [0.01, 0.05, 0.1, 0.25, 0.5],
}
DEFAULT_MC = {"paths": 1000, "steps": 100}


def default_settings(drive_dir):
    return {
        "LOG_FOLDER": os.path.join(drive_dir, "logs/"),
        "OUT_DIR": os.path.join(drive_dir, "runs/"),
        "THREADS": 1,
    }


def load_settings(settings_path=SETTINGS_FILE):
    """
    @brief      Reads the settings file, writing defaults on first run, and
                makes sure the folders it names exist.

    @return     Dict with upper-case keys.
    """
    drive_dir = os.path.dirname(os.path.abspath(settings_path))
    if not os.path.isfile(settings_path):
        os.makedirs(drive_dir, exist_ok=True)
        print(ylw("WARN:"), settings_path, "missing, this must be your first run")
        print("Writing settings to:", grn(settings_path))
        with open(settings_path, "w") as fp:
            ujson.dump(default_settings(drive_dir), fp, sort_keys=True, indent=4)

    try:
        settings = read(settings_path)
    except TypeError as e:
        raise ConfigError("settings", str(e), settings_path)

    settings = dict(default_settings(drive_dir), **settings)
    for key in ("LOG_FOLDER", "OUT_DIR"):
        settings[key] = os.path.expanduser(settings[key])
        os.makedirs(settings[key], exist_ok=True)
    if not isinstance(settings["THREADS"], int) or settings["THREADS"] < 1:
        raise ConfigError("THREADS", "must be a positive integer", settings_path)
    return settings


def _number(x):
    return isinstance(x, numbers.Real) and not isinstance(x, bool)


def _grid(field, values, file, low=None, low_open=True, high=None, either_order=False):
    # A nonempty strictly monotone list of numbers within bounds.
    if not isinstance(values, list) or not values:
        raise ConfigError(field, "must be a nonempty list", file)
    if not all(_number(v) for v in values):
        raise ConfigError(field, "must contain only numbers", file)
    if low is not None and any(v < low or (low_open and v == low) for v in values):
        raise ConfigError(field, "values must be {} {}".format(">" if low_open else ">=", low), file)
    if high is not None and any(v >= high for v in values):
        raise ConfigError(field, "values must be < {}".format(high), file)

    up = all(a < b for a, b in zip(values, values[1:]))
    down = all(a > b for a, b in zip(values, values[1:]))
    if not (up or (either_order and down)):
        raise ConfigError(field, "must be strictly sorted", file)
    return list(values)


def _positive_int(field, value, file):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(field, "must be a positive integer", file)
    return value


class ScenarioConfig:
    """
    @brief      One validated scenario document.

    @param      doc   The parsed json object
    @param      file  Path it came from; relative inputs resolve against
                      its folder
    """

    def __init__(self, doc, file=None):
        if not isinstance(doc, dict):
            raise ConfigError("config", "must be a json object", file)
        self.doc = doc
        self.file = file
        self.base = os.path.dirname(os.path.abspath(file)) if file else os.getcwd()

        self.kind = doc.get("kind")
        if self.kind not in KINDS:
            raise ConfigError(
                "kind", "unknown scenario kind {!r}, expected one of {}".format(self.kind, ", ".join(KINDS)), file
            )

        grids = doc.get("grids", {})
        if not isinstance(grids, dict):
            raise ConfigError("grids", "must be an object", file)
        g = dict(DEFAULT_GRIDS, **grids)
        self.M_grid = _grid("grids.M_grid", g["M_grid"], file, low=0)
        self.alpha_grid = _grid("grids.alpha_grid", g["alpha_grid"], file, low=0, high=1, either_order=True)
        self.delta_grid = _grid("grids.delta_grid", g["delta_grid"], file, low=0, low_open=False)
        self.n_list = None
        if "n_list" in g:
            self.n_list = _grid("grids.n_list", g["n_list"], file, low=1, low_open=False)
            if not all(isinstance(n, int) for n in self.n_list):
                raise ConfigError("grids.n_list", "must contain integers", file)

        mc = doc.get("mc", {})
        if not isinstance(mc, dict):
            raise ConfigError("mc", "must be an object", file)
        if "seed" not in mc:
            raise ConfigError("mc.seed", "a seed is required for reproducibility", file)
        seed = mc["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("mc.seed", "must be a non-negative integer", file)
        self.seed = seed
        self.paths = _positive_int("mc.paths", mc.get("paths", DEFAULT_MC["paths"]), file)
        self.steps = _positive_int("mc.steps", mc.get("steps", DEFAULT_MC["steps"]), file)

        pol = doc.get("policy", {})
        try:
            self.policy = Policy(**pol)
        except (TypeError, ValueError) as e:
            raise ConfigError("policy", str(e), file)

        self.verify_samples = _positive_int("verify_samples", doc.get("verify_samples", 100), file)
        output = doc.get("output", {})
        if not isinstance(output, dict):
            raise ConfigError("output", "must be an object", file)
        self.output_dir = output.get("dir")

        getattr(self, "_check_" + self.kind.replace("-", "_"))()

    def resolve(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base, p)

    def _inputs(self):
        inputs = self.doc.get("inputs")
        if not isinstance(inputs, list) or not inputs or not all(isinstance(p, str) for p in inputs):
            raise ConfigError("inputs", "must be a nonempty list of market file paths", self.file)
        return [self.resolve(p) for p in inputs]

    def _check_tree(self):
        if "market" in self.doc:
            if not isinstance(self.doc["market"], dict):
                raise ConfigError("market", "must be a market object", self.file)
            self.inputs = []
        else:
            self.inputs = self._inputs()
            if len(self.inputs) != 1:
                raise ConfigError("inputs", "a tree scenario takes exactly one market", self.file)

    def _check_tree_sequence(self):
        if "family" in self.doc:
            fam = self.doc["family"]
            if not isinstance(fam, dict) or fam.get("type") != "binomial":
                raise ConfigError("family.type", "only 'binomial' families are known", self.file)
            for key in ("u", "d", "p"):
                if not _number(fam.get(key)):
                    raise ConfigError("family." + key, "must be a number", self.file)
            if not fam["u"] > 1 > fam["d"] > 0:
                raise ConfigError("family", "need u > 1 > d > 0", self.file)
            periods = fam.get("periods", "n")
            if periods != "n":
                _positive_int("family.periods", periods, self.file)
            if self.n_list is None:
                raise ConfigError("grids.n_list", "required for a generated family", self.file)
            self.inputs = []
        else:
            self.inputs = self._inputs()
            if self.n_list is not None and len(self.n_list) != len(self.inputs):
                raise ConfigError("grids.n_list", "needs one index per input", self.file)

    def _check_diffusion(self):
        model = self.doc.get("model")
        if not isinstance(model, dict) or model.get("type") not in ("constant", "scalar-power-family"):
            raise ConfigError("model.type", "must be 'constant' or 'scalar-power-family'", self.file)
        if self.n_list is None:
            raise ConfigError("grids.n_list", "required for a diffusion sequence", self.file)

    def _check_lognormal(self):
        params = self.doc.get("params")
        if not isinstance(params, dict):
            raise ConfigError("params", "must be an object", self.file)
        mode = params.get("mode", "power")
        if mode == "power":
            for key in ("a", "b"):
                if not _number(params.get(key)):
                    raise ConfigError("params." + key, "must be a number", self.file)
            if params["b"] <= 0:
                raise ConfigError("params.b", "must be > 0", self.file)
        elif mode == "numeric":
            for key in ("mu", "sigma"):
                if not isinstance(params.get(key), list) or not params[key]:
                    raise ConfigError("params." + key, "must be a nonempty list", self.file)
        else:
            raise ConfigError("params.mode", "must be 'power' or 'numeric'", self.file)
        self.n_max = _positive_int("n_max", self.doc.get("n_max", 1000), self.file)
        if mode == "numeric" and self.n_max > len(params["mu"]):
            raise ConfigError("n_max", "exceeds the {} periods given".format(len(params["mu"])), self.file)

    def dump(self):
        return plain(self.doc)

    def digest(self):
        # sha256 of the canonical config document.
        text = ujson.dumps(self.dump(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_scenario(file):
    try:
        doc = read(file)
    except (OSError, TypeError) as e:
        raise ConfigError("config", str(e), file)
    return ScenarioConfig(doc, file)
