# Runs one scenario config and writes its report and plot data

import logging
import os
import time

import numpy as np
import pandas as pd
from rfc3339 import timestamptostr

from .classes import NOT_APPLICABLE, ConfigError, MarketError
from .config import ScenarioConfig
from .core_model import binomial_market, evaluate_value_process, random_admissible_strategy
from .diagnostics import (
    Curve,
    SequenceDiagnostics,
    TerminalLaw,
    hellinger_curve,
    limit_consistency_checks,
    np_profile,
    sequence_diagnostics,
    tail_curve,
    tail_inequality_check,
)
from .diffusion import (
    bundle_moments,
    constant_lambda_hellinger,
    constant_lambda_tail,
    market_price_of_risk,
    model_family,
    risk_premium_diagnostic,
    simulate,
    verify_tail_transfer,
)
from .log_optimal import solve_log_optimal, verify_duality
from .lognormal import (
    LognormalParams,
    monte_carlo_growth,
    series_verdict,
    sigma_series,
    zeta_hellinger_bound,
)
from .packed import pack_solution, read_market, unpack_market, write
from . import streams

from .__init__ import __version__

log = logging.getLogger(__name__)

REPORT = "report.json"
CURVES = "curves.csv"

TAIL_COLUMNS = ["n", "M", "tail", "se"]
HELLINGER_COLUMNS = ["n", "alpha", "hellinger", "se"]
PROFILE_COLUMNS = ["n", "delta", "power", "se"]


# ****************************************************************************
# *                                Plot data                                 *
# ****************************************************************************


def _frame(curve, columns):
    if curve is None:
        return pd.DataFrame(columns=columns)
    return curve.frame(columns[1], columns[2])


def _check_hellinger(frame):
    # E V^-alpha per n, ordered by alpha; only reported when it turns upward.
    for n, rows in frame.groupby("n", sort=True):
        values = rows.sort_values("alpha")["hellinger"].to_numpy()
        if np.any(np.diff(values) > 1e-12):
            log.warning("Hellinger values at n = %s are not monotone in alpha", n)


def emit_plotdata(diag, out_dir):
    """
    @brief      Writes tail.csv, hellinger.csv and np_profile.csv for a
                SequenceDiagnostics. Missing curves give header-only files.

    @return     Dict of file name -> path.
    """
    os.makedirs(out_dir, exist_ok=True)

    frames = {
        "tail.csv": _frame(diag.tail, TAIL_COLUMNS),
        "hellinger.csv": _frame(diag.hellinger, HELLINGER_COLUMNS),
        "np_profile.csv": _frame(diag.profile, PROFILE_COLUMNS),
    }
    _check_hellinger(frames["hellinger.csv"])

    paths = {}
    for name, frame in frames.items():
        paths[name] = os.path.join(out_dir, name)
        frame.to_csv(paths[name], index=False)
        log.debug("Wrote %d rows to %s", len(frame), paths[name])
    return paths


def _long(curve, name):
    # One curve in the shared long layout of curves.csv.
    frame = curve.frame("x", "value")
    frame.insert(0, "curve", name)
    return frame


def curves_frame(diag, extra=()):
    parts = [_long(diag.tail, "tail")]
    if diag.hellinger is not None:
        parts.append(_long(diag.hellinger, "hellinger"))
    if diag.profile is not None:
        parts.append(_long(diag.profile, "np_profile"))
    for name, curve in extra:
        parts.append(_long(curve, name))
    return pd.concat(parts, ignore_index=True)


# ****************************************************************************
# *                                 Runners                                  *
# ****************************************************************************


def _curves(laws, cfg):
    # Curves without a verdict, for a single market.
    return SequenceDiagnostics(
        tail_curve(laws, cfg.M_grid),
        hellinger_curve(laws, cfg.alpha_grid),
        Curve(
            [law.n for law in laws],
            cfg.delta_grid,
            [np_profile(law.probs, law.probs / law.values, cfg.delta_grid) for law in laws],
        ),
        cfg.policy,
    )


def _inequality_summary(law, cfg):
    # Tail inequalities over the whole grid, with eta = xi for the ratio bound.
    worst, failures, skipped, count = {}, 0, 0, 0
    for a in cfg.alpha_grid:
        for M in cfg.M_grid:
            for N in cfg.M_grid:
                check = tail_inequality_check(law, a, M, N, eta=law.values)
                count += 1
                failures += not check.ok
                skipped += len(check.notes)
                for name, slack in check.slacks.items():
                    worst[name] = min(worst.get(name, np.inf), slack)
    return {"checks": count, "failures": failures, "skipped": skipped, "worst_slack": worst}


def _load_market(cfg):
    if "market" in cfg.doc:
        return unpack_market(cfg.doc["market"], cfg.file)
    return read_market(cfg.inputs[0])


def run_tree(cfg, pool=None, progress=None):
    m = _load_market(cfg)
    sol = solve_log_optimal(m, pool=pool)
    duality = verify_duality(m, sol, k=cfg.verify_samples, seed=cfg.seed)

    law = TerminalLaw.from_solution(sol, n=1)
    diag = _curves([law], cfg)

    body = {
        "verdict": {
            "label": NOT_APPLICABLE,
            "basis": "a single market carries no asymptotic statement",
        },
        "market": {"nodes": m.n_nodes, "leaves": len(m.leaf), "d": m.d, "T": m.T},
        "solution": dict(pack_solution(sol), iterations=sol.iterations),
        "duality": duality.dump(),
        "tail_inequalities": _inequality_summary(law, cfg),
        "diagnostics": diag.dump(),
    }
    if not duality.passed:
        body["notes"] = ["duality checks failed: " + "; ".join(duality.violations)]
    return body, diag, [], []


def _family_markets(cfg):
    fam = cfg.doc["family"]
    shift = fam.get("shift", 0.0)
    periods = fam.get("periods", "n")
    for n in cfg.n_list:
        p = fam["p"] + shift / n
        if not 0 < p < 1:
            raise ConfigError(
                "family.shift", "p + shift / n = {:g} leaves (0, 1) at n = {}".format(p, n), cfg.file
            )
        yield n, binomial_market(fam["u"], fam["d"], p, n if periods == "n" else periods)


def _file_markets(cfg):
    index = cfg.n_list or list(range(1, len(cfg.inputs) + 1))
    for n, path in zip(index, cfg.inputs):
        yield n, read_market(path)


def run_tree_sequence(cfg, pool=None, progress=None):
    markets = _family_markets(cfg) if "family" in cfg.doc else _file_markets(cfg)
    total = len(cfg.n_list or cfg.inputs)
    if progress is not None:
        markets = progress(markets, total=total)

    laws, triples, rows = [], [], []
    for n, m in markets:
        sol = solve_log_optimal(m, pool=pool)
        V_T = sol.V_T
        laws.append(TerminalLaw(V_T, m.P, n=n))

        rng = streams.generator(cfg.seed, streams.TREE_STRATEGIES, n)
        X = evaluate_value_process(m, random_admissible_strategy(m, rng), 1.0)
        triples.append((X.terminal(m), V_T, 1.0 / V_T, m.P))

        rows.append(
            {
                "n": n,
                "leaves": len(m.leaf),
                "log_value": sol.log_value,
                "gap": sol.gap,
                "iterations": sol.iterations,
            }
        )

    diag = sequence_diagnostics(laws, cfg.M_grid, cfg.alpha_grid, cfg.delta_grid, cfg.policy)
    checks = limit_consistency_checks(laws, cfg.alpha_grid, cfg.M_grid, cfg.policy, triples)

    body = {
        "verdict": diag.verdict.dump(),
        "sequence": rows,
        "diagnostics": diag.dump(),
        "limit_checks": checks,
    }
    return body, diag, [], []


def _closed_form(doc, bundle_T, cfg, companion):
    # Constant models: exact laws of V_T next to the simulated last row.
    lam = market_price_of_risk(doc["sigma"], doc["mu"])
    out = {
        "lambda": lam,
        "hellinger": [constant_lambda_hellinger(lam, bundle_T, a) for a in cfg.alpha_grid],
        "tail": [constant_lambda_tail(lam, bundle_T, M) for M in cfg.M_grid],
    }
    if companion.n:
        out["simulated_hellinger"] = companion.hellinger.values[-1]
        out["simulated_tail"] = companion.tail.values[-1]
    return out


def _transfer_summary(bundle, cfg):
    worst = {}
    for a in cfg.alpha_grid:
        for M in cfg.M_grid:
            for N in cfg.M_grid:
                for name, res in verify_tail_transfer(bundle, a, M, N).items():
                    cur = worst.get(name)
                    if cur is None or res["slack"] < cur["slack"]:
                        worst[name] = dict(res, alpha=a, M=M, N=N)
    return worst


def run_diffusion(cfg, pool=None, progress=None):
    doc = cfg.doc["model"]
    try:
        family = model_family(doc)
        for n in cfg.n_list:
            family(n)
    except KeyError as e:
        raise ConfigError("model", "missing key {}".format(e), cfg.file)
    except ValueError as e:
        raise ConfigError("model", str(e), cfg.file)

    mc = {"paths": cfg.paths, "steps": cfg.steps, "seed": cfg.seed}
    diag = risk_premium_diagnostic(
        family,
        cfg.n_list,
        cfg.M_grid,
        mc,
        cfg.policy,
        cfg.alpha_grid,
        pool=pool,
        progress=progress,
    )

    # Same stream as the diagnostic, so these are the paths it used.
    n = cfg.n_list[-1]
    stream = "{}:{}".format(streams.DIFFUSION_PATHS, n)
    bundle = simulate(family(n), cfg.steps, cfg.paths, cfg.seed, stream, pool=pool)

    body = {
        "verdict": diag.verdict.dump(),
        "numeraire_verdict": diag.companion.verdict.dump(),
        "agree": diag.agree,
        "diagnostics": diag.dump(),
        "last": dict(bundle_moments(bundle), n=n),
        "tail_transfer": _transfer_summary(bundle, cfg),
    }
    if doc["type"] == "constant":
        body["closed_form"] = _closed_form(doc, bundle.spec.T, cfg, diag.companion)

    extra = [("integral_tail", diag.tail)]
    files = [("terminals.csv", bundle.frame())]
    return body, diag.companion, files, extra


def run_lognormal(cfg, pool=None, progress=None):
    try:
        params = LognormalParams.from_doc(cfg.doc["params"])
    except KeyError as e:
        raise ConfigError("params", "missing key {}".format(e), cfg.file)
    except ValueError as e:
        raise ConfigError("params", str(e), cfg.file)

    body = {}
    if params.symbolic:
        sv = series_verdict(params, N_report=cfg.n_max)
        body["series"] = sv.dump()
    else:
        series = sigma_series(params, 1.0, params.horizon)
        body["series"] = series.dump()
        body["trend"] = series.trend()

    growth = monte_carlo_growth(params, cfg.n_max, cfg.paths, cfg.seed, pool=pool)
    laws = growth.pop("laws")
    diag = sequence_diagnostics(laws, cfg.M_grid, cfg.alpha_grid, cfg.delta_grid, cfg.policy)

    if params.symbolic:
        body["verdict"] = {"label": sv.label, "rule": sv.rule, "basis": sv.basis}
    else:
        body["verdict"] = {
            "label": NOT_APPLICABLE,
            "basis": "numeric parameters carry no series verdict; see trend and monte_carlo_verdict",
        }
    body["monte_carlo_verdict"] = diag.verdict.dump()

    zeta = []
    for a in cfg.alpha_grid:
        products, bounds = zeta_hellinger_bound(params, a, cfg.n_max)
        zeta.append({"alpha": a, "product": products[-1], "bound": bounds[-1]})

    body["monte_carlo"] = growth
    body["zeta_hellinger"] = zeta
    body["diagnostics"] = diag.dump()

    trend = pd.DataFrame(
        {k: growth[k] for k in ("n", "q25", "median", "q75", "expected_log")}
    )
    return body, diag, [("trend.csv", trend)], []


RUNNERS = {
    "tree": run_tree,
    "tree-sequence": run_tree_sequence,
    "diffusion": run_diffusion,
    "lognormal": run_lognormal,
}


# ****************************************************************************
# *                                Front door                                *
# ****************************************************************************


def provenance(cfg):
    return {
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
        "timestamp": timestamptostr(time.time()),
    }


def _execute(cfg, out_dir, pool, progress):
    body, diag, files, extra = RUNNERS[cfg.kind](cfg, pool, progress)

    os.makedirs(out_dir, exist_ok=True)
    report = dict(body, kind=cfg.kind, policy=cfg.policy.dump(), provenance=provenance(cfg))
    write(os.path.join(out_dir, REPORT), report)

    curves_frame(diag, extra).to_csv(os.path.join(out_dir, CURVES), index=False)
    emit_plotdata(diag, out_dir)
    for name, frame in files:
        frame.to_csv(os.path.join(out_dir, name), index=False)

    log.info("Wrote %s scenario to %s", cfg.kind, out_dir)
    return report


def run_scenario(cfg, out_dir, pool=None, progress=None):
    """
    @brief      Runs one scenario and writes report.json, curves.csv and the
                plot data into out_dir.

    @param      cfg       ScenarioConfig (or a raw config dict)
    @param      out_dir   Output folder, created if missing
    @param      pool      Optional Pool
    @param      progress  Optional iterator wrapper (e.g. tqdm) over n

    @return     (exit code, report); code 0 on success, 2 on config, market
                or file errors, 3 on any other ValueError or ArithmeticError
                raised while computing. Failed runs return {"error": message}
                as the report.
    """
    try:
        if not isinstance(cfg, ScenarioConfig):
            cfg = ScenarioConfig(cfg)
        return 0, _execute(cfg, out_dir, pool, progress)
    except (ConfigError, MarketError, TypeError, OSError) as e:
        log.error("Scenario failed: %s", e)
        return 2, {"error": str(e)}
    except (ArithmeticError, ValueError) as e:
        log.error("Numerical failure: %s", e)
        return 3, {"error": str(e)}
