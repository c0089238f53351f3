# Diffusion markets: market price of risk, explicit numeraire and Monte Carlo laws

import logging

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.stats import norm

from .classes import Policy, RankError, pmap
from .diagnostics import (
    DEFAULT_ALPHA_GRID,
    SequenceDiagnostics,
    TerminalLaw,
    sequence_diagnostics,
    tail_curve,
    verdict,
)
from . import streams

log = logging.getLogger(__name__)

RANK_TOL = 1e-10  # smallest singular value of sigma treated as full rank
RESIDUAL_TOL = 1e-10


class DiffusionModelSpec:
    """
    @brief      dS^i = S^i (mu_i dt + (beta_i, dW)) on [0, T].

    @param      mu     Drift, shape (d,), or callable mu(t, S) -> (P, d)
                       for a batch S of shape (P, d)
    @param      sigma  Volatility rows beta_i, shape (d, m), or callable
                       sigma(t, S) -> (P, d, m)
    @param      T      Horizon
    @param      s0     Initial prices, shape (d,)
    """

    def __init__(self, mu, sigma, T, s0=1.0, d=None, m=None):
        if T <= 0:
            raise ValueError("horizon must be > 0")
        self.T = float(T)
        self.constant = not (callable(mu) or callable(sigma))

        if callable(sigma):
            if d is None or m is None:
                raise ValueError("d and m are required with callable coefficients")
            self.d, self.m = int(d), int(m)
        else:
            sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
            self.d, self.m = sigma.shape
        if self.d > self.m:
            raise ValueError("need at most as many stocks as drivers (d <= m)")

        self.mu = mu if callable(mu) else np.broadcast_to(
            np.asarray(mu, dtype=float), (self.d,)
        ).copy()
        self.sigma = sigma
        self.s0 = np.broadcast_to(np.asarray(s0, dtype=float), (self.d,)).copy()
        if np.any(self.s0 <= 0):
            raise ValueError("initial prices must be > 0")

    def coefficients(self, t, S):
        # Batched (mu, sigma) at time t for prices S of shape (P, d).
        P = S.shape[0]
        mu = self.mu(t, S) if callable(self.mu) else np.broadcast_to(self.mu, (P, self.d))
        if callable(self.sigma):
            sigma = self.sigma(t, S)
        else:
            sigma = np.broadcast_to(self.sigma, (P, self.d, self.m))
        return np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float)


def model_family(doc):
    """
    @brief      Builds n -> DiffusionModelSpec from a model document.

    "constant":              {"mu": [..], "sigma": [[..]], "T", "s0"},
                             the same model for every n
    "scalar-power-family":   one stock and one driver with
                             mu_n = a n^-p, sigma_n = b n^-q, T(n) = c n^r
    """
    kind = doc.get("type")
    if kind == "constant":
        spec = DiffusionModelSpec(doc["mu"], doc["sigma"], doc["T"], doc.get("s0", 1.0))
        return lambda n: spec
    if kind == "scalar-power-family":
        a, p = float(doc["a"]), float(doc.get("p", 0.0))
        b, q = float(doc["b"]), float(doc.get("q", 0.0))
        c, r = float(doc.get("c", 1.0)), float(doc.get("r", 0.0))
        if b <= 0 or c <= 0:
            raise ValueError("scalar-power-family needs b > 0 and c > 0")
        s0 = doc.get("s0", 1.0)
        return lambda n: DiffusionModelSpec(
            [a * n ** -p], [[b * n ** -q]], c * n ** r, s0
        )
    raise ValueError("unknown model type {!r}".format(kind))


def market_price_of_risk(sigma, mu):
    """
    @brief      lambda = sigma^T (sigma sigma^T)^-1 mu by a Cholesky solve.

    @param      sigma  (d, m) volatility matrix of rank d
    @param      mu     (d,) drift

    @return     lambda, shape (m,).
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    mu = np.asarray(mu, dtype=float).ravel()
    if sigma.shape[0] != mu.size:
        raise ValueError("sigma has {} rows for {} drifts".format(sigma.shape[0], mu.size))

    smallest = linalg.svdvals(sigma).min()
    if smallest <= RANK_TOL:
        raise RankError("volatility matrix is rank deficient", smallest)

    lam = sigma.T @ linalg.cho_solve(linalg.cho_factor(sigma @ sigma.T), mu)
    residual = np.linalg.norm(sigma @ lam - mu)
    if residual > RESIDUAL_TOL * max(np.linalg.norm(mu), 1.0):
        raise RankError("market price of risk residual {:.3e}".format(residual), smallest)
    return lam


def _batched_lambda(sigma, mu):
    # Batched solve; also returns the paths whose sigma lost rank.
    sv = np.linalg.svd(sigma, compute_uv=False)
    bad = sv.min(axis=-1) <= RANK_TOL
    lam = np.zeros((sigma.shape[0], sigma.shape[2]))
    ok = ~bad
    if np.any(ok):
        G = sigma[ok] @ np.swapaxes(sigma[ok], 1, 2)
        x = np.linalg.solve(G, mu[ok][..., None])[..., 0]
        lam[ok] = np.einsum("pdm,pd->pm", sigma[ok], x)
    return lam, bad


class PathBundle:
    """
    @brief      Simulated terminals of S, V and the integral of |lambda|^2.

    Rank-collapse paths are flagged and excluded from the terminal arrays.
    """

    def __init__(self, spec, steps, seed, stream, S_T, log_V_T, integral, excluded, paths=None):
        self.spec = spec
        self.steps = steps
        self.dt = spec.T / steps
        self.times = np.linspace(0.0, spec.T, steps + 1)
        self.seed = seed
        self.stream = stream
        self.S_T = S_T
        self.log_V_T = log_V_T
        self.integral = integral
        self.excluded = excluded
        self.paths = paths

    @property
    def V_T(self):
        return np.exp(self.log_V_T)

    @property
    def n_paths(self):
        return self.log_V_T.size

    def frame(self):
        # Per-path terminals, one row per kept path.
        cols = {"log_V_T": self.log_V_T, "integral": self.integral}
        for i in range(self.S_T.shape[1]):
            cols["S_T_{}".format(i)] = self.S_T[:, i]
        return pd.DataFrame(cols)


def _simulate_chunk(spec, steps, dW, keep=False):
    # Log-Euler over one chunk of driver increments (P, steps, m).
    P = dW.shape[0]
    dt = spec.T / steps
    lnS = np.tile(np.log(spec.s0), (P, 1))
    lnV = np.zeros(P)
    integral = np.zeros(P)
    bad = np.zeros(P, dtype=bool)
    track = {"S": [np.exp(lnS)], "log_V": [np.zeros(P)]}

    if spec.constant:
        lam = market_price_of_risk(spec.sigma, spec.mu)
        drift = (spec.mu - 0.5 * np.sum(spec.sigma ** 2, axis=1)) * dt
        for k in range(steps):
            lnS = lnS + drift + dW[:, k] @ spec.sigma.T
            lnV = lnV + 0.5 * (lam @ lam) * dt + dW[:, k] @ lam
            integral = integral + (lam @ lam) * dt
            if keep:
                track["S"].append(np.exp(lnS))
                track["log_V"].append(lnV.copy())
    else:
        for k in range(steps):
            S = np.exp(lnS)
            mu, sigma = spec.coefficients(k * dt, S)
            lam, lost = _batched_lambda(sigma, mu)
            bad |= lost
            drift = mu - 0.5 * np.sum(sigma ** 2, axis=2)
            lnS = lnS + drift * dt + np.einsum("pdm,pm->pd", sigma, dW[:, k])
            sq = np.sum(lam ** 2, axis=1)
            lnV = lnV + 0.5 * sq * dt + np.sum(lam * dW[:, k], axis=1)
            integral = integral + sq * dt
            if keep:
                track["S"].append(np.exp(lnS))
                track["log_V"].append(lnV.copy())

    bad |= ~np.isfinite(lnV) | ~np.all(np.isfinite(lnS), axis=1)
    return np.exp(lnS), lnV, integral, bad, track


def driver_increments(spec, steps, n_paths, seed, stream=streams.DIFFUSION_PATHS, first=0):
    # Brownian increments (n_paths, steps, m), one counter-based stream per path.
    z = streams.normals(seed, stream, first, n_paths, (steps, spec.m))
    return z * np.sqrt(spec.T / steps)


def simulate(
    spec,
    steps,
    n_paths,
    seed,
    stream=streams.DIFFUSION_PATHS,
    dW=None,
    keep_paths=False,
    pool=None,
    chunk=4096,
):
    """
    @brief      Monte Carlo of (S, V, integral of |lambda|^2) on a uniform grid.

    ln S takes log-Euler steps, V follows the closed-form exponential on the
    same increments, so both are exact for constant coefficients. Results do
    not depend on chunk size or on the pool.

    @param      spec        The DiffusionModelSpec
    @param      steps       Number of time steps
    @param      n_paths     Number of paths
    @param      seed        Run seed
    @param      stream      Stream name
    @param      dW          Optional driver increments (n_paths, steps, m)
    @param      keep_paths  Keep whole S, V and dW paths on the bundle

    @return     PathBundle.
    """
    if steps < 1 or n_paths < 1:
        raise ValueError("need steps >= 1 and n_paths >= 1")
    if dW is not None:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (n_paths, steps, spec.m):
            raise ValueError("dW must have shape {}".format((n_paths, steps, spec.m)))

    starts = list(range(0, n_paths, chunk))

    def work(first):
        count = min(chunk, n_paths - first)
        if dW is None:
            inc = driver_increments(spec, steps, count, seed, stream, first)
        else:
            inc = dW[first:first + count]
        return inc, _simulate_chunk(spec, steps, inc, keep_paths)

    parts = pmap(pool, work, starts)

    S_T = np.concatenate([p[1][0] for p in parts])
    lnV = np.concatenate([p[1][1] for p in parts])
    integral = np.concatenate([p[1][2] for p in parts])
    bad = np.concatenate([p[1][3] for p in parts])

    paths = None
    if keep_paths:
        paths = {
            "dW": np.concatenate([p[0] for p in parts]),
            "S": np.concatenate([np.stack(p[1][4]["S"], axis=1) for p in parts]),
            "log_V": np.concatenate([np.stack(p[1][4]["log_V"], axis=1) for p in parts]),
            "excluded": bad,
        }

    excluded = int(bad.sum())
    if excluded:
        log.warning("Excluded %d of %d paths after rank collapse", excluded, n_paths)

    return PathBundle(
        spec, steps, seed, stream, S_T[~bad], lnV[~bad], integral[~bad], excluded, paths
    )


def refine_increments(dW):
    # Each increment split into two equal halves: twice the steps, same path.
    dW = np.asarray(dW, dtype=float)
    return np.repeat(dW / 2.0, 2, axis=1)


def replicate_numeraire(bundle):
    """
    @brief      Wealth of the fraction strategy delta = (sigma sigma^T)^-1 mu,
                rebalanced on the simulation grid.

    Constant coefficients only; needs a bundle simulated with keep_paths.

    @return     Array (P, steps + 1) of log wealth.
    """
    spec = bundle.spec
    if bundle.paths is None:
        raise ValueError("bundle was simulated without keep_paths")
    if not spec.constant:
        raise ValueError("replication check needs constant coefficients")

    sig = spec.sigma
    delta = linalg.cho_solve(linalg.cho_factor(sig @ sig.T), spec.mu)
    S = bundle.paths["S"][~bundle.paths["excluded"]]
    R = S[:, 1:] / S[:, :-1] - 1.0
    growth = np.log1p(R @ delta)
    return np.concatenate([np.zeros((S.shape[0], 1)), np.cumsum(growth, axis=1)], axis=1)


def bundle_moments(bundle):
    # Json moments block of a bundle.
    lnV = bundle.log_V_T
    inv = np.exp(-lnV)
    P = max(bundle.n_paths, 1)
    return {
        "paths": bundle.n_paths,
        "excluded": bundle.excluded,
        "steps": bundle.steps,
        "T": bundle.spec.T,
        "seed": bundle.seed,
        "mean_log_V_T": float(lnV.mean()),
        "var_log_V_T": float(lnV.var(ddof=1)) if P > 1 else 0.0,
        "mean_inverse_V_T": float(inv.mean()),
        "se_inverse_V_T": float(inv.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0,
        "mean_integral": float(bundle.integral.mean()),
    }


def constant_lambda_hellinger(lam, T, alpha):
    # E V_T^-alpha for a deterministic constant lambda.
    return np.exp(-0.5 * alpha * (1 - alpha) * np.dot(lam, lam) * T)


def constant_lambda_tail(lam, T, M):
    # P(V_T >= M) with ln V_T ~ N(|lambda|^2 T / 2, |lambda|^2 T).
    s2 = np.dot(lam, lam) * T
    if s2 == 0:
        return float(1.0 >= M)
    return norm.cdf((0.5 * s2 - np.log(M)) / np.sqrt(s2))


class RiskPremiumDiagnostics(SequenceDiagnostics):
    """
    @brief      Tail diagnostics of the integral of |lambda|^2 with the
                numeraire laws carried alongside.

    @param      companion  SequenceDiagnostics of the V_T laws
    @param      agree      Both curves give the same verdict
    """

    def __init__(self, tail, companion, policy, moments):
        super().__init__(tail, None, None, policy)
        self.companion = companion
        self.moments = moments
        self.agree = None

    def dump(self):
        out = super().dump()
        out["companion"] = self.companion.dump()
        out["agree"] = self.agree
        out["moments"] = self.moments
        return out


def risk_premium_diagnostic(
    family,
    n_list,
    M_grid,
    mc,
    policy=None,
    alpha_grid=None,
    pool=None,
    progress=None,
):
    """
    @brief      Decides NAA / SAA from tails of the integral of |lambda_n|^2.

    Tails of V_T are simulated on the same paths and must lead to the same
    verdict; a disagreement is logged and recorded on the result.

    @param      family  Callable n -> DiffusionModelSpec
    @param      n_list  Sequence indices
    @param      M_grid  Tail levels
    @param      mc      Dict with "paths", "steps" and "seed"
    @param      progress  Optional wrapper over n_list (e.g. tqdm)

    @return     RiskPremiumDiagnostics.
    """
    policy = policy or Policy()
    alpha_grid = DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid
    iterate = progress(n_list) if progress is not None else n_list

    integral_laws, value_laws, moments = [], [], []
    for n in iterate:
        stream = "{}:{}".format(streams.DIFFUSION_PATHS, n)
        bundle = simulate(family(n), mc["steps"], mc["paths"], mc["seed"], stream, pool=pool)
        if bundle.n_paths == 0:
            raise RankError("every path lost rank at n = {}".format(n), 0.0)
        integral_laws.append(TerminalLaw(bundle.integral, n=n, positive=False))
        value_laws.append(TerminalLaw(bundle.V_T, n=n))
        moments.append(dict(bundle_moments(bundle), n=n))
        log.info("Simulated n = %s: mean integral %.6g", n, moments[-1]["mean_integral"])

    companion = sequence_diagnostics(value_laws, M_grid, alpha_grid, policy=policy)
    diag = RiskPremiumDiagnostics(tail_curve(integral_laws, M_grid), companion, policy, moments)
    diag.verdict = verdict(diag, policy)
    diag.agree = diag.verdict.label == companion.verdict.label
    if not diag.agree:
        log.warning(
            "Integral tails give %s but numeraire tails give %s",
            diag.verdict,
            companion.verdict,
        )
    return diag


def verify_tail_transfer(bundle, alpha, M, N):
    """
    @brief      Empirical slacks of the two tail transfers between V_T and
                I = integral of |lambda|^2:

                P(V_T >= M) <= e^N / M + P(I >= N)
                P(I >= M)   <= N^a exp(-a (1 - a) M / 2) + P(V_T >= N)

    @return     Dict per inequality with slack, standard error and pass flag
                (slack >= -3 SE).
    """
    if not 0 < alpha < 1 or M <= 0 or N <= 0:
        raise ValueError("need alpha in (0, 1) and M, N > 0")

    lnV, I = bundle.log_V_T, bundle.integral
    P = max(lnV.size, 1)
    out = {}

    pairs = {
        "value_tail": (np.exp(N) / M, (I >= N).astype(float) - (lnV >= np.log(M))),
        "integral_tail": (
            N ** alpha * np.exp(-0.5 * alpha * (1 - alpha) * M),
            (lnV >= np.log(N)).astype(float) - (I >= M),
        ),
    }
    for name, (const, diff) in pairs.items():
        slack = const + float(diff.mean())
        se = float(diff.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0
        out[name] = {
            "slack": slack,
            "se": se,
            "ok": bool(slack >= -3 * se - 1e-12),
        }
    return out
