# One log-normal stock over infinitely many periods: fractions, series and densities

import logging
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import brentq

from .classes import (
    NAA,
    SAA,
    NOT_APPLICABLE,
    ConvergenceError,
    pmap,
)
from .diagnostics import TerminalLaw
from . import streams

log = logging.getLogger(__name__)

QUAD_ORDER = 64
MAX_QUAD_ORDER = 1024
QUAD_TOL = 1e-10
EPS_GRID = tuple(np.round(np.arange(0.1, 1.0, 0.1), 10))

BOUNDED = "bounded-series"
LARGE_DRIFT = "divergent-large-drift"
SMALL_DRIFT = "divergent-small-drift"
CRITERION = "series-criterion"


class LognormalParams:
    """
    @brief      Period drifts mu_k and volatilities sigma_k > 0, k = 1, 2, ...

    Power mode: mu_k = a k^-p, sigma_k = b k^-q, which lets the series be
    classified exactly. Numeric mode: explicit finite arrays.
    """

    def __init__(self, mode, a=None, p=None, b=None, q=None, mu=None, sigma=None):
        self.mode = mode
        if mode == "power":
            if b is None or b <= 0:
                raise ValueError("power mode needs b > 0")
            if p < 0 or q < 0:
                raise ValueError("power mode needs p, q >= 0")
            self.a, self.p, self.b, self.q = float(a), float(p), float(b), float(q)
        elif mode == "numeric":
            self.mu = np.asarray(mu, dtype=float).ravel()
            self.sigma = np.asarray(sigma, dtype=float).ravel()
            if self.mu.shape != self.sigma.shape or self.mu.size == 0:
                raise ValueError("mu and sigma must be nonempty arrays of one length")
            if np.any(~(self.sigma > 0)):
                raise ValueError("sigma_k must be > 0")
        else:
            raise ValueError("mode must be 'power' or 'numeric'")

    @classmethod
    def power(cls, a, p, b, q):
        return cls("power", a=a, p=p, b=b, q=q)

    @classmethod
    def numeric(cls, mu, sigma):
        return cls("numeric", mu=mu, sigma=sigma)

    @classmethod
    def from_doc(cls, doc):
        mode = doc.get("mode", "power")
        if mode == "power":
            return cls.power(doc["a"], doc.get("p", 0.0), doc["b"], doc.get("q", 0.0))
        return cls.numeric(doc["mu"], doc["sigma"])

    @property
    def symbolic(self):
        return self.mode == "power"

    @property
    def horizon(self):
        # Largest k the parameters define.
        return None if self.symbolic else self.mu.size

    def mu_sigma(self, N):
        if self.symbolic:
            k = np.arange(1, N + 1, dtype=float)
            return self.a * k ** -self.p, self.b * k ** -self.q
        if N > self.mu.size:
            raise ValueError("only {} periods are defined".format(self.mu.size))
        return self.mu[:N], self.sigma[:N]

    def dump(self):
        if self.symbolic:
            return {"mode": "power", "a": self.a, "p": self.p, "b": self.b, "q": self.q}
        return {"mode": "numeric", "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}


@lru_cache(maxsize=None)
def hermite_rule(order):
    # Nodes and weights for E f(xi), xi standard normal.
    x, w = hermgauss(order)
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


def gaussian_expectation(f, order=QUAD_ORDER, max_order=MAX_QUAD_ORDER, tol=QUAD_TOL):
    """
    @brief      E f(xi) by Gauss-Hermite, doubling the order until two
                successive values differ by less than tol.

    @param      f     Vectorised in its last axis over the nodes

    @return     (value, order used).
    """
    x, w = hermite_rule(order)
    value = f(x) @ w
    change = np.inf
    while order < max_order:
        order *= 2
        x, w = hermite_rule(order)
        new = f(x) @ w
        change = np.max(np.abs(new - value))
        value = new
        if change < tol:
            log.debug("Quadrature settled at order %d", order)
            return value, order

    raise ConvergenceError(
        "quadrature did not settle by order {}".format(max_order),
        {"achieved": float(change), "order": order},
    )


def _log_return(mu, sigma, x):
    return mu - 0.5 * sigma ** 2 + sigma * x


def _log_wealth(delta, y):
    # ln(1 + delta (e^y - 1)) without cancellation.
    with np.errstate(divide="ignore"):
        return np.logaddexp(np.log1p(-delta), np.log(delta) + y)


def _score(delta, y):
    # d/d delta of ln(1 + delta (e^y - 1)).
    e = np.exp(-np.abs(y))
    up = (1.0 - e) / ((1.0 - delta) * e + delta)
    down = (e - 1.0) / ((1.0 - delta) + delta * e)
    return np.where(y > 0, up, down)


def expected_log_growth(delta, mu, sigma, quad_order=QUAD_ORDER):
    """
    @brief      E ln(1 + delta R) with R = exp(mu - sigma^2/2 + sigma xi) - 1.

    Vectorised over delta (and over mu, sigma by broadcasting). delta = 0
    and delta = 1 return 0 and mu - sigma^2 / 2 exactly.
    """
    delta = np.asarray(delta, dtype=float)
    if np.any((delta < 0) | (delta > 1)):
        raise ValueError("delta must lie in [0, 1]")
    if np.any(~(np.asarray(sigma) > 0)):
        raise ValueError("sigma must be > 0")

    d = delta[..., None]
    m = np.asarray(mu, dtype=float)[..., None]
    s = np.asarray(sigma, dtype=float)[..., None]
    value, _ = gaussian_expectation(
        lambda x: _log_wealth(d, _log_return(m, s, x)), order=quad_order
    )
    value = np.where(delta == 0, 0.0, value)
    value = np.where(delta == 1, np.asarray(mu) - 0.5 * np.asarray(sigma) ** 2, value)
    return float(value) if value.ndim == 0 else value


@lru_cache(maxsize=65536)
def _optimal_fraction(mu, sigma, tol, max_iter):
    if np.expm1(mu) <= 0:
        return 0.0
    if mu >= sigma ** 2:
        return 1.0

    # Quadrature order settled once near the optimum, then fixed for the root search.
    start = min(max(mu / sigma ** 2, 1e-6), 1 - 1e-6)
    _, order = gaussian_expectation(
        lambda x: _log_wealth(start, _log_return(mu, sigma, x))
    )
    x, w = hermite_rule(order)
    y = _log_return(mu, sigma, x)

    # The expected score is decreasing in delta.
    def score(d):
        return _score(d, y) @ w

    if score(0.0) <= 0:
        return 0.0
    if score(1.0) >= 0:
        return 1.0
    try:
        return float(brentq(score, 0.0, 1.0, xtol=tol, maxiter=max_iter))
    except (ValueError, RuntimeError) as e:
        raise ConvergenceError(
            "optimal fraction did not converge",
            {"mu": mu, "sigma": sigma, "order": order, "reason": str(e)},
        )


def optimal_fraction(mu, sigma, tol=1e-12, max_iter=200):
    """
    @brief      argmax over delta in [0, 1] of E ln(1 + delta R).

    Boundaries come from the derivative: E R = e^mu - 1 <= 0 gives 0 and
    1 - e^(sigma^2 - mu) >= 0 gives 1. Interior points are the root of the
    expected score, bracketed by [0, 1].
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return _optimal_fraction(float(mu), float(sigma), float(tol), int(max_iter))


def optimal_fractions(params, n, pool=None):
    # delta*_k for k = 1..n.
    mu, sigma = params.mu_sigma(n)
    return np.array(pmap(pool, lambda ms: optimal_fraction(*ms), list(zip(mu, sigma))))


def compensated_cumsum(x, axis=-1):
    # Kahan-compensated cumulative sum along axis.
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    out = np.empty_like(x)
    total = np.zeros(x.shape[1:])
    carry = np.zeros(x.shape[1:])
    for i in range(x.shape[0]):
        y = x[i] - carry
        t = total + y
        carry = (t - total) - y
        total = t
        out[i] = total
    return np.moveaxis(out, 0, axis)


def period_log_returns(deltas, mu, sigma, xi):
    # ln(1 + delta_k R_k) for realisations xi (..., n).
    return _log_wealth(np.asarray(deltas), _log_return(mu, sigma, np.asarray(xi)))


def numeraire_path(params, n, xi, deltas=None):
    """
    @brief      V_k = prod (1 + delta*_j R_j) for k = 1..n.

    @param      xi      Realisations of xi_1..xi_n, shape (n,) or (P, n)
    @param      deltas  Optional precomputed delta*_1..delta*_n

    @return     (V path, ln V path), each of the shape of xi.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != n:
        raise ValueError("need {} realisations, got {}".format(n, xi.shape[-1]))
    mu, sigma = params.mu_sigma(n)
    deltas = optimal_fractions(params, n) if deltas is None else deltas
    logs = compensated_cumsum(period_log_returns(deltas, mu, sigma, xi))
    return np.exp(logs), logs


class SigmaSeries:
    """
    @brief      Partial sums of the small-drift series
                sum (mu_k / sigma_k)^2 over 0 < mu_k <= (1 + eps) sigma_k^2 / 2
                and the large-drift series sum mu_k over the rest with mu_k > 0.
    """

    def __init__(self, eps, mu, sigma):
        self.eps = eps
        self.k = np.arange(1, mu.size + 1)
        cut = 0.5 * (1 + eps) * sigma ** 2
        self.nonpositive = mu <= 0
        self.small = (mu > 0) & (mu <= cut)
        self.large = mu > cut
        self.sigma1 = compensated_cumsum(np.where(self.small, (mu / sigma) ** 2, 0.0))
        self.sigma2 = compensated_cumsum(np.where(self.large, mu, 0.0))
        self.total = self.sigma1 + self.sigma2
        self.classification = None
        self.condition_holds = None
        self.witness = None

    @property
    def N(self):
        return self.k.size

    def trend(self, points=10):
        # Partial sums at log-spaced n, for series that cannot be classified.
        idx = np.unique(np.geomspace(1, self.N, min(points, self.N)).astype(int)) - 1
        return {
            "n": (idx + 1).tolist(),
            "sigma1": self.sigma1[idx].tolist(),
            "sigma2": self.sigma2[idx].tolist(),
            "total": self.total[idx].tolist(),
        }

    def dump(self):
        return {
            "eps": self.eps,
            "N": self.N,
            "sigma1": float(self.sigma1[-1]),
            "sigma2": float(self.sigma2[-1]),
            "total": float(self.total[-1]),
            "classification": self.classification,
            "condition_holds": self.condition_holds,
            "witness": self.witness,
        }


def classify_power(params, eps):
    """
    @brief      Convergence of both series and the vanishing-volatility
                condition, decided from the exponents of a power family.

    The eventual regime of k is fixed by mu_k / ((1 + eps) sigma_k^2 / 2),
    which behaves like k^(2q - p).

    @return     Dict with "regime", "sigma1", "sigma2", "total" (each
                "converges" or "diverges") and "condition" (bool).
    """
    a, p, b, q = params.a, params.p, params.b, params.q
    if a <= 0:
        return {
            "regime": "nonpositive",
            "sigma1": "converges",
            "sigma2": "converges",
            "total": "converges",
            "condition": True,
        }

    c = 0.5 * (1 + eps)
    slope = 2 * q - p
    if slope > 0 or (slope == 0 and a > c * b ** 2):
        regime = "large"
    else:
        regime = "small"

    if regime == "large":
        s1, s2 = "converges", "converges" if p > 1 else "diverges"
        condition = True
    else:
        s1, s2 = "converges" if 2 * (p - q) > 1 else "diverges", "converges"
        condition = q > 0

    total = "converges" if s1 == s2 == "converges" else "diverges"
    return {"regime": regime, "sigma1": s1, "sigma2": s2, "total": total, "condition": condition}


def sigma_series(params, eps, N):
    """
    @brief      Partial sums up to N with their masks; power families also get
                the exact classification and the truth of the condition
                sigma_k -> 0 along the small-drift periods.
    """
    if eps <= 0 or N < 1:
        raise ValueError("need eps > 0 and N >= 1")
    mu, sigma = params.mu_sigma(N)
    series = SigmaSeries(eps, mu, sigma)
    if params.symbolic:
        series.classification = classify_power(params, eps)
        series.condition_holds = series.classification["condition"]
        series.witness = eps if series.condition_holds else None
    return series


def _candidates(params):
    # eps grid plus the regime threshold of the boundary exponent case.
    eps = set(EPS_GRID)
    if params.symbolic and params.a > 0 and 2 * params.q == params.p:
        threshold = 2 * params.a / params.b ** 2 - 1
        for e in (threshold, threshold / 2):
            if 0 < e < 1:
                eps.add(float(e))
    return sorted(eps)


class SeriesVerdict:
    def __init__(self, label, rule, basis, fired, eps, series):
        self.label = label
        self.rule = rule
        self.basis = basis
        self.fired = fired
        self.eps = eps
        self.series = series

    def dump(self):
        return {
            "label": self.label,
            "rule": self.rule,
            "basis": self.basis,
            "fired": self.fired,
            "eps": self.eps,
            "series": self.series.dump(),
        }


def series_verdict(params, N_report=1000):
    """
    @brief      NAA / SAA of a power family from the two series.

    Rules, in order:
      bounded-series         total series at eps = 1 converges -> NAA
      divergent-large-drift  large-drift series diverges for some eps -> SAA
      divergent-small-drift  some eps in (0, 1) meets the condition and the
                             small-drift series diverges -> SAA
      series-criterion       some eps in (0, 1) meets the condition -> NAA
                             iff the total series converges
    otherwise NOT_APPLICABLE. Every rule is evaluated; the first that fires
    gives the label and the rest are listed in "fired".
    """
    if not params.symbolic:
        raise ValueError("verdict requires symbolic family; use sigma_series trend report")

    fired = []
    at_one = classify_power(params, 1.0)
    if at_one["total"] == "converges":
        fired.append((BOUNDED, NAA, 1.0, "total series at eps = 1 converges"))

    inner = [e for e in _candidates(params) if 0 < e < 1]
    for e in inner + [1.0]:
        if classify_power(params, e)["sigma2"] == "diverges":
            fired.append((LARGE_DRIFT, SAA, e, "large-drift series diverges at eps = {:g}".format(e)))
            break

    for e in inner:
        c = classify_power(params, e)
        if c["condition"] and c["sigma1"] == "diverges":
            fired.append(
                (SMALL_DRIFT, SAA, e,
                 "volatility vanishes on small-drift periods and the small-drift "
                 "series diverges at eps = {:g}".format(e))
            )
            break

    for e in inner:
        c = classify_power(params, e)
        if c["condition"]:
            label = NAA if c["total"] == "converges" else SAA
            fired.append(
                (CRITERION, label, e,
                 "condition met at eps = {:g}; total series {}".format(e, c["total"]))
            )
            break

    if not fired:
        series = sigma_series(params, 1.0, N_report)
        log.info("No series rule applies to %s", params.dump())
        return SeriesVerdict(NOT_APPLICABLE, None, "no rule applies", [], None, series)

    rule, label, eps, basis = fired[0]
    labels = {f[1] for f in fired}
    if len(labels) > 1:
        log.warning("Series rules disagree: %s", fired)

    series = sigma_series(params, eps, N_report)
    log.info("Series verdict %s by %s at eps = %g", label, rule, eps)
    return SeriesVerdict(
        label,
        rule,
        basis,
        [{"rule": f[0], "label": f[1], "eps": f[2]} for f in fired],
        eps,
        series,
    )


def zeta_moment(alpha, mu, sigma):
    """
    @brief      E zeta^alpha of the one-period density factor.

    1 for mu <= 0, exp(-alpha (1 - alpha) (mu / sigma)^2 / 2) for
    0 < mu <= sigma^2, and exp(-alpha mu + alpha (1 + alpha) sigma^2 / 2)
    above.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if mu <= 0:
        return 1.0
    if mu <= sigma ** 2:
        return float(np.exp(-0.5 * alpha * (1 - alpha) * (mu / sigma) ** 2))
    return float(np.exp(-alpha * mu + 0.5 * alpha * (1 + alpha) * sigma ** 2))


def zeta(mu, sigma, xi):
    # One-period density factor as a function of the realisation xi.
    xi = np.asarray(xi, dtype=float)
    if mu <= 0:
        return np.ones_like(xi)
    if mu <= sigma ** 2:
        r = mu / sigma
        return np.exp(-0.5 * r ** 2 - r * xi)
    return np.exp(-mu + 0.5 * sigma ** 2 - sigma * xi)


def zeta_density_check(mu, sigma, delta, quad_order=QUAD_ORDER):
    # 1 - E[(1 + delta R) zeta]; nonnegative when zeta is a supermartingale density.
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")

    def integrand(x):
        wealth = 1.0 + delta * np.expm1(_log_return(mu, sigma, x))
        return wealth * zeta(mu, sigma, x)

    value, _ = gaussian_expectation(integrand, order=quad_order)
    return 1.0 - float(value)


def zeta_hellinger_bound(params, alpha, N):
    """
    @brief      Running product of E zeta_k^alpha against its lower bound
                exp(-alpha (1 - alpha) S1 / 2 - alpha S2), S1 and S2 the
                partial sums at eps = 1.

    @return     (products, bounds), arrays over n = 1..N.
    """
    mu, sigma = params.mu_sigma(N)
    logs = compensated_cumsum(
        np.log([zeta_moment(alpha, m, s) for m, s in zip(mu, sigma)])
    )
    series = SigmaSeries(1.0, mu, sigma)
    bound = -0.5 * alpha * (1 - alpha) * series.sigma1 - alpha * series.sigma2
    return np.exp(logs), np.exp(bound)


def arbitrage_witness(params, eps, alpha, N):
    """
    @brief      E X_n^-alpha of the two explicit arbitrage strategies.

    "large": all in on periods with mu_k > (1 + eps) sigma_k^2 / 2, with the
    bound exp(-alpha (eps - alpha) / (1 + eps) S2_n(eps)) for alpha < eps.
    "small": fraction mu_k / sigma_k^2 on periods with
    0 < mu_k <= (1 + eps) sigma_k^2 / 2 (eps < 1), by quadrature.
    """
    if not 0 < alpha < 1 or eps <= 0:
        raise ValueError("need alpha in (0, 1) and eps > 0")
    mu, sigma = params.mu_sigma(N)
    series = SigmaSeries(eps, mu, sigma)

    large = np.where(
        series.large, -alpha * mu + 0.5 * alpha * (1 + alpha) * sigma ** 2, 0.0
    )
    out = {"large": np.exp(compensated_cumsum(large))}
    if alpha < eps:
        out["large_bound"] = np.exp(-alpha * (eps - alpha) / (1 + eps) * series.sigma2)

    if eps < 1:
        frac = np.where(series.small, mu / sigma ** 2, 0.0)
        terms = np.zeros(N)
        for k in np.flatnonzero(series.small):
            v, _ = gaussian_expectation(
                lambda x: np.exp(-alpha * _log_wealth(frac[k], _log_return(mu[k], sigma[k], x)))
            )
            terms[k] = np.log(v)
        out["small"] = np.exp(compensated_cumsum(terms))
    return out


def _checkpoints(n_max, count=20):
    pts = np.unique(np.geomspace(1, n_max, min(count, n_max)).astype(int))
    return np.union1d(pts, [n_max])


def monte_carlo_growth(
    params,
    n_max,
    n_paths,
    seed,
    checkpoints=None,
    slope_tol=0.02,
    pool=None,
    chunk=256,
):
    """
    @brief      Simulates ln V_n per path and reports its quartiles over n.

    The median trend is "unbounded" when the slope of the median against
    ln n over the second half of the checkpoints exceeds slope_tol and
    "plateau" otherwise. E R_k^2 at k = 1 and k = n_max is compared with
    e^(2 mu + sigma^2) - 2 e^mu + 1.

    @return     Dict report; "laws" holds TerminalLaw samples of V_n at the
                checkpoints.
    """
    if n_max < 1 or n_paths < 1:
        raise ValueError("need n_max >= 1 and n_paths >= 1")
    checkpoints = _checkpoints(n_max) if checkpoints is None else np.asarray(checkpoints)
    mu, sigma = params.mu_sigma(n_max)
    deltas = optimal_fractions(params, n_max, pool)

    def work(first):
        count = min(chunk, n_paths - first)
        xi = streams.normals(seed, streams.LOGNORMAL_PATHS, first, count, (n_max,))
        logs = compensated_cumsum(period_log_returns(deltas, mu, sigma, xi))
        R = np.expm1(_log_return(mu[[0, -1]], sigma[[0, -1]], xi[:, [0, -1]]))
        return logs[:, checkpoints - 1], R

    parts = pmap(pool, work, list(range(0, n_paths, chunk)))
    logs = np.concatenate([p[0] for p in parts])
    R = np.concatenate([p[1] for p in parts])

    quartiles = np.percentile(logs, [25, 50, 75], axis=0)
    median = quartiles[1]

    half = checkpoints >= np.sqrt(n_max) if n_max > 1 else np.ones(1, dtype=bool)
    if half.sum() >= 2:
        slope = float(np.polyfit(np.log(checkpoints[half]), median[half], 1)[0])
    else:
        slope = 0.0
    trend = "unbounded" if slope > slope_tol else "plateau"

    growth = np.atleast_1d(expected_log_growth(deltas, mu, sigma))
    expected = compensated_cumsum(growth)[checkpoints - 1]

    sanity = []
    for col, k in enumerate((0, n_max - 1)):
        exact = np.exp(2 * mu[k] + sigma[k] ** 2) - 2 * np.exp(mu[k]) + 1
        sq = R[:, col] ** 2
        se = sq.std(ddof=1) / np.sqrt(sq.size) if sq.size > 1 else 0.0
        sanity.append(
            {"k": k + 1, "exact": float(exact), "sample": float(sq.mean()), "se": float(se)}
        )

    log.info("Monte Carlo growth to n = %d: median trend %s (slope %.4g)", n_max, trend, slope)
    return {
        "n": checkpoints.tolist(),
        "q25": quartiles[0].tolist(),
        "median": median.tolist(),
        "q75": quartiles[2].tolist(),
        "expected_log": expected.tolist(),
        "slope": slope,
        "trend": trend,
        "second_moment": sanity,
        "laws": [
            TerminalLaw(np.exp(logs[:, j]), n=int(n)) for j, n in enumerate(checkpoints)
        ],
    }
