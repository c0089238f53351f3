# Log-optimal (numeraire) portfolios of finite markets and their entropy dual

import itertools
import logging

import numpy as np
from scipy.special import rel_entr

from .classes import (
    LAW_TOL,
    ArbitrageError,
    ConvergenceError,
    NotEquivalentError,
    pmap,
)
from .core_model import (
    DensityProcess,
    Strategy,
    SubProbabilityMeasure,
    ValueProcess,
    expectation,
    is_supermartingale,
    random_admissible_strategy,
    evaluate_value_process,
    require_valid,
)
from . import streams

log = logging.getLogger(__name__)

WEALTH_FLOOR = 1e-10  # smallest 1 + (h, dS) a Newton iterate may reach
PINV_RCOND = 1e-10
POSITIVE_TOL = 1e-14  # vertex averages at or below this are on the boundary


class NumeraireSolution:
    """
    @brief      Log-optimal strategy, its value process V and Qhat = P / V_T.

    @param      fractions  Holdings per unit of wealth, one row per node
    """

    def __init__(self, market, strategy, V, fractions, iterations):
        self.market = market
        self.strategy = strategy
        self.V = V
        self.fractions = fractions
        self.iterations = iterations

        V_T = V.terminal(market)
        self.log_value = float(np.dot(market.P, np.log(V_T)))
        self.Qhat = SubProbabilityMeasure(market.P / V_T, tol=LAW_TOL)
        self.dual_value = reverse_entropy(market.P, self.Qhat)
        self.gap = abs(self.log_value - self.dual_value)

    @property
    def V_T(self):
        return self.V.terminal(self.market)

    @property
    def Z(self):
        return DensityProcess.from_numeraire(self.V)


def _node_vertices(R, tol=1e-12):
    # Vertices of {q >= 0, sum q = 1, R^T q = 0} for one node's increments R.
    k, d = R.shape
    A = np.vstack([np.ones(k), R.T])
    b = np.zeros(d + 1)
    b[0] = 1.0
    scale = max(1.0, np.abs(R).max())

    found = []
    for size in range(1, min(k, d + 1) + 1):
        for support in itertools.combinations(range(k), size):
            cols = A[:, support]
            if np.linalg.matrix_rank(cols) < size:
                continue
            x, *_ = np.linalg.lstsq(cols, b, rcond=None)
            if np.linalg.norm(cols @ x - b) > tol * scale or np.any(x < -tol):
                continue
            q = np.zeros(k)
            q[list(support)] = np.clip(x, 0, None)
            q /= q.sum()
            if not any(np.allclose(q, v, atol=1e-12) for v in found):
                found.append(q)

    return np.array(found).reshape(len(found), k)


def _leaf_measure(m, cond):
    # Leaf weights of the measure with per-node branch probabilities cond.
    mass = np.ones(m.n_nodes)
    for i in range(1, m.n_nodes):
        mass[i] = mass[m.parent[i]] * cond[i]
    return mass[m.leaf]


def martingale_vertices(m):
    # Per internal node, the vertices of its local martingale polytope.
    return {i: _node_vertices(m.increments(i)) for i in m.internal}


def find_martingale_measure(m, vertices=None):
    """
    @brief      Strictly positive martingale measure, or None.

    Each node's conditional law is the average of the vertices of its
    local martingale polytope, which is strictly positive exactly when
    the polytope meets the open simplex.

    @return     SubProbabilityMeasure on the leaves, or None if the small
                market admits arbitrage.
    """
    vertices = martingale_vertices(m) if vertices is None else vertices
    cond = np.ones(m.n_nodes)
    for i in m.internal:
        verts = vertices[i]
        if len(verts) == 0:
            log.info("Node %s has no martingale law", m.tree.order[i])
            return None
        q = verts.mean(axis=0)
        if np.any(q <= POSITIVE_TOL):
            log.info("Node %s has no strictly positive martingale law", m.tree.order[i])
            return None
        cond[m.children[i]] = q

    return SubProbabilityMeasure(_leaf_measure(m, cond), tol=LAW_TOL)


def _log_growth(p, R, h):
    return float(np.dot(p, np.log1p(R @ h)))


def _solve_node(p, R, tol, max_iter):
    # Damped Newton for max sum p ln(1 + R h), started at h = 0.
    h = np.zeros(R.shape[1])
    for it in range(max_iter + 1):
        w = 1.0 + R @ h
        g = R.T @ (p / w)
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return h, it

        Hn = R.T @ ((p / w ** 2)[:, None] * R)
        step = np.linalg.pinv(Hn, rcond=PINV_RCOND) @ g
        decrement = float(g @ step)
        if decrement <= 1e-30:
            return h, it

        # Shrink until feasible, then until Armijo holds.
        t = 1.0
        while np.min(1.0 + R @ (h + t * step)) < WEALTH_FLOOR and t > 1e-20:
            t *= 0.5
        if decrement > 1e-14:
            f0 = _log_growth(p, R, h)
            while _log_growth(p, R, h + t * step) < f0 + 0.25 * t * decrement:
                t *= 0.5
                if t < 1e-20:
                    break
        h = h + t * step

    raise ConvergenceError(
        "Newton did not converge in {} iterations".format(max_iter),
        {"gradient_norm": float(gnorm), "holdings_norm": float(np.linalg.norm(h))},
    )


def solve_log_optimal(m, tol=1e-12, max_iter=100, pool=None):
    """
    @brief      Maximises E ln X_T over admissible X with X_0 = 1.

    Terminal log wealth is a sum of one-period log returns, so each internal
    node is solved on its own for the holdings per unit of wealth.

    @param      m         The FiniteMarket
    @param      tol       First-order norm accepted at every node
    @param      max_iter  Newton iterations per node
    @param      pool      Optional Pool for the node problems

    @return     NumeraireSolution.
    """
    require_valid(m)
    if find_martingale_measure(m) is None:
        raise ArbitrageError("small market admits arbitrage")

    def node(i):
        kids = m.children[i]
        try:
            return _solve_node(m.branch_prob[kids], m.increments(i), tol, max_iter)
        except ConvergenceError as e:
            e.diagnostics["node"] = m.tree.order[i]
            raise

    results = pmap(pool, node, list(m.internal))

    fractions = np.zeros((m.n_nodes, m.d))
    iterations = 0
    for i, (h, it) in zip(m.internal, results):
        fractions[i] = h
        iterations = max(iterations, it)
        log.debug("Node %s solved in %d Newton steps", m.tree.order[i], it)

    V = np.ones(m.n_nodes)
    for i in range(1, m.n_nodes):
        p = m.parent[i]
        V[i] = V[p] * (1.0 + fractions[p] @ (m.S[i] - m.S[p]))
    holdings = V[:, None] * fractions

    sol = NumeraireSolution(
        m, Strategy(holdings), ValueProcess(1.0, V, True), fractions, iterations
    )
    log.info(
        "Solved market with %d nodes: log value %.12g, gap %.3e",
        m.n_nodes,
        sol.log_value,
        sol.gap,
    )
    return sol


def reverse_entropy(p, q):
    """
    @brief      H(p|q) = sum p ln(p / q).

    Raises NotEquivalentError when q vanishes on an atom charged by p.
    """
    p = np.asarray(getattr(p, "weights", p), dtype=float)
    q = np.asarray(getattr(q, "weights", q), dtype=float)
    if p.shape != q.shape:
        raise ValueError("measures live on different atoms")
    if np.any((p > 0) & (q <= 0)):
        raise NotEquivalentError("not equivalent: q vanishes where p charges")
    return float(rel_entr(p, q).sum())


class DualityReport:
    def __init__(self):
        self.checks = {}
        self.violations = []

    def add(self, name, value, ok, detail=None):
        self.checks[name] = {"value": value, "ok": bool(ok)}
        if detail is not None:
            self.checks[name]["detail"] = detail
        if not ok:
            self.violations.append("{}: {}".format(name, value))

    @property
    def passed(self):
        return not self.violations

    def dump(self):
        return {
            "passed": self.passed,
            "checks": self.checks,
            "violations": self.violations,
        }


def verify_duality(m, sol, k=100, seed=0, tol=1e-9):
    """
    @brief      Checks Qhat against sampled martingale measures and V against
                sampled admissible strategies.

    @param      m     The FiniteMarket
    @param      sol   NumeraireSolution of m
    @param      k     Number of sampled measures and of sampled strategies
    @param      seed  Run seed

    @return     DualityReport with the worst value of every check.
    """
    report = DualityReport()

    # Qhat is a martingale measure for every stock.
    worst = np.inf
    for j in range(m.d):
        S = m.S[:, j]
        for sign in (1.0, -1.0):
            _, _, slack = is_supermartingale(m, sign * S, tol, q=sol.Qhat)
            worst = min(worst, slack)
    report.add("qhat_martingale", worst, worst >= -tol)
    report.add("qhat_mass", sol.Qhat.mass, abs(sol.Qhat.mass - 1) <= tol)

    # Qhat has minimal reverse entropy among sampled martingale measures.
    vertices = martingale_vertices(m)
    rng = streams.generator(seed, streams.TREE_DUALITY, 0)
    h_hat = sol.dual_value
    worst = np.inf
    for _ in range(k):
        cond = np.ones(m.n_nodes)
        for i in m.internal:
            verts = vertices[i]
            cond[m.children[i]] = rng.dirichlet(np.ones(len(verts))) @ verts
        q = _leaf_measure(m, cond)
        if np.any(q <= 0):
            continue
        worst = min(worst, reverse_entropy(m.P, q) - h_hat)
    report.add("entropy_dominance", worst, worst >= -tol)

    # V is a numeraire: X / V supermartingale, E X/V <= 1, E ln X/V <= 0.
    rng = streams.generator(seed, streams.TREE_DUALITY, 1)
    V = sol.V.values
    V_T = sol.V_T
    worst_slack, worst_ratio, worst_log = np.inf, -np.inf, -np.inf
    for _ in range(k):
        X = evaluate_value_process(m, random_admissible_strategy(m, rng), 1.0)
        _, _, slack = is_supermartingale(m, X.values / V, tol)
        worst_slack = min(worst_slack, slack)

        ratio = X.terminal(m) / V_T
        worst_ratio = max(worst_ratio, expectation(m, ratio))
        with np.errstate(divide="ignore"):
            worst_log = max(worst_log, expectation(m, np.log(np.maximum(ratio, 0))))

    report.add("ratio_supermartingale", worst_slack, worst_slack >= -tol)
    report.add("numeraire_property", worst_ratio, worst_ratio <= 1 + tol)
    report.add("relative_log_optimality", worst_log, worst_log <= tol)

    if report.passed:
        log.info("Duality checks passed on %d samples", k)
    else:
        log.warning("Duality checks failed: %s", "; ".join(report.violations))
    return report
