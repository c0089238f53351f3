# Finite event-tree markets, measures, strategies and value processes

import logging
from collections import deque

import numpy as np

from .classes import STRUCT_TOL, MarketError

log = logging.getLogger(__name__)


class Node:
    def __init__(self, nid, t, parent, prob, prices):
        self.nid = nid
        self.t = int(t)
        self.parent = parent
        self.prob = float(prob)
        self.prices = np.asarray(prices, dtype=float).ravel()
        self.children = []

    def dump(self):
        return {
            "id": self.nid,
            "t": self.t,
            "parent": self.parent,
            "prob": self.prob,
            "prices": self.prices.tolist(),
        }


class EventTree:
    """
    @brief      Nodes linked by parent ids, with probabilities on edges.

    Construction is tolerant so that broken documents can still be
    validated; everything downstream goes through validate_market first.

    @param      nodes  Iterable of Node
    @param      T      Declared horizon (default: the largest node time)
    """

    def __init__(self, nodes, T=None):
        nodes = list(nodes)
        self.nodes = {}
        self.duplicates = []
        for n in nodes:
            if n.nid in self.nodes:
                self.duplicates.append(n.nid)
            self.nodes[n.nid] = n
            n.children = []

        self.orphans = []
        for n in self.nodes.values():
            if n.parent is None:
                continue
            if n.parent in self.nodes:
                self.nodes[n.parent].children.append(n.nid)
            else:
                self.orphans.append(n.nid)

        self.roots = [n.nid for n in self.nodes.values() if n.parent is None]
        self.T = max((n.t for n in nodes), default=0) if T is None else int(T)

        # Breadth first from every root, so each parent precedes its children.
        self.order = []
        seen = set()
        queue = deque(self.roots)
        while queue:
            nid = queue.popleft()
            if nid in seen:
                continue
            seen.add(nid)
            self.order.append(nid)
            queue.extend(self.nodes[nid].children)

        self.unreachable = [nid for nid in self.nodes if nid not in seen]
        self.index = {nid: i for i, nid in enumerate(self.order)}
        self.leaves = [nid for nid in self.order if not self.nodes[nid].children]
        self.internal = [nid for nid in self.order if self.nodes[nid].children]

    @property
    def root(self):
        return self.order[0]

    def __len__(self):
        return len(self.order)


class FiniteMarket:
    """
    @brief      Event tree with per-node discounted prices of d stocks.

    Per-node arrays are laid out in the tree's breadth-first order, so
    index 0 is the root and parents come before children.
    """

    def __init__(self, tree):
        self.tree = tree
        self.T = tree.T
        nodes = [tree.nodes[nid] for nid in tree.order]

        self.d = len(nodes[0].prices) if nodes else 0
        self.parent = np.array(
            [
                -1 if n.parent is None or n.parent not in tree.index
                else tree.index[n.parent]
                for n in nodes
            ],
            dtype=int,
        )
        self.branch_prob = np.array([n.prob for n in nodes])
        self.children = [
            [tree.index[c] for c in n.children] for n in nodes
        ]
        self.internal = np.array(
            [tree.index[nid] for nid in tree.internal], dtype=int
        )
        self.leaf = np.array([tree.index[nid] for nid in tree.leaves], dtype=int)

        if all(len(n.prices) == self.d for n in nodes):
            self.S = np.array([n.prices for n in nodes]).reshape(len(nodes), self.d)
        else:
            self.S = None

        # Node probabilities: product of branch probabilities from the root.
        mass = np.ones(len(nodes))
        for i in range(1, len(nodes)):
            p = self.parent[i]
            mass[i] = self.branch_prob[i] * (mass[p] if p >= 0 else 1.0)
        self.node_prob = mass
        self.P = mass[self.leaf]

    @property
    def n_nodes(self):
        return len(self.parent)

    @property
    def leaf_ids(self):
        return list(self.tree.leaves)

    def increments(self, i):
        # Price increments S_child - S_node, one row per child of node i.
        return self.S[self.children[i]] - self.S[i]

    def leaf_values(self, per_node):
        return np.asarray(per_node, dtype=float)[self.leaf]


class ValidationReport:
    def __init__(self, violations=None):
        self.violations = list(violations or [])

    @property
    def ok(self):
        return len(self.violations) == 0

    def __bool__(self):
        return self.ok

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)

    def dump(self):
        return {"ok": self.ok, "violations": list(self.violations)}


def validate_market(m):
    """
    @brief      Lists every broken EventTree / FiniteMarket invariant.

    @param      m     The FiniteMarket

    @return     ValidationReport, empty iff the market is well formed.
    """
    tree = m.tree
    bad = []

    if len(tree.roots) != 1:
        bad.append("expected exactly one root, found {}".format(len(tree.roots)))
    for nid in tree.duplicates:
        bad.append("node {}: duplicate id".format(nid))
    for nid in tree.orphans:
        bad.append(
            "node {}: unknown parent {}".format(nid, tree.nodes[nid].parent)
        )
    for nid in tree.unreachable:
        if nid not in tree.orphans:
            bad.append("node {}: unreachable from root".format(nid))

    for nid in tree.roots:
        root = tree.nodes[nid]
        if root.t != 0:
            bad.append("root {}: time {} ≠ 0".format(nid, root.t))
        if abs(root.prob - 1.0) > STRUCT_TOL:
            bad.append("root {}: prob {:g} ≠ 1".format(nid, root.prob))

    for nid in tree.order:
        n = tree.nodes[nid]
        if len(n.prices) != m.d:
            bad.append(
                "node {}: price dimension {} ≠ d = {}".format(
                    nid, len(n.prices), m.d
                )
            )
        elif not np.all(np.isfinite(n.prices)) or np.any(n.prices <= 0):
            bad.append("node {}: prices must be finite and > 0".format(nid))

        if n.parent is not None and n.parent in tree.nodes:
            parent = tree.nodes[n.parent]
            if n.t != parent.t + 1:
                bad.append(
                    "node {}: time {} is not parent time {} + 1".format(
                        nid, n.t, parent.t
                    )
                )
            if not 0 < n.prob <= 1:
                bad.append(
                    "node {}: branch probability {:g} outside (0, 1]".format(
                        nid, n.prob
                    )
                )

        if n.children:
            total = sum(tree.nodes[c].prob for c in n.children)
            if abs(total - 1.0) > STRUCT_TOL:
                bad.append("node {}: branch sum {:g} ≠ 1".format(nid, total))
        elif n.t != tree.T:
            bad.append(
                "leaf {} at depth {}: non-uniform depth (T = {})".format(
                    nid, n.t, tree.T
                )
            )

    if len(m.P):
        if abs(m.P.sum() - 1.0) > STRUCT_TOL:
            bad.append("leaf probabilities sum to {:.15g} ≠ 1".format(m.P.sum()))
        if np.any(m.P <= 0):
            bad.append("leaf probabilities must be > 0")
    else:
        bad.append("market has no nodes")

    for v in bad:
        log.debug("Market violation: %s", v)

    return ValidationReport(bad)


def require_valid(m):
    report = validate_market(m)
    if not report.ok:
        raise MarketError(report.violations)
    return m


class Strategy:
    # Units of each stock held over the next period, one row per node.
    def __init__(self, holdings):
        self.holdings = np.atleast_2d(np.asarray(holdings, dtype=float))

    @classmethod
    def zeros(cls, m):
        return cls(np.zeros((m.n_nodes, m.d)))

    def scaled(self, c):
        return Strategy(c * self.holdings)

    def dump(self):
        return self.holdings.tolist()


class ValueProcess:
    def __init__(self, x0, values, admissible):
        self.x0 = float(x0)
        self.values = np.asarray(values, dtype=float)
        self.admissible = bool(admissible)

    def terminal(self, m):
        return m.leaf_values(self.values)


class SubProbabilityMeasure:
    """
    @brief      Nonnegative weights on the leaves with total mass <= 1.

    @param      weights  Per-leaf weights in the market's leaf order
    @param      tol      Allowed excess of the total mass over 1
    """

    def __init__(self, weights, tol=STRUCT_TOL):
        w = np.asarray(weights, dtype=float).ravel()
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("sub-probability weights must be finite and >= 0")
        if w.sum() > 1 + tol:
            raise ValueError(
                "sub-probability mass {:.15g} exceeds 1".format(w.sum())
            )
        self.weights = w

    @property
    def mass(self):
        return float(self.weights.sum())

    def is_probability(self, tol=STRUCT_TOL):
        return abs(self.mass - 1.0) <= tol

    def __len__(self):
        return len(self.weights)


class DensityProcess:
    # Strictly positive per-node process with value 1 at the root.
    def __init__(self, values):
        z = np.asarray(values, dtype=float)
        if np.any(~(z > 0)):
            raise ValueError("density process must be > 0 at every node")
        if z[0] != 1.0:
            raise ValueError("density process must equal 1 at the root")
        self.values = z

    @classmethod
    def from_numeraire(cls, V):
        return cls(1.0 / V.values)

    def terminal(self, m):
        return m.leaf_values(self.values)


def evaluate_value_process(m, s, x0):
    """
    @brief      Runs the self-financing recursion down the tree.

    @param      m     The FiniteMarket
    @param      s     The Strategy (one holdings row per node)
    @param      x0    Initial wealth, >= 0

    @return     ValueProcess, flagged admissible when X >= 0 everywhere.
    """
    if x0 < 0:
        raise ValueError("initial wealth must be >= 0")
    if s.holdings.shape != (m.n_nodes, m.d):
        raise ValueError(
            "strategy shape {} does not match market ({}, {})".format(
                s.holdings.shape, m.n_nodes, m.d
            )
        )

    X = np.empty(m.n_nodes)
    X[0] = x0
    for i in range(1, m.n_nodes):
        p = m.parent[i]
        X[i] = X[p] + s.holdings[p] @ (m.S[i] - m.S[p])

    return ValueProcess(x0, X, np.all(X >= -STRUCT_TOL))


def _weights(m, q):
    if q is None:
        return m.P
    if isinstance(q, SubProbabilityMeasure):
        return q.weights
    return np.asarray(q, dtype=float)


def expectation(m, f, q=None):
    """
    @brief      Exact sum of f times the leaf weights of q (default P).

    @param      f     Per-leaf values, or a callable on the leaf node id
    """
    w = _weights(m, q)
    if callable(f):
        f = [f(nid) for nid in m.leaf_ids]
    f = np.asarray(f, dtype=float)
    if f.shape != w.shape:
        raise ValueError("f has {} values for {} leaves".format(f.size, w.size))

    live = w > 0
    return float(np.dot(f[live], w[live]))


def node_masses(m, weights):
    # Subtree mass of every node for leaf weights `weights`.
    mass = np.zeros(m.n_nodes)
    mass[m.leaf] = weights
    for i in range(m.n_nodes - 1, 0, -1):
        mass[m.parent[i]] += mass[i]
    return mass


def conditional_probs(m, q=None):
    # Branch probabilities of every node, under P or induced by q.
    if q is None:
        return m.branch_prob
    mass = node_masses(m, _weights(m, q))
    cond = np.zeros(m.n_nodes)
    for i in range(1, m.n_nodes):
        p = m.parent[i]
        if mass[p] > 0:
            cond[i] = mass[i] / mass[p]
    return cond


def is_supermartingale(m, proc, tol=0.0, q=None):
    """
    @brief      Checks E[value at children | node] <= value at node + tol.

    @param      proc  Per-node values (array or ValueProcess / DensityProcess)
    @param      tol   Allowed violation
    @param      q     Optional measure on the leaves (default P)

    @return     (ok, worst node id, worst slack) where slack is the node
                value minus the conditional mean.
    """
    values = np.asarray(getattr(proc, "values", proc), dtype=float)
    cond = conditional_probs(m, q)
    mass = None if q is None else node_masses(m, _weights(m, q))

    worst_node, worst = None, np.inf
    for i in m.internal:
        if mass is not None and mass[i] <= 0:
            continue
        kids = m.children[i]
        slack = values[i] - np.dot(cond[kids], values[kids])
        if slack < worst:
            worst_node, worst = m.tree.order[i], slack

    if worst_node is None:
        return True, None, 0.0
    return bool(worst >= -tol), worst_node, float(worst)


def density_to_measure(m, xi, tol=STRUCT_TOL):
    # The measure xi * P; rejects densities with E xi > 1 beyond tol.
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0):
        raise ValueError("density values must be >= 0")
    return SubProbabilityMeasure(xi * m.P, tol=tol)


def buy_and_hold(m, asset):
    # Value process of one unit of stock `asset` held throughout.
    return m.S[:, asset].copy()


def iid_market(factors, probs, periods, s0=1.0):
    """
    @brief      Recombination-free tree with i.i.d. multiplicative moves.

    @param      factors  Shape (k,) or (k, d): price factor of each branch
    @param      probs    Shape (k,): branch probabilities
    @param      periods  Number of periods T
    @param      s0       Initial price(s)

    @return     FiniteMarket with k^T leaves.
    """
    factors = np.asarray(factors, dtype=float)
    if factors.ndim == 1:
        factors = factors[:, None]
    probs = np.asarray(probs, dtype=float)
    if len(probs) != len(factors):
        raise ValueError("one probability per branch factor is required")

    s0 = np.broadcast_to(np.asarray(s0, dtype=float), factors.shape[1:]).copy()
    nodes = [Node(0, 0, None, 1.0, s0)]
    frontier = [nodes[0]]
    for t in range(1, periods + 1):
        nxt = []
        for parent in frontier:
            for f, p in zip(factors, probs):
                child = Node(len(nodes), t, parent.nid, p, parent.prices * f)
                nodes.append(child)
                nxt.append(child)
        frontier = nxt

    return FiniteMarket(EventTree(nodes, T=periods))


def binomial_market(u, d, p, periods=1, s0=1.0):
    return iid_market([u, d], [p, 1 - p], periods, s0)


def random_admissible_strategy(m, rng, x0=1.0):
    """
    @brief      Draws holdings keeping wealth >= 0 at every node.

    At each node a random direction is scaled by a uniform fraction of the
    largest step that keeps every child wealth nonnegative.
    """
    H = np.zeros((m.n_nodes, m.d))
    X = np.empty(m.n_nodes)
    X[0] = x0
    for i in range(m.n_nodes):
        if i > 0:
            p = m.parent[i]
            X[i] = max(X[p] + H[p] @ (m.S[i] - m.S[p]), 0.0)
        if not m.children[i] or X[i] <= 0:
            continue

        g = rng.standard_normal(m.d)
        moves = m.increments(i) @ g
        losing = moves < 0
        if np.any(losing):
            s_max = np.min(X[i] / -moves[losing])
        else:
            s_max = X[i] / max(np.abs(moves).max(), STRUCT_TOL)
        H[i] = rng.uniform() * s_max * g

    return Strategy(H)
