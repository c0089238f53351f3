import numpy as np
import pytest

from numeraire.core_model import EventTree, FiniteMarket, Node, binomial_market


def build_random_market(rng, periods=1, branches=3):
    """
    One stock; every node has an up move and a down move, so a strictly
    positive martingale measure always exists.
    """
    nodes = [Node(0, 0, None, 1.0, [1.0])]
    frontier = [nodes[0]]
    for t in range(1, periods + 1):
        nxt = []
        for parent in frontier:
            probs = rng.dirichlet(np.full(branches, 2.0))
            factors = rng.uniform(0.75, 1.35, branches)
            factors[0] = rng.uniform(1.05, 1.35)
            factors[1] = rng.uniform(0.75, 0.95)
            for p, f in zip(probs, factors):
                child = Node(len(nodes), t, parent.nid, p, parent.prices * f)
                nodes.append(child)
                nxt.append(child)
        frontier = nxt
    return FiniteMarket(EventTree(nodes))


@pytest.fixture
def binomial():
    # u = 1.2, d = 0.9, p = 0.6, one period.
    return binomial_market(1.2, 0.9, 0.6)


@pytest.fixture
def trinomial():
    nodes = [
        Node("r", 0, None, 1.0, [1.0]),
        Node("u", 1, "r", 0.3, [1.3]),
        Node("m", 1, "r", 0.4, [1.0]),
        Node("d", 1, "r", 0.3, [0.8]),
    ]
    return FiniteMarket(EventTree(nodes))


@pytest.fixture
def arbitrage():
    # Both moves go up.
    return binomial_market(1.2, 1.05, 0.5)


@pytest.fixture
def random_market():
    return build_random_market
