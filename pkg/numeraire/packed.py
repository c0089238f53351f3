# Provides functions for reading and writing packed json documents

import math

import numpy as np
import ujson

from .classes import MarketError
from .core_model import EventTree, FiniteMarket, Node, validate_market


def read(file):
    """Reads json to dict and returns dict."""
    try:
        with open(file, "r") as fp:
            d = ujson.load(fp)
            if not isinstance(d, dict):
                raise ValueError("top level is not an object")
    except OSError:
        raise
    except Exception as e:
        raise TypeError("{} is corrupt ({}). Check it is a json object.".format(file, e))
    return d


def write(file, d, indent=2):
    """Writes dict to json"""
    with open(file, "w") as fp:
        ujson.dump(plain(d), fp, sort_keys=True, indent=indent, double_precision=15)


def plain(obj):
    # Converts numpy values to json-able ones; non-finite floats become None.
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def pack_market(m):
    # Converts market, into packed dict.
    return {
        "T": m.T,
        "d": m.d,
        "nodes": [m.tree.nodes[nid].dump() for nid in m.tree.order],
    }


def unpack_market(doc, file=None):
    # Converts packed dict, doc, into a validated market.
    missing = [k for k in ("T", "d", "nodes") if k not in doc]
    if missing:
        raise MarketError(["missing key '{}'".format(k) for k in missing], file)
    if not isinstance(doc["nodes"], list) or not doc["nodes"]:
        raise MarketError(["nodes must be a nonempty list"], file)

    nodes = []
    for c, rec in enumerate(doc["nodes"]):
        try:
            nodes.append(
                Node(rec["id"], rec["t"], rec["parent"], rec["prob"], rec["prices"])
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MarketError(["node record {}: {}".format(c, e)], file)

    m = FiniteMarket(EventTree(nodes, T=doc["T"]))

    violations = list(validate_market(m))
    if m.d != doc["d"]:
        violations.append("declared d = {} but prices have {}".format(doc["d"], m.d))
    if violations:
        raise MarketError(violations, file)
    return m


def read_market(file):
    return unpack_market(read(file), file)


def write_market(file, m):
    write(file, pack_market(m))


def pack_solution(sol):
    # Solution document of the log-optimal problem.
    return plain(
        {
            "log_value": sol.log_value,
            "dual_value": sol.dual_value,
            "gap": sol.gap,
            "qhat": sol.Qhat.weights,
            "V_T": sol.V_T,
            "strategy": sol.strategy.holdings[sol.market.internal],
        }
    )
