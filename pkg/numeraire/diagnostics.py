# Tail, Hellinger and Neyman-Pearson curves over sequences of terminal laws

import logging

import numpy as np
import pandas as pd

from .classes import (
    NAA,
    SAA,
    INCONCLUSIVE,
    LAW_TOL,
    FINITE_N_NOTE,
    Policy,
)

log = logging.getLogger(__name__)

DEFAULT_M_GRID = np.logspace(0, 4, 9)
DEFAULT_ALPHA_GRID = np.array([0.5, 0.25, 0.1, 0.05, 0.01])
DEFAULT_DELTA_GRID = np.array([0.01, 0.05, 0.1, 0.25, 0.5])

SLACK_TOL = 1e-9


class TerminalLaw:
    """
    @brief      Law of a positive terminal value under P: exact atoms or a
                Monte Carlo sample with uniform weights.

    @param      values  Atom values or sample points
    @param      probs   Atom probabilities; None for a sample
    @param      n       Index of the law in its sequence
    """

    def __init__(self, values, probs=None, n=None, positive=True):
        self.values = np.asarray(values, dtype=float).ravel()
        if self.values.size == 0:
            raise ValueError("empty law")
        if positive and np.any(~(self.values > 0)):
            raise ValueError("law values must be > 0")

        self.is_sample = probs is None
        if self.is_sample:
            self.probs = np.full(self.values.size, 1.0 / self.values.size)
        else:
            self.probs = np.asarray(probs, dtype=float).ravel()
            if self.probs.shape != self.values.shape:
                raise ValueError("one probability per atom is required")
            if np.any(self.probs < 0) or abs(self.probs.sum() - 1) > LAW_TOL:
                raise ValueError("atom probabilities must sum to 1")
        self.n = n

    @classmethod
    def from_solution(cls, sol, n=None):
        return cls(sol.V_T, sol.market.P, n=n)

    def __len__(self):
        return self.values.size

    def mean(self, f):
        # E f(value) with a standard error for samples (0 for atoms).
        fv = f(self.values)
        est = float(np.dot(self.probs, fv))
        if not self.is_sample or self.values.size < 2:
            return est, 0.0
        return est, float(np.std(fv, ddof=1) / np.sqrt(self.values.size))

    def prob(self, mask):
        p = float(np.dot(self.probs, mask))
        if not self.is_sample:
            return p, 0.0
        return p, float(np.sqrt(p * (1 - p) / self.values.size))


class Curve:
    # Matrix of values over (sequence index, grid point), with standard errors.
    def __init__(self, n, grid, values, se=None):
        self.n = list(n)
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float).reshape(len(self.n), self.grid.size)
        self.se = None if se is None else np.asarray(se, dtype=float).reshape(self.values.shape)

    def column(self, j):
        return self.values[:, j]

    def frame(self, grid_name, value_name):
        rows = []
        for i, n in enumerate(self.n):
            for j, x in enumerate(self.grid):
                se = 0.0 if self.se is None else self.se[i, j]
                rows.append((n, x, self.values[i, j], se))
        return pd.DataFrame(rows, columns=["n", grid_name, value_name, "se"])


def _index(laws):
    return [law.n if law.n is not None else c + 1 for c, law in enumerate(laws)]


def tail_curve(laws, M_grid):
    """
    @brief      P^n(V >= M) for every law and every M.

    @param      laws    List of TerminalLaw
    @param      M_grid  Strictly increasing positive levels

    @return     Curve; standard errors are binomial for sampled laws.
    """
    M_grid = np.asarray(M_grid, dtype=float)
    if M_grid.size == 0 or np.any(M_grid <= 0) or np.any(np.diff(M_grid) <= 0):
        raise ValueError("M_grid must be nonempty, positive and strictly increasing")

    values = np.zeros((len(laws), M_grid.size))
    se = np.zeros_like(values)
    for i, law in enumerate(laws):
        for j, M in enumerate(M_grid):
            values[i, j], se[i, j] = law.prob(law.values >= M)
    return Curve(_index(laws), M_grid, values, se)


def hellinger_curve(laws, alpha_grid):
    """
    @brief      E (V^n)^(-alpha) for every law and every alpha in (0, 1).
    """
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if alpha_grid.size == 0 or np.any((alpha_grid <= 0) | (alpha_grid >= 1)):
        raise ValueError("alpha_grid must be nonempty and inside (0, 1)")

    values = np.zeros((len(laws), alpha_grid.size))
    se = np.zeros_like(values)
    for i, law in enumerate(laws):
        for j, a in enumerate(alpha_grid):
            values[i, j], se[i, j] = law.mean(lambda v: v ** -a)
    return Curve(_index(laws), alpha_grid, values, se)


def np_profile(p, q, delta_grid):
    """
    @brief      Maximal power max{P(A) : Q(A) <= delta} over randomized tests.

    Atoms are taken in decreasing likelihood ratio p / q, atoms with q = 0
    first and for free; the boundary atom is split fractionally.

    @param      p           Probability weights
    @param      q           Sub-probability weights on the same atoms
    @param      delta_grid  Budgets delta >= 0

    @return     Array of powers, one per budget.
    """
    p = np.asarray(getattr(p, "weights", p), dtype=float)
    q = np.asarray(getattr(q, "weights", q), dtype=float)
    delta_grid = np.asarray(delta_grid, dtype=float)
    if p.shape != q.shape:
        raise ValueError("measures live on different atoms")
    if np.any(delta_grid < 0):
        raise ValueError("budgets must be >= 0")

    free = (q <= 0) & (p > 0)
    base = p[free].sum()

    live = q > 0
    lr = p[live] / q[live]
    order = np.argsort(-lr, kind="stable")
    cost = np.concatenate([[0.0], np.cumsum(q[live][order])])
    power = base + np.concatenate([[0.0], np.cumsum(p[live][order])])

    return np.minimum(np.interp(delta_grid, cost, power), 1.0)


class InequalityCheck:
    # Slacks (right-hand side minus left-hand side) of the tail inequalities.
    def __init__(self, alpha, M, N):
        self.alpha, self.M, self.N = alpha, M, N
        self.slacks = {}
        self.notes = []

    @property
    def ok(self):
        return all(s >= -SLACK_TOL for s in self.slacks.values())

    def dump(self):
        return {
            "alpha": self.alpha,
            "M": self.M,
            "N": self.N,
            "slacks": dict(self.slacks),
            "notes": list(self.notes),
        }


def tail_inequality_check(xi, alpha, M, N, eta=None):
    """
    @brief      Evaluates the three tail inequalities for a positive xi:

                P(xi < M)  <= M^a E xi^-a
                E xi^-a    <= M^-a + N^-(1-a) + N^a P(xi < M)   if E 1/xi <= 1
                P(xi >= M) <= N / M + P(eta >= N)              if E xi/eta <= 1

    @param      xi     TerminalLaw of xi
    @param      eta    Values of eta on the atoms of xi, or None

    @return     InequalityCheck; inapplicable inequalities are skipped with
                a note.
    """
    if not 0 < alpha < 1 or M <= 0 or N <= 0:
        raise ValueError("need alpha in (0, 1) and M, N > 0")

    check = InequalityCheck(alpha, M, N)
    v, w = xi.values, xi.probs
    below = float(np.dot(w, v < M))
    moment = float(np.dot(w, v ** -alpha))

    check.slacks["moment_bound"] = M ** alpha * moment - below

    inverse = float(np.dot(w, 1.0 / v))
    if inverse <= 1 + SLACK_TOL:
        rhs = M ** -alpha + N ** -(1 - alpha) + N ** alpha * below
        check.slacks["reverse_moment_bound"] = rhs - moment
    else:
        check.notes.append(
            "reverse_moment_bound skipped: E 1/xi = {:.6g} > 1".format(inverse)
        )

    if eta is None:
        check.notes.append("ratio_bound skipped: no eta given")
    else:
        eta = np.asarray(eta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.dot(w, np.where(v > 0, v / eta, 0.0)))
        if ratio <= 1 + SLACK_TOL:
            rhs = N / M + float(np.dot(w, eta >= N))
            check.slacks["ratio_bound"] = rhs - float(np.dot(w, v >= M))
        else:
            check.notes.append(
                "ratio_bound skipped: E xi/eta = {:.6g} > 1".format(ratio)
            )

    for note in check.notes:
        log.debug(note)
    return check


class SequenceDiagnostics:
    def __init__(self, tail, hellinger=None, profile=None, policy=None):
        self.tail = tail
        self.hellinger = hellinger
        self.profile = profile
        self.policy = policy or Policy()
        self.verdict = None

    @property
    def n(self):
        return self.tail.n

    def dump(self):
        out = {
            "n": self.n,
            "M_grid": self.tail.grid,
            "policy": self.policy.dump(),
        }
        if self.hellinger is not None:
            out["alpha_grid"] = self.hellinger.grid
        if self.profile is not None:
            out["delta_grid"] = self.profile.grid
        if self.verdict is not None:
            out["verdict"] = self.verdict.dump()
        return out


class Verdict:
    def __init__(self, label, basis, notes):
        self.label = label
        self.basis = basis
        self.notes = notes

    def __eq__(self, other):
        if isinstance(other, str):
            return self.label == other
        return isinstance(other, Verdict) and self.label == other.label

    def __hash__(self):
        return hash(self.label)

    def __str__(self):
        return self.label

    def dump(self):
        return {"label": self.label, "basis": self.basis, "notes": self.notes}


def verdict(diag, policy=None):
    """
    @brief      Labels a sequence NAA, SAA or INCONCLUSIVE.

    limsup / liminf over n are the max / min over the trailing window of
    the policy.

    NAA: the tail at the largest M stays below eps1 across the window and
    the Hellinger value at the smallest alpha stays above 1 - eps1.
    SAA: the window maximum of the tail exceeds 1 - eps2 at every M, or the
    window minimum of the Hellinger value drops below eps2 at some alpha.
    """
    policy = policy or diag.policy
    notes = [FINITE_N_NOTE]
    if not diag.n:
        return Verdict(INCONCLUSIVE, "no sequence members", notes)

    win = policy.tail_window(len(diag.n))
    tail = diag.tail.values[win]
    top = int(np.argmax(diag.tail.grid))
    tail_sup = tail[:, top].max()

    hel = None
    if diag.hellinger is not None:
        hel = diag.hellinger.values[win]
        smallest = int(np.argmin(diag.hellinger.grid))
        hel_small = hel[:, smallest].min()
    else:
        notes.append("no Hellinger curve; tail criteria only")

    if tail_sup < policy.eps1 and (hel is None or hel_small > 1 - policy.eps1):
        basis = "tail sup {:.4g} < {:g} at M = {:g}".format(
            tail_sup, policy.eps1, diag.tail.grid[top]
        )
        if hel is not None:
            basis += "; Hellinger inf {:.4g} > {:g}".format(hel_small, 1 - policy.eps1)
        return Verdict(NAA, basis, notes)

    tail_all = tail.max(axis=0)
    if np.all(tail_all > 1 - policy.eps2):
        basis = "tail sup > {:g} at every M (min {:.4g})".format(
            1 - policy.eps2, tail_all.min()
        )
        return Verdict(SAA, basis, notes)
    if hel is not None:
        hel_inf = hel.min(axis=0)
        if np.any(hel_inf < policy.eps2):
            j = int(np.argmin(hel_inf))
            basis = "Hellinger inf {:.4g} < {:g} at alpha = {:g}".format(
                hel_inf[j], policy.eps2, diag.hellinger.grid[j]
            )
            return Verdict(SAA, basis, notes)

    return Verdict(INCONCLUSIVE, "neither threshold met", notes)


def sequence_diagnostics(
    laws, M_grid=None, alpha_grid=None, delta_grid=None, policy=None, pool=None
):
    """
    @brief      Builds tail, Hellinger and Neyman-Pearson curves for a
                sequence of numeraire laws and applies verdict.

    The profile compares P with (V^n)^-1 * P, whose likelihood ratio is V^n.
    """
    M_grid = DEFAULT_M_GRID if M_grid is None else M_grid
    alpha_grid = DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid
    delta_grid = DEFAULT_DELTA_GRID if delta_grid is None else delta_grid

    tail = tail_curve(laws, M_grid)
    hellinger = hellinger_curve(laws, alpha_grid)
    profile = Curve(
        _index(laws),
        delta_grid,
        [np_profile(law.probs, law.probs / law.values, delta_grid) for law in laws],
    )

    diag = SequenceDiagnostics(tail, hellinger, profile, policy)
    diag.verdict = verdict(diag)
    log.info("Sequence of %d laws: %s (%s)", len(laws), diag.verdict, diag.verdict.basis)
    return diag


def limit_consistency_checks(laws, alpha_grid, M_grid, policy=None, triples=()):
    """
    @brief      Finite-n checks of the limit identities linking Hellinger
                integrals and tails.

    With Z = 1 / V, the window minimum of E Z^alpha at the smallest alpha
    and the window minimum of P(1/Z < M) at the largest M must agree within
    the policy tolerance. Each (x, v, z, probs) in triples is checked for

        P(X >= M) <= N / M + P(V >= N)
        P(V >= M) <= N / M + P(1/Z >= N)

    over all (M, N) pairs from M_grid.
    """
    policy = policy or Policy()
    report = {"policy": policy.dump(), "notes": [FINITE_N_NOTE]}

    if laws:
        win = policy.tail_window(len(laws))
        hel = hellinger_curve(laws, alpha_grid)
        tail = tail_curve(laws, M_grid)
        a = int(np.argmin(hel.grid))
        M = int(np.argmax(tail.grid))
        left = float(hel.values[win, a].min())
        right = float((1.0 - tail.values[win, M]).min())
        report["hellinger_side"] = left
        report["tail_side"] = right
        report["agree"] = abs(left - right) <= policy.tolerance
    else:
        report["agree"] = True

    worst = np.inf
    for x, v, z, probs in triples:
        x, v, z, probs = (np.asarray(arr, dtype=float) for arr in (x, v, z, probs))
        for M in M_grid:
            for N in M_grid:
                first = N / M + np.dot(probs, v >= N) - np.dot(probs, x >= M)
                second = N / M + np.dot(probs, 1 / z >= N) - np.dot(probs, v >= M)
                worst = min(worst, first, second)
    if triples:
        report["triple_slack"] = float(worst)
        report["triples_ok"] = bool(worst >= -SLACK_TOL)

    report["ok"] = report["agree"] and report.get("triples_ok", True)
    if not report["ok"]:
        log.warning("Limit consistency checks failed: %s", report)
    return report
