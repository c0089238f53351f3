# Shared constants, errors and small classes for the numeraire package

from concurrent.futures import ThreadPoolExecutor

NAA, SAA, INCONCLUSIVE, NOT_APPLICABLE = (
    "NAA",
    "SAA",
    "INCONCLUSIVE",
    "NOT_APPLICABLE",
)

STRUCT_TOL = 1e-12  # structural sums (branch probabilities, masses)
LAW_TOL = 1e-9  # terminal laws and solver outputs

FINITE_N_NOTE = (
    "finite-n evidence cannot prove an asymptotic statement; "
    "the verdict is a consistent-with label under the stated policy"
)


class ConfigError(ValueError):
    # Scenario or settings document is unusable.
    def __init__(self, field, msg, file=None):
        self.field = field
        self.file = file
        text = "{}: {}".format(field, msg)
        if file is not None:
            text = "{} ({})".format(text, file)
        super().__init__(text)


class MarketError(ValueError):
    # Market document breaks EventTree / FiniteMarket invariants.
    def __init__(self, violations, file=None):
        self.violations = list(violations)
        self.file = file
        head = "invalid market" if file is None else "{} is invalid".format(file)
        super().__init__("{}: {}".format(head, "; ".join(self.violations)))


class NumericalError(ArithmeticError):
    pass


class ArbitrageError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, msg, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(msg)


class RankError(NumericalError):
    def __init__(self, msg, smallest_singular_value):
        self.smallest_singular_value = smallest_singular_value
        super().__init__(
            "{} (smallest singular value {:.3e})".format(
                msg, smallest_singular_value
            )
        )


class NotEquivalentError(NumericalError):
    pass


class Policy:
    """
    @brief      Thresholds turning finite-n curves into verdict labels.

    @param      eps1       Tail / Hellinger threshold for NAA
    @param      eps2       Tail / Hellinger threshold for SAA
    @param      window     Trailing fraction of the n values standing in
                           for limsup / liminf
    @param      tolerance  Agreement tolerance for the limit consistency
                           checks
    """

    def __init__(self, eps1=0.05, eps2=0.05, window=1 / 3, tolerance=0.05):
        if not 0 < eps1 < 1 or not 0 < eps2 < 1:
            raise ValueError("policy thresholds must lie in (0, 1)")
        if not 0 < window <= 1:
            raise ValueError("policy window must lie in (0, 1]")
        self.eps1 = eps1
        self.eps2 = eps2
        self.window = window
        self.tolerance = tolerance

    def tail_window(self, count):
        # Index slice of the trailing window over `count` sequence members.
        size = max(1, int(round(self.window * count)))
        return slice(count - size, count)

    def dump(self):
        return {
            "eps1": self.eps1,
            "eps2": self.eps2,
            "window": self.window,
            "tolerance": self.tolerance,
        }


class Pool:
    """
    @brief      Bounded worker pool with ordered results; serial when
                max_workers is 1.
    """

    def __init__(self, max_workers=1):
        self.max_workers = max(1, int(max_workers))
        self._executor = None

    def map(self, fn, items):
        items = list(items)
        if self.max_workers == 1 or len(items) < 2:
            return [fn(item) for item in items]

        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.max_workers)

        return list(self._executor.map(fn, items))

    def wait(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.wait()


def pmap(pool, fn, items):
    # Map through pool when given, serially otherwise.
    if pool is None:
        return [fn(item) for item in items]
    return pool.map(fn, items)
