"""Exception types raised by the filtering library."""


class ContractViolation(ValueError):
    """An input broke a documented precondition."""


class LikelihoodError(ValueError):
    """A model likelihood returned a negative or non-finite value."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"likelihood of particle {index} is invalid: {value!r}")


class GridTooLarge(RuntimeError):
    """The requested fulcrum lattice exceeds the configured point cap."""

    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"fulcrum grid of {count} points exceeds cap {cap}")


class RankDeficientError(ValueError):
    """The least-squares design matrix does not have full column rank."""

    def __init__(self, columns):
        self.columns = tuple(columns)
        super().__init__(f"design matrix rank deficient in basis columns {list(self.columns)}")


class UnderpopulatedInterval(ValueError):
    """A piecewise-fit interval holds too few points."""

    def __init__(self, interval: int, lo: float, hi: float, count: int, needed: int):
        self.interval = interval
        super().__init__(
            f"interval {interval} [{lo:g}, {hi:g}] holds {count} points, needs at least {needed}"
        )


class ConfigError(ValueError):
    """Invalid experiment or filter configuration."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
