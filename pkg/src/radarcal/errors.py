"""Exception types shared across the toolkit."""


class InvalidArgument(ValueError):
    """An input violates a documented precondition."""


class DegenerateStats(ValueError):
    """Training-split extrema collapse (min == max), so normalization is undefined."""


class NumericFailure(ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None, seed=None):
        super().__init__(message)
        self.epoch = epoch
        self.seed = seed


class EmptySubset(ValueError):
    """A metric was requested over a subset with no records."""
