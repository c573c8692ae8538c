"""Exception types shared across the package."""

__all__ = [
    "BubbleDecompError",
    "ConfigError",
    "DomainError",
    "DataError",
    "UsageError",
    "NodeBudgetError",
]


class BubbleDecompError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigError(BubbleDecompError):
    """Invalid or inconsistent configuration (bad dimension, bad radius, ...)."""


class DomainError(BubbleDecompError):
    """Geometric domain violation: point outside a chart, past the cut locus, ..."""


class DataError(BubbleDecompError):
    """Missing or corrupt on-disk inputs (bundles, reports)."""


class UsageError(BubbleDecompError):
    """API misuse: inconsistent plant, mismatched manifolds, wrong shapes."""


class NodeBudgetError(BubbleDecompError):
    """A single integral would exceed the configured node budget.

    Carries the requested and allowed node counts.
    """

    def __init__(self, requested, budget):
        super().__init__(
            "quadrature mesh needs %d nodes, budget is %d" % (requested, budget)
        )
        self.requested = int(requested)
        self.budget = int(budget)
