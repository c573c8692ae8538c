"""Numerical profile decomposition on compact model manifolds.

Bounded sequences in H^{1,2}(M) that concentrate at points are split into a
weak limit, a finite family of rescaled bubbles, and a remainder that is small
in the critical Lebesgue norm.  The package provides the geometry (sphere /
flat torus), chart atlases with a smooth partition of unity, quadrature for
Sobolev inner products, the concentration-scan extraction pipeline, and
verification/probing utilities, plus a small CLI around reproducible bundles.
"""

from .errors import (
    BubbleDecompError,
    ConfigError,
    DataError,
    DomainError,
    NodeBudgetError,
    UsageError,
)
from .geometry import (
    FlatTorus,
    MetricData,
    Sphere,
    exp_map,
    geodesic_distance,
    log_map,
    make_manifold,
    metric_in_chart,
)

__version__ = "0.1.0"
