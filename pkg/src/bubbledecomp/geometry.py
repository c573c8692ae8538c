"""Model manifolds: the unit round sphere S^N and the flat torus of side 2*pi.

Both come with closed-form exponential/logarithm maps, geodesic distance,
normal-coordinate metric data, and the Jacobians of exp/log needed to move
gradients between a chart and the ambient space.  Conventions:

* sphere points are unit vectors in R^{N+1}; torus points are coordinate
  vectors reduced to [0, 2*pi)^N,
* chart (normal) coordinates are vectors in R^N expressed in a deterministic
  orthonormal frame at the base point,
* batches are row-stacked: points (m, amb_dim), chart vectors (m, N).
"""

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "Sphere",
    "FlatTorus",
    "MetricData",
    "make_manifold",
    "exp_map",
    "log_map",
    "geodesic_distance",
    "metric_in_chart",
    "transition_point",
    "transition_jacobian",
]

_TINY = 1e-300


def _sinc(t):
    # sin(t)/t with the correct limit at 0
    return np.sinc(t / np.pi)


class MetricData:
    """Normal-coordinate metric at a chart point: g, its inverse, sqrt(det g)."""

    def __init__(self, g, g_inv, sqrt_det):
        self.g = np.asarray(g, dtype=float)
        self.g_inv = np.asarray(g_inv, dtype=float)
        self.sqrt_det = float(sqrt_det)


class _ManifoldBase:
    kind = "?"

    def __repr__(self):
        return "%s(dim=%d)" % (type(self).__name__, self.dim)

    @property
    def r_critical(self):
        # (N - 2)/2, the critical rescaling weight
        return 0.5 * (self.dim - 2)

    @property
    def two_star(self):
        # critical embedding exponent 2N/(N - 2)
        return 2.0 * self.dim / (self.dim - 2)

    def _chart_input(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            from .errors import UsageError

            raise UsageError(
                "expected chart vectors of dimension %d, got shape %r" % (self.dim, xi.shape)
            )
        return xi

    def exp(self, y, xi, check=True):
        raise NotImplementedError

    def log(self, y, x, check=True):
        raise NotImplementedError


class Sphere(_ManifoldBase):
    """Unit sphere S^N embedded in R^{N+1}."""

    kind = "sphere"

    def __init__(self, dim):
        if dim < 3:
            raise ConfigError("sphere dimension must be >= 3, got %d" % dim)
        self.dim = int(dim)
        self.amb_dim = self.dim + 1
        self.rho_max = np.pi  # injectivity radius

    @property
    def volume(self):
        from math import gamma, pi

        n = self.amb_dim
        return 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)

    def check_points(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        nrm = np.linalg.norm(x, axis=-1)
        if np.any(np.abs(nrm - 1.0) > 1e-9):
            raise DomainError("point off the unit sphere by %g" % np.max(np.abs(nrm - 1.0)))
        return x

    def frame(self, y):
        """Deterministic orthonormal basis of T_y: Gram-Schmidt of the ambient
        axes against the normal, in axis order."""
        y = np.asarray(y, dtype=float)
        cols = []
        for i in range(self.amb_dim):
            v = np.zeros(self.amb_dim)
            v[i] = 1.0
            v = v - np.dot(y, v) * y
            for c in cols:
                v = v - np.dot(c, v) * c
            n = np.linalg.norm(v)
            if n > 1e-6:
                cols.append(v / n)
            if len(cols) == self.dim:
                break
        return np.stack(cols, axis=-1)  # (amb, N)

    def exp(self, y, xi, check=True):
        y = np.asarray(y, dtype=float)
        xi = self._chart_input(xi)
        t = np.linalg.norm(xi, axis=-1)
        if check and np.any(t >= self.rho_max):
            raise DomainError("exp called past the cut locus: |v| = %g >= pi" % np.max(t))
        F = self.frame(y)
        amb_dir = xi @ F.T  # (..., amb), norm t
        s = _sinc(t)
        return np.cos(t)[..., None] * y + s[..., None] * amb_dir

    def log(self, y, x, check=True):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        q = np.clip(x @ y, -1.0, 1.0)
        t = np.arccos(q)
        if check and np.any(t >= self.rho_max - 1e-12):
            raise DomainError("log at/past the cut locus: d = %g" % np.max(t))
        F = self.frame(y)
        # tangential part of x at y, then rescale to length t
        tang = x - q[..., None] * y
        coords = tang @ F  # (..., N), norm sin t
        s = _sinc(t)
        return coords / np.maximum(s, _TINY)[..., None]

    def distance(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        q = np.clip(np.sum(x1 * x2, axis=-1), -1.0, 1.0)
        return np.arccos(q)

    def sqrt_det_g(self, t):
        """sqrt(det g) at chart radius t: (sin t / t)^(N-1)."""
        return _sinc(np.asarray(t, dtype=float)) ** (self.dim - 1)

    def metric(self, xi):
        xi = np.asarray(xi, dtype=float)
        t = float(np.linalg.norm(xi))
        if t >= self.rho_max:
            raise DomainError("metric requested outside the chart ball: |xi| = %g" % t)
        eye = np.eye(self.dim)
        if t < 1e-14:
            return MetricData(eye, eye, 1.0)
        u = xi / t
        P_rad = np.outer(u, u)
        P_tan = eye - P_rad
        s = float(_sinc(t))
        g = P_rad + s * s * P_tan
        g_inv = P_rad + P_tan / (s * s)
        return MetricData(g, g_inv, s ** (self.dim - 1))

    def dexp(self, y, xi):
        """Jacobian of exp_y at xi, mapping chart vectors to ambient tangent
        vectors at exp_y(xi).  Shape (..., amb, N)."""
        y = np.asarray(y, dtype=float)
        xi = self._chart_input(np.atleast_2d(xi))
        t = np.linalg.norm(xi, axis=-1)
        u = xi / np.maximum(t, _TINY)[..., None]
        # at t == 0 any unit u gives the exact limit F
        u = np.where(t[..., None] > 0, u, np.eye(self.dim)[0])
        F = self.frame(y)
        Fu = u @ F.T
        a = -np.sin(t)[..., None] * y + np.cos(t)[..., None] * Fu  # radial column
        s = _sinc(t)
        proj = np.eye(self.dim) - u[..., :, None] * u[..., None, :]
        out = a[..., :, None] * u[..., None, :] + s[..., None, None] * np.einsum(
            "ai,...ij->...aj", F, proj
        )
        return out

    def dlog(self, y, x):
        """Jacobian of log_y at x, acting on ambient tangent vectors at x.
        Shape (..., N, amb)."""
        y = np.asarray(y, dtype=float)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = self.log(y, x, check=False)
        t = np.linalg.norm(xi, axis=-1)
        u = xi / np.maximum(t, _TINY)[..., None]
        u = np.where(t[..., None] > 0, u, np.eye(self.dim)[0])
        F = self.frame(y)
        Fu = u @ F.T
        a = -np.sin(t)[..., None] * y + np.cos(t)[..., None] * Fu  # unit radial at x
        s = _sinc(t)
        proj = np.eye(self.dim) - u[..., :, None] * u[..., None, :]
        out = u[..., :, None] * a[..., None, :] + (1.0 / s)[..., None, None] * np.einsum(
            "...ij,aj->...ia", proj, F
        )
        return out

    def tangent_project(self, x, vec):
        """Project ambient vectors onto T_x."""
        inner = np.sum(x * vec, axis=-1, keepdims=True)
        return vec - inner * x

    def sample_points(self, rng, m):
        v = rng.standard_normal((m, self.amb_dim))
        return v / np.linalg.norm(v, axis=-1, keepdims=True)


class FlatTorus(_ManifoldBase):
    """Flat torus (R/2piZ)^N with the euclidean metric; coordinates in [0, 2pi)."""

    kind = "torus"

    def __init__(self, dim):
        if dim < 3:
            raise ConfigError("torus dimension must be >= 3, got %d" % dim)
        self.dim = int(dim)
        self.amb_dim = self.dim
        self.rho_max = np.pi

    @property
    def volume(self):
        return (2.0 * np.pi) ** self.dim

    @staticmethod
    def reduce(delta):
        """Componentwise reduction to [-pi, pi)."""
        return np.mod(np.asarray(delta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi

    def check_points(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.mod(x, 2.0 * np.pi)

    def frame(self, y):
        return np.eye(self.dim)

    def exp(self, y, xi, check=True):
        y = np.asarray(y, dtype=float)
        xi = self._chart_input(xi)
        if check:
            t = np.linalg.norm(xi, axis=-1)
            if np.any(t >= self.rho_max):
                raise DomainError("exp called past the cut locus: |v| = %g >= pi" % np.max(t))
        return np.mod(y + xi, 2.0 * np.pi)

    def log(self, y, x, check=True):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        xi = self.reduce(x - y)
        if check:
            t = np.linalg.norm(xi, axis=-1)
            if np.any(t >= self.rho_max - 1e-12):
                raise DomainError("log at/past the cut locus: d = %g" % np.max(t))
        return xi

    def distance(self, x1, x2):
        return np.linalg.norm(self.reduce(np.asarray(x1, float) - np.asarray(x2, float)), axis=-1)

    def sqrt_det_g(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def metric(self, xi):
        xi = np.asarray(xi, dtype=float)
        t = float(np.linalg.norm(xi))
        if t >= self.rho_max:
            raise DomainError("metric requested outside the chart ball: |xi| = %g" % t)
        eye = np.eye(self.dim)
        return MetricData(eye, eye, 1.0)

    def dexp(self, y, xi):
        xi = np.atleast_2d(self._chart_input(xi))
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, xi.shape[:-1] + eye.shape).copy()

    def dlog(self, y, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, x.shape[:-1] + eye.shape).copy()

    def tangent_project(self, x, vec):
        return np.asarray(vec, dtype=float)

    def sample_points(self, rng, m):
        return rng.uniform(0.0, 2.0 * np.pi, size=(m, self.dim))


def make_manifold(kind, dim):
    """Construct a model manifold by name ('sphere' or 'torus'), intrinsic dim N >= 3."""
    kind = str(kind).lower()
    if kind in ("sphere", "s"):
        return Sphere(dim)
    if kind in ("torus", "flat_torus", "t"):
        return FlatTorus(dim)
    raise ConfigError("unknown manifold kind %r" % kind)


# ---------------------------------------------------------------------------
# functional wrappers (the documented public entry points)


def exp_map(M, y, v):
    """Geodesic exponential at y applied to chart vector(s) v, |v| < pi."""
    return M.exp(y, v)


def log_map(M, y, x):
    """Inverse of exp_map for d(y, x) < pi; returns chart vector(s)."""
    return M.log(y, x)


def geodesic_distance(M, x1, x2):
    return M.distance(x1, x2)


def metric_in_chart(M, xi):
    """MetricData (g, g_inv, sqrt_det) of the normal-coordinate metric at xi."""
    return M.metric(xi)


# ---------------------------------------------------------------------------
# two-point transition maps (used by the atlas and by profile recentering)


def transition_point(M, a, b, xi):
    """psi_{a->b}(xi) = log_b(exp_a(xi)); defined while both sides stay in range."""
    return M.log(b, M.exp(a, xi))


def transition_jacobian(M, a, b, xi, step=1e-6):
    """Jacobian of psi_{a->b} at xi by central differences (closed form on the torus)."""
    if M.kind == "torus":
        return np.eye(M.dim)
    xi = np.asarray(xi, dtype=float)
    cols = []
    for i in range(M.dim):
        e = np.zeros(M.dim)
        e[i] = step
        p = transition_point(M, a, b, xi + e)
        m = transition_point(M, a, b, xi - e)
        cols.append((p - m).ravel() / (2.0 * step))
    return np.stack(cols, axis=-1)


def mean_point(M, pts, iters=3):
    """Riemannian mean of a cluster of nearby points (log/exp fixed-point steps)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    p = pts[-1]
    for _ in range(iters):
        p = M.exp(p, np.mean(M.log(p, pts, check=False), axis=0), check=False)
        if M.kind == "sphere":
            p = p / np.linalg.norm(p)
    return p
