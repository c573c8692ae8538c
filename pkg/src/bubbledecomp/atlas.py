"""Finite atlases of normal-coordinate charts with a C^2 partition of unity.

An atlas is a deterministic set of chart centers at spacing <= rho/sqrt(N)
(torus: coordinate lattice) or produced by greedy separation-thinning of a
cube-face candidate lattice (sphere), such that the half-radius balls
B(z_i, rho/2) already cover the manifold.  Each center carries the radial
cutoff X (quintic smoothstep, identically 1 on [0, rho/2], 0 outside rho) and
the partition weights are chi_i = X(d(z_i, .)) / sum_j X(d(z_j, .)); covering
by half-balls keeps the denominator >= 1 everywhere.
"""

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DomainError, UsageError
from .geometry import transition_jacobian, transition_point

__all__ = ["Cutoff", "Atlas", "TransitionData", "build_atlas", "partition_of_unity", "transition_map"]


class Cutoff:
    """Radial bump: 1 on [0, rho/2], quintic smoothstep down to 0 at rho (C^2)."""

    shape = "quintic_smoothstep"

    def __init__(self, rho):
        if rho <= 0:
            raise ConfigError("cutoff radius must be positive")
        self.rho = float(rho)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        s = np.clip((t - 0.5 * self.rho) / (0.5 * self.rho), 0.0, 1.0)
        return np.maximum(1.0 - s * s * s * (s * (6.0 * s - 15.0) + 10.0), 0.0)

    def dvalue(self, t):
        """Derivative in t; supported on (rho/2, rho)."""
        t = np.asarray(t, dtype=float)
        s = (t - 0.5 * self.rho) / (0.5 * self.rho)
        inside = (s > 0.0) & (s < 1.0)
        s = np.clip(s, 0.0, 1.0)
        d = -30.0 * s * s * (1.0 - s) * (1.0 - s) * (2.0 / self.rho)
        return np.where(inside, d, 0.0)


class TransitionData:
    """Value, finite-difference jacobian and its determinant for a chart change."""

    def __init__(self, point, jacobian):
        self.point = np.asarray(point, dtype=float)
        self.jacobian = np.asarray(jacobian, dtype=float)
        self.det = float(np.linalg.det(self.jacobian))


def _chord_radius(M, r):
    # ambient search radius matching geodesic radius r
    if M.kind == "sphere":
        return 2.0 * np.sin(0.5 * min(r, np.pi))
    return r


class Atlas:
    def __init__(self, M, centers, rho):
        if rho <= 0 or rho >= M.rho_max / 3.0:
            raise ConfigError(
                "chart radius must satisfy 0 < rho < rho_max/3 = %g, got %g"
                % (M.rho_max / 3.0, rho)
            )
        self.M = M
        self.centers = M.check_points(centers)
        self.rho = float(rho)
        self.cutoff = Cutoff(rho)
        if M.kind == "torus":
            self._tree = cKDTree(np.mod(self.centers, 2 * np.pi), boxsize=2 * np.pi)
        else:
            self._tree = cKDTree(self.centers)
        self._mesh_cache = {}

    @property
    def n_charts(self):
        return len(self.centers)

    def __repr__(self):
        return "Atlas(%s, n_charts=%d, rho=%.4g)" % (self.M.kind, self.n_charts, self.rho)

    # ------------------------------------------------------------ queries

    def charts_covering(self, x):
        """List of chart-index arrays, one per query point (d(z_i, x) < rho)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.M.kind == "torus":
            x = np.mod(x, 2 * np.pi)
        lists = self._tree.query_ball_point(x, _chord_radius(self.M, self.rho))
        return [np.asarray(sorted(l), dtype=int) for l in lists]

    def pairs_covering(self, x):
        """Flat (point_idx, chart_idx) pairs for a batch of points."""
        lists = self.charts_covering(x)
        if not lists:
            return np.zeros(0, int), np.zeros(0, int)
        rows = np.repeat(np.arange(len(lists)), [len(l) for l in lists])
        cols = np.concatenate(lists) if lists else np.zeros(0, int)
        return rows, cols.astype(int)

    def nearest_center(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.M.kind == "torus":
            x = np.mod(x, 2 * np.pi)
        _, idx = self._tree.query(x, k=1)
        return np.asarray(idx, dtype=int)

    def chart_neighbors(self, s, factor=2.0):
        """Charts whose balls can intersect chart s (centers within factor*rho)."""
        z = self.centers[s]
        if self.M.kind == "torus":
            z = np.mod(z, 2 * np.pi)
        idx = self._tree.query_ball_point(z, _chord_radius(self.M, factor * self.rho))
        return np.asarray(sorted(idx), dtype=int)

    # ------------------------------------------------- partition of unity

    def partition(self, x):
        """Sparse partition weights at points x.

        Returns (rows, cols, chi, denom): flat triplets with chi the normalized
        weight of chart cols[k] at point rows[k], and denom the per-point
        denominator sum_j X(d_j).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rows, cols = self.pairs_covering(x)
        d = self.M.distance(self.centers[cols], x[rows])
        raw = self.cutoff.value(d)
        denom = np.zeros(len(x))
        np.add.at(denom, rows, raw)
        if len(x) and (not len(rows) or denom.min() <= 0):
            raise DomainError("point not covered by any chart")
        return rows, cols, raw / denom[rows], denom

    def chi(self, s, x):
        """chi_s evaluated at points x (zero off the chart ball)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rows, cols, chiv, _ = self.partition(x)
        out = np.zeros(len(x))
        sel = cols == s
        out[rows[sel]] = chiv[sel]
        return out

    def chi_and_grad(self, s, x):
        """chi_s and its ambient-tangent gradient at points x.

        The gradient combines the quotient rule with
        grad d(z, .) = the unit tangent at x pointing away from z.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = len(x)
        rows, cols, _, denom = self.partition(x)
        d = self.M.distance(self.centers[cols], x[rows])
        raw = self.cutoff.value(d)
        draw = self.cutoff.dvalue(d)

        # unit "away from z" tangents at each (point, chart) pair
        if self.M.kind == "torus":
            diff = self.M.reduce(x[rows] - self.centers[cols])
            grad_d = diff / np.maximum(d, 1e-300)[:, None]
        else:
            q = np.cos(d)
            tang = self.centers[cols] - q[:, None] * x[rows]
            grad_d = -tang / np.maximum(np.sin(d), 1e-300)[:, None]
        grad_raw = draw[:, None] * grad_d  # dX_j at the pair points

        grad_denom = np.zeros_like(x)
        np.add.at(grad_denom, rows, grad_raw)

        out = np.zeros(m)
        grad_out = np.zeros_like(x)
        sel = cols == s
        rs = rows[sel]
        out[rs] = raw[sel] / denom[rs]
        grad_out[rs] = (
            grad_raw[sel] * denom[rs, None] - raw[sel, None] * grad_denom[rs]
        ) / (denom[rs, None] ** 2)
        return out, grad_out

    # -------------------------------------------------------- transitions

    def transition(self, i, j, xi):
        """Chart-change map psi_{i->j} at xi, with finite-difference jacobian."""
        xi = np.asarray(xi, dtype=float)
        if np.linalg.norm(xi) >= self.rho:
            raise DomainError("transition source point outside the chart ball")
        a, b = self.centers[i], self.centers[j]
        x = self.M.exp(a, xi)
        if float(self.M.distance(b, x)) >= self.rho:
            raise DomainError("transition target lies outside chart %d" % j)
        point = transition_point(self.M, a, b, xi)
        jac = transition_jacobian(self.M, a, b, xi, step=1e-5 * self.rho)
        return TransitionData(point, jac)

    # ------------------------------------------------------------- meshes

    def chart_mesh(self, s, q):
        """Midpoint-rule nodes for chart s at density q (cached).

        Returns a dict with chart coordinates `xi`, manifold points `x`,
        cell volume `cellvol`, partition weights `chi`, their ambient-tangent
        gradients `grad_chi`, and `sqrt_det`.
        """
        key = (int(s), float(q))
        hit = self._mesh_cache.get(key)
        if hit is not None:
            return hit
        M, rho = self.M, self.rho
        if M.kind == "torus":
            xi, x, cellvol = self._torus_chart_nodes(s, q)
        else:
            n_axis = int(np.ceil(2.0 * rho * q))
            h = 2.0 * rho / n_axis
            axis = -rho + (np.arange(n_axis) + 0.5) * h
            grids = np.meshgrid(*([axis] * M.dim), indexing="ij")
            xi = np.stack([g.ravel() for g in grids], axis=-1)
            xi = xi[np.linalg.norm(xi, axis=-1) < rho]
            x = M.exp(self.centers[s], xi)
            cellvol = h ** M.dim
        chi, grad_chi = self.chi_and_grad(s, x)
        mesh = {
            "xi": xi,
            "x": x,
            "cellvol": cellvol,
            "chi": chi,
            "grad_chi": grad_chi,
            "sqrt_det": M.sqrt_det_g(np.linalg.norm(xi, axis=-1)),
        }
        self._mesh_cache[key] = mesh
        return mesh

    def _torus_chart_nodes(self, s, q):
        # torus chart nodes sit on the shared global lattice so that nodes of
        # overlapping charts coincide and the chart sum telescopes exactly
        nodes, h = self.global_lattice(q)
        xi = self.M.reduce(nodes - self.centers[s])
        keep = np.linalg.norm(xi, axis=-1) < self.rho
        return xi[keep], nodes[keep], h ** self.M.dim

    def global_lattice(self, q):
        """Aligned midpoint lattice on the torus (nodes, pitch)."""
        if self.M.kind != "torus":
            raise UsageError("global lattice only exists on the torus")
        m = int(np.ceil(2 * np.pi * q))
        h = 2 * np.pi / m
        axis = (np.arange(m) + 0.5) * h
        grids = np.meshgrid(*([axis] * self.M.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1), h

    def clear_mesh_cache(self):
        self._mesh_cache.clear()

    # --------------------------------------------------------------- io

    def to_dict(self):
        return {
            "manifold": {"kind": self.M.kind, "dim": self.M.dim},
            "rho": self.rho,
            "cutoff": {"shape": self.cutoff.shape, "rho": self.cutoff.rho},
            "n_charts": self.n_charts,
            "centers": [[float(c) for c in row] for row in self.centers],
        }

    @classmethod
    def from_dict(cls, d):
        from .geometry import make_manifold

        M = make_manifold(d["manifold"]["kind"], d["manifold"]["dim"])
        return cls(M, np.asarray(d["centers"], dtype=float), d["rho"])


# ---------------------------------------------------------------------------
# construction


def _torus_centers(M, rho):
    # coordinate lattice at spacing <= rho/sqrt(N) so that the farthest point
    # of a cell sits within rho/2 of its corner
    m = int(np.ceil(2 * np.pi * np.sqrt(M.dim) / rho))
    axis = np.arange(m) * (2 * np.pi / m)
    grids = np.meshgrid(*([axis] * M.dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _sphere_candidates(M, spacing):
    """Deterministic quasi-uniform candidate set: normalized cube-face lattice."""
    n_axis = max(3, int(np.ceil(2.0 / spacing)) + 1)
    ticks = np.linspace(-1.0, 1.0, n_axis)
    faces = []
    for ax in range(M.amb_dim):
        for sign in (-1.0, 1.0):
            grids = np.meshgrid(*([ticks] * M.dim), indexing="ij")
            flat = np.stack([g.ravel() for g in grids], axis=-1)
            face = np.insert(flat, ax, sign, axis=1)
            faces.append(face)
    pts = np.concatenate(faces, axis=0)
    return pts / np.linalg.norm(pts, axis=-1, keepdims=True)


def _greedy_thin(points, delta):
    """Keep points at pairwise (chordal) separation >= delta, in input order.

    Chunked: each chunk is first filtered in one shot against everything kept
    so far, then the few survivors are resolved sequentially among themselves.
    """
    kept = []
    d2 = delta * delta
    block = 16384
    for start in range(0, len(points), block):
        chunk = points[start : start + block]
        if kept:
            # unit vectors: |a-b|^2 = 2 - 2<a,b>
            maxdot = np.max(chunk @ np.asarray(kept).T, axis=1)
            chunk = chunk[2.0 - 2.0 * maxdot >= d2]
        fresh = []
        for p in chunk:
            ok = True
            for qp in fresh:
                d = p - qp
                if np.dot(d, d) < d2:
                    ok = False
                    break
            if ok:
                fresh.append(p)
        kept.extend(fresh)
    return np.asarray(kept)


def _sphere_centers(M, rho):
    # greedy thinning of the candidate lattice, densified until the proven
    # covering radius (max over candidates + candidate spacing) is < rho/2
    spacing = 0.05 * rho
    delta = 0.46 * rho
    cands = _sphere_candidates(M, spacing)
    chord_spacing = spacing  # chordal spacing bounds geodesic spacing up to O(spacing^3)
    for _ in range(12):
        centers = _greedy_thin(cands, 2.0 * np.sin(0.5 * delta))
        tree = cKDTree(centers)
        dist, _ = tree.query(cands, k=1)
        geo = 2.0 * np.arcsin(np.clip(dist / 2.0, 0, 1))
        bound = float(np.max(geo)) + 1.02 * chord_spacing
        if bound < 0.5 * rho:
            return centers
        delta *= 0.94
    raise ConfigError("could not build a covering atlas at rho = %g" % rho)


def build_atlas(M, rho=None):
    """Construct the deterministic atlas at chart radius rho (default 0.3*rho_max)."""
    if rho is None:
        rho = 0.3 * M.rho_max
    rho = float(rho)
    if not (0 < rho < M.rho_max / 3.0):
        raise ConfigError(
            "chart radius must satisfy 0 < rho < %g, got %g" % (M.rho_max / 3.0, rho)
        )
    if M.kind == "torus":
        centers = _torus_centers(M, rho)
    else:
        centers = _sphere_centers(M, rho)
    return Atlas(M, centers, rho)


# functional wrappers ------------------------------------------------------


def partition_of_unity(A, x):
    """Per-point [(chart_id, weight), ...] over the charts containing x."""
    x1 = np.atleast_2d(np.asarray(x, dtype=float))
    rows, cols, chiv, _ = A.partition(x1)
    out = [[] for _ in range(len(x1))]
    for r, c, v in zip(rows, cols, chiv):
        out[r].append((int(c), float(v)))
    if np.asarray(x).ndim == 1:
        return out[0]
    return out


def transition_map(A, i, j, xi):
    return A.transition(i, j, xi)
