"""Evaluator-backed fields and the quadrature that integrates them.

Two families of fields:

* ``FieldM`` — functions on a model manifold; values at points (m, amb_dim),
  gradients as ambient-tangent vectors.
* ``FieldE`` — functions on the chart plane R^N; values at (m, N) points.

Every field carries a finite support ball (or None for global manifold
fields), a ``finest_scale`` hint (log2 of its sharpest feature frequency), and
``flags`` — declared concentration balls (center, radius, scale).  Quadrature
trusts the flags: the base midpoint mesh at density q skips flagged balls and
each flagged ball is integrated on its own lattice at density q * 2^scale
(budget-capped).  On the flat torus all chart meshes sit on one shared global
lattice, so the chart sum telescopes exactly; on the sphere the identity
Dexp g^{-1} Dexp^T = (ambient tangent projection) reduces the metric
contraction of chart gradients to a plain dot product of ambient gradients.
"""

import numpy as np

from .errors import NodeBudgetError, UsageError

__all__ = [
    "FieldE",
    "FieldM",
    "SumE",
    "SumM",
    "ZeroE",
    "ZeroM",
    "RadialE",
    "SmoothE",
    "SmoothM",
    "AffineE",
    "LinearMapE",
    "GriddedE",
    "QuadratureSpec",
    "integrate",
    "h12_inner",
    "h12_norm",
    "lp_norm",
    "euclid_mesh",
    "euclid_integral",
    "h12_inner_e",
    "h1_energy_e",
    "lp_norm_e",
    "pair_with_test",
    "grad_energy_by_radius",
]


def critical_r(dim):
    return 0.5 * (dim - 2)


def merge_flags(flags, min_scale=0.5, cap=64):
    """Deterministic flag cleanup: finest first, near-duplicates dropped."""
    flags = [f for f in flags if f[2] >= min_scale]
    flags.sort(key=lambda f: (-f[2], tuple(np.round(np.asarray(f[0], float), 9)), -f[1]))
    kept = []
    for c, r, s in flags:
        c = np.asarray(c, dtype=float)
        dup = False
        for kc, kr, ks in kept:
            if (
                abs(s - ks) <= 0.3
                and np.linalg.norm(c - kc) <= 0.25 * max(r, kr)
                and r <= 1.3 * kr
            ):
                dup = True
                break
        if not dup:
            kept.append((c, float(r), float(s)))
        if len(kept) >= cap:
            break
    return kept


# ---------------------------------------------------------------------------
# chart-plane fields


class FieldE:
    """Function on R^N with finite support ball, gradient, and scale hints."""

    def __init__(self, dim, center, radius, finest_scale=0.0, flags=()):
        self.dim = int(dim)
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.finest_scale = float(finest_scale)
        self.flags = tuple(flags)

    # concrete classes fill these in (called on the inside-support subset)
    def _values(self, z):
        raise NotImplementedError

    def _grads(self, z):
        raise NotImplementedError

    def values(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros(len(z))
        m = np.linalg.norm(z - self.center, axis=-1) <= self.radius
        if np.any(m):
            out[m] = self._values(z[m])
        return out

    def grads(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros_like(z)
        m = np.linalg.norm(z - self.center, axis=-1) <= self.radius
        if np.any(m):
            out[m] = self._grads(z[m])
        return out

    def __add__(self, other):
        return SumE.of((1.0, self), (1.0, other))

    def __sub__(self, other):
        return SumE.of((1.0, self), (-1.0, other))

    def __mul__(self, a):
        return SumE.of((float(a), self))

    __rmul__ = __mul__

    def __neg__(self):
        return SumE.of((-1.0, self))


class ZeroE(FieldE):
    def __init__(self, dim):
        super().__init__(dim, None, 0.0)

    def _values(self, z):
        return np.zeros(len(z))

    def _grads(self, z):
        return np.zeros_like(z)


class SumE(FieldE):
    """Flat linear combination; evaluation masks each term by its own support."""

    def __init__(self, terms):
        terms = [(float(c), f) for c, f in terms if c != 0.0 and not isinstance(f, ZeroE)]
        if not terms:
            raise UsageError("empty sum; use ZeroE")
        dim = terms[0][1].dim
        centers = np.stack([f.center for _, f in terms])
        mid = centers.mean(axis=0)
        radius = max(
            np.linalg.norm(f.center - mid) + f.radius for _, f in terms
        )
        flags = [fl for _, f in terms for fl in f.flags]
        super().__init__(
            dim,
            mid,
            radius,
            finest_scale=max(f.finest_scale for _, f in terms),
            flags=merge_flags(flags, min_scale=-np.inf),
        )
        self.terms = terms

    @classmethod
    def of(cls, *pairs):
        terms = []
        for c, f in pairs:
            if isinstance(f, SumE):
                terms.extend((c * tc, tf) for tc, tf in f.terms)
            elif isinstance(f, ZeroE):
                continue
            else:
                terms.append((c, f))
        if not terms:
            return ZeroE(pairs[0][1].dim)
        return cls(terms)

    def values(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros(len(z))
        for c, f in self.terms:
            out += c * f.values(z)
        return out

    def grads(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros_like(z)
        for c, f in self.terms:
            out += c * f.grads(z)
        return out


class RadialE(FieldE):
    """h(|z|) with radial derivative hprime, supported in |z| <= radius."""

    def __init__(self, h, hprime, radius, dim=3, finest_scale=0.0, name="radial"):
        super().__init__(dim, None, radius, finest_scale=finest_scale)
        self.h = h
        self.hprime = hprime
        self.name = name

    def _values(self, z):
        return self.h(np.linalg.norm(z, axis=-1))

    def _grads(self, z):
        t = np.linalg.norm(z, axis=-1)
        unit = z / np.maximum(t, 1e-300)[:, None]
        return self.hprime(t)[:, None] * unit


class SmoothE(FieldE):
    """Closure-backed chart-plane field with explicit support."""

    def __init__(self, dim, fn, grad_fn, center, radius, finest_scale=0.0, flags=()):
        super().__init__(dim, center, radius, finest_scale=finest_scale, flags=flags)
        self.fn = fn
        self.grad_fn = grad_fn

    def _values(self, z):
        return self.fn(z)

    def _grads(self, z):
        return self.grad_fn(z)


class AffineE(FieldE):
    """Critical rescaling 2^(j r) w(2^j (z - shift)) of a chart-plane field."""

    def __init__(self, base, j, shift=None):
        self.base = base
        self.j = float(j)
        shift = np.zeros(base.dim) if shift is None else np.asarray(shift, dtype=float)
        self.shift = shift
        lam = 2.0 ** self.j
        self._lam = lam
        self._amp = lam ** critical_r(base.dim)
        flags = [
            (shift + f_c / lam, f_r / lam, f_s + self.j) for f_c, f_r, f_s in base.flags
        ]
        center = shift + base.center / lam
        radius = base.radius / lam
        if not flags:
            flags = [(center, radius, self.j + base.finest_scale)]
        super().__init__(
            base.dim,
            center,
            radius,
            finest_scale=base.finest_scale + self.j,
            flags=flags,
        )

    def _values(self, z):
        return self._amp * self.base.values(self._lam * (z - self.shift))

    def _grads(self, z):
        return self._amp * self._lam * self.base.grads(self._lam * (z - self.shift))


class LinearMapE(FieldE):
    """w(A z): profile renaming by a fixed invertible matrix."""

    def __init__(self, base, A):
        A = np.asarray(A, dtype=float)
        self.base = base
        self.A = A
        self.A_inv = np.linalg.inv(A)
        sv = np.linalg.svd(A, compute_uv=False)
        smin, smax = float(sv.min()), float(sv.max())
        stretch = max(0.0, np.log2(1.0 / smin))
        flags = [
            (f_c @ self.A_inv.T, f_r / smin, f_s + stretch) for f_c, f_r, f_s in base.flags
        ]
        super().__init__(
            base.dim,
            base.center @ self.A_inv.T,
            base.radius / smin,
            finest_scale=base.finest_scale + stretch,
            flags=flags,
        )

    def _values(self, z):
        return self.base.values(z @ self.A.T)

    def _grads(self, z):
        return self.base.grads(z @ self.A.T) @ self.A


class GriddedE(FieldE):
    """Frozen snapshot of a field on nested cube lattices around the origin.

    Values and gradients are sampled once (float32) on a fine lattice covering
    the core and a coarse lattice covering the rest of the support, then
    evaluated by multilinear interpolation.  Freezing breaks the recursive
    evaluation chains that lazy wrappers would build up.
    """

    def __init__(self, source, radius, h_fine=0.06, core=1.8, h_coarse=0.25, flag_cap=16):
        super().__init__(
            source.dim,
            None,
            float(radius),
            finest_scale=source.finest_scale,
            flags=merge_flags(list(source.flags), min_scale=-np.inf, cap=flag_cap),
        )
        self.levels = []
        specs = []
        if core > 0 and h_fine < h_coarse:
            specs.append((float(h_fine), min(float(core), float(radius))))
        specs.append((float(h_coarse), float(radius)))
        for h, reach in specs:
            n_half = int(np.ceil(reach / h)) + 2
            axis = h * np.arange(-n_half, n_half + 1)
            n = len(axis)
            pts = np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"), axis=-1)
            pts = pts.reshape(-1, self.dim)
            vals = source.values(pts).astype(np.float32).reshape((n,) * self.dim)
            grads = source.grads(pts).astype(np.float32)
            grads = grads.reshape((n,) * self.dim + (self.dim,))
            self.levels.append((h, reach, n_half, vals, grads))

    def _lerp(self, level, z, want_grads):
        h, _, n_half, vals, grads = level
        cube = grads if want_grads else vals
        u = z / h + n_half
        i0 = np.clip(np.floor(u).astype(int), 0, 2 * n_half - 1)
        t = u - i0
        if want_grads:
            out = np.zeros_like(z)
        else:
            out = np.zeros(len(z))
        for corner in range(2**self.dim):
            idx = []
            wgt = np.ones(len(z))
            for d in range(self.dim):
                bit = (corner >> d) & 1
                idx.append(i0[:, d] + bit)
                wgt = wgt * (t[:, d] if bit else 1.0 - t[:, d])
            picked = cube[tuple(idx)].astype(float)
            out += wgt[:, None] * picked if want_grads else wgt * picked
        return out

    def _route(self, z, want_grads):
        out = np.zeros_like(z) if want_grads else np.zeros(len(z))
        todo = np.ones(len(z), dtype=bool)
        for level in self.levels:
            m = todo & (np.max(np.abs(z), axis=-1) <= level[1])
            if np.any(m):
                out[m] = self._lerp(level, z[m], want_grads)
                todo &= ~m
        if np.any(todo):
            out[todo] = self._lerp(self.levels[-1], z[todo], want_grads)
        return out

    def _values(self, z):
        return self._route(z, False)

    def _grads(self, z):
        return self._route(z, True)


# ---------------------------------------------------------------------------
# manifold fields


class FieldM:
    """Function on a model manifold; support is a geodesic ball or None."""

    def __init__(self, M, support=None, finest_scale=0.0, flags=()):
        self.M = M
        self.support = support  # (center point, radius) or None
        self.finest_scale = float(finest_scale)
        self.flags = tuple(flags)  # (center point, radius, scale)

    def _values(self, x):
        raise NotImplementedError

    def _grads(self, x):
        raise NotImplementedError

    def values(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.support is None:
            return self._values(x)
        c, r = self.support
        out = np.zeros(len(x))
        m = self.M.distance(c, x) <= r
        if np.any(m):
            out[m] = self._values(x[m])
        return out

    def grads(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.support is None:
            return self._grads(x)
        c, r = self.support
        out = np.zeros_like(x)
        m = self.M.distance(c, x) <= r
        if np.any(m):
            out[m] = self._grads(x[m])
        return out

    def __add__(self, other):
        return SumM.of((1.0, self), (1.0, other))

    def __sub__(self, other):
        return SumM.of((1.0, self), (-1.0, other))

    def __mul__(self, a):
        return SumM.of((float(a), self))

    __rmul__ = __mul__

    def __neg__(self):
        return SumM.of((-1.0, self))


class ZeroM(FieldM):
    def __init__(self, M):
        super().__init__(M, support=None)

    def _values(self, x):
        return np.zeros(len(x))

    def _grads(self, x):
        return np.zeros_like(x)


class SumM(FieldM):
    def __init__(self, terms):
        terms = [(float(c), f) for c, f in terms if c != 0.0 and not isinstance(f, ZeroM)]
        if not terms:
            raise UsageError("empty sum; use ZeroM")
        M = terms[0][1].M
        support = None
        if all(f.support is not None for _, f in terms):
            # cheap enclosing ball around the first support center
            c0 = terms[0][1].support[0]
            radius = max(
                float(M.distance(c0, f.support[0])) + f.support[1] for _, f in terms
            )
            if radius < M.rho_max:
                support = (c0, radius)
        flags = [fl for _, f in terms for fl in f.flags]
        flags = _merge_mflags(M, flags)
        super().__init__(
            M,
            support=support,
            finest_scale=max(f.finest_scale for _, f in terms),
            flags=flags,
        )
        self.terms = terms

    @classmethod
    def of(cls, *pairs):
        terms = []
        for c, f in pairs:
            if isinstance(f, SumM):
                terms.extend((c * tc, tf) for tc, tf in f.terms)
            elif isinstance(f, ZeroM):
                continue
            else:
                terms.append((c, f))
        if not terms:
            return ZeroM(pairs[0][1].M)
        return cls(terms)

    def values(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(len(x))
        for c, f in self.terms:
            out += c * f.values(x)
        return out

    def grads(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        for c, f in self.terms:
            out += c * f.grads(x)
        return out


def _merge_mflags(M, flags, min_scale=-np.inf, cap=64):
    flags = [f for f in flags if f[2] >= min_scale]
    flags.sort(key=lambda f: (-f[2], tuple(np.round(np.asarray(f[0], float), 9)), -f[1]))
    kept = []
    for c, r, s in flags:
        c = np.asarray(c, dtype=float)
        dup = False
        for kc, kr, ks in kept:
            if (
                abs(s - ks) <= 0.3
                and float(M.distance(c, kc)) <= 0.25 * max(r, kr)
                and r <= 1.3 * kr
            ):
                dup = True
                break
        if not dup:
            kept.append((c, float(r), float(s)))
        if len(kept) >= cap:
            break
    return kept


class SmoothM(FieldM):
    """Closure-backed global manifold field (ambient-tangent gradient)."""

    def __init__(self, M, fn, grad_fn, finest_scale=0.0, flags=()):
        super().__init__(M, support=None, finest_scale=finest_scale, flags=flags)
        self.fn = fn
        self.grad_fn = grad_fn

    def _values(self, x):
        return self.fn(x)

    def _grads(self, x):
        return self.grad_fn(x)


# ---------------------------------------------------------------------------
# quadrature


class QuadratureSpec:
    """Mesh density (points per unit length), node budget, refinement toggle."""

    def __init__(self, density=12.0, node_budget=10_000_000, refine=True, min_refine_scale=0.5):
        if density <= 0:
            raise UsageError("quadrature density must be positive")
        self.density = float(density)
        self.node_budget = int(node_budget)
        self.refine = bool(refine)
        self.min_refine_scale = float(min_refine_scale)

    def replace(self, **kw):
        d = dict(
            density=self.density,
            node_budget=self.node_budget,
            refine=self.refine,
            min_refine_scale=self.min_refine_scale,
        )
        d.update(kw)
        return QuadratureSpec(**d)


def _ball_lattice(dim, radius, density):
    """Midpoint lattice on the cube [-r, r]^dim masked to the ball, plus cell volume."""
    n = max(1, int(np.ceil(2.0 * radius * density)))
    h = 2.0 * radius / n
    axis = -radius + (np.arange(n) + 0.5) * h
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    pts = pts[np.linalg.norm(pts, axis=-1) <= radius]
    return pts, h ** dim


def _active_flags(field_flags, quad):
    if not quad.refine:
        return []
    return [f for f in field_flags if f[2] >= quad.min_refine_scale]


def _patch_plan(flags, quad, base_nodes, dim):
    """Per-flag effective densities under the node budget; finest flags first."""
    demands = []
    for c, r, s in flags:
        q_eff = quad.density * 2.0 ** s
        n = max(1, int(np.ceil(2.0 * r * q_eff))) ** dim
        demands.append((q_eff, n))
    total = base_nodes + sum(n for _, n in demands)
    if base_nodes > quad.node_budget:
        raise NodeBudgetError(base_nodes, quad.node_budget)
    if total <= quad.node_budget or not demands:
        return [q for q, _ in demands]
    allowed = quad.node_budget - base_nodes
    shrink = (allowed / float(sum(n for _, n in demands))) ** (1.0 / dim)
    out = [max(quad.density, q * shrink) for q, _ in demands]
    if sum(
        max(1, int(np.ceil(2.0 * r * q))) ** dim for (c, r, s), q in zip(flags, out)
    ) + base_nodes > 4 * quad.node_budget:
        raise NodeBudgetError(total, quad.node_budget)
    return out


# ----- manifold integration


def _manifold_base_nodes(A, flags, quad, support=None):
    """Base mesh with flagged balls carved out.

    Yields (x, weight_arrays, chi, grad_chi, sqrt_det) per chart on the sphere;
    on the torus a single global piece with chi = None.  Charts that cannot
    intersect the support ball are skipped.
    """
    M = A.M
    if M.kind == "torus":
        nodes, h = A.global_lattice(quad.density)
        keep = np.ones(len(nodes), dtype=bool)
        if support is not None:
            keep &= M.distance(support[0], nodes) <= support[1]
        for c, r, s in flags:
            keep &= M.distance(c, nodes) > r
        yield {"x": nodes[keep], "w": h ** M.dim, "chi": None, "grad_chi": None, "sq": None}
        return
    if support is not None:
        reach = A.rho + support[1]
        near = M.distance(support[0], A.centers) <= reach
        chart_ids = np.nonzero(near)[0]
    else:
        chart_ids = np.arange(A.n_charts)
    for s_idx in chart_ids:
        mesh = A.chart_mesh(int(s_idx), quad.density)
        keep = np.ones(len(mesh["x"]), dtype=bool)
        for c, r, s in flags:
            keep &= M.distance(c, mesh["x"]) > r
        yield {
            "x": mesh["x"][keep],
            "w": mesh["cellvol"],
            "chi": mesh["chi"][keep],
            "grad_chi": mesh["grad_chi"][keep],
            "sq": mesh["sqrt_det"][keep],
        }


def _manifold_patches(M, flags, densities, quad, support=None):
    """Per-flag single-chart meshes (finer flags carved out of coarser ones)."""
    for i, ((c, r, s), q_eff) in enumerate(zip(flags, densities)):
        if support is not None and float(M.distance(c, support[0])) > r + support[1]:
            continue
        r = min(r, 0.95 * M.rho_max)
        xi, w = _ball_lattice(M.dim, r, q_eff)
        x = M.exp(c, xi, check=False)
        keep = np.ones(len(x), dtype=bool)
        for (c2, r2, s2) in flags[:i]:
            keep &= M.distance(c2, x) > r2
        yield {
            "x": x[keep],
            "w": w,
            "sq": M.sqrt_det_g(np.linalg.norm(xi[keep], axis=-1)),
        }


def _count_base_nodes(A, quad):
    M = A.M
    if M.kind == "torus":
        return int(np.ceil(2 * np.pi * quad.density)) ** M.dim
    n_axis = int(np.ceil(2.0 * A.rho * quad.density))
    per = int(n_axis ** M.dim * 0.55) + 1
    return per * A.n_charts


def integrate(A, f, quad=None):
    """Chart-sum integral of a manifold field over M."""
    return _integrate_pointfun(A, f.values, f.flags, quad, support=f.support)


def _integrate_pointfun(A, fn, flags, quad, support=None):
    quad = quad or QuadratureSpec()
    flags = merge_m(A.M, _active_flags(flags, quad))
    densities = _patch_plan(flags, quad, _count_base_nodes(A, quad), A.M.dim)
    total = 0.0
    for piece in _manifold_base_nodes(A, flags, quad, support=support):
        if len(piece["x"]) == 0:
            continue
        vals = fn(piece["x"])
        if piece["chi"] is None:
            total += float(np.sum(vals)) * piece["w"]
        else:
            total += float(np.sum(vals * piece["chi"] * piece["sq"])) * piece["w"]
    for patch in _manifold_patches(A.M, flags, densities, quad, support=support):
        if len(patch["x"]) == 0:
            continue
        total += float(np.sum(fn(patch["x"]) * patch["sq"])) * patch["w"]
    return total


def merge_m(M, flags):
    return _merge_mflags(M, flags, min_scale=-np.inf)


def lp_norm(A, f, p, quad=None):
    """(integral of |f|^p over M)^(1/p)."""
    val = _integrate_pointfun(
        A, lambda x: np.abs(f.values(x)) ** p, f.flags, quad, support=f.support
    )
    return max(val, 0.0) ** (1.0 / p)


def _support_intersection(M, u, v):
    # a chart matters for a product only where both factors live
    su, sv = getattr(u, "support", None), getattr(v, "support", None)
    if su is None:
        return sv
    if sv is None:
        return su
    return su if su[1] <= sv[1] else sv


def h12_inner(A, u, v, quad=None):
    """Sum over charts of int [ <grad(chi_s u), grad v> + chi_s u v ] sqrt(g).

    The metric contraction of chart gradients is evaluated through the
    ambient-tangent identity, which is exact for both model manifolds.
    """
    quad = quad or QuadratureSpec()
    support = _support_intersection(A.M, u, v)
    flags = merge_m(A.M, _active_flags(tuple(u.flags) + tuple(v.flags), quad))
    densities = _patch_plan(flags, quad, _count_base_nodes(A, quad), A.M.dim)
    total = 0.0
    for piece in _manifold_base_nodes(A, flags, quad, support=support):
        x = piece["x"]
        if len(x) == 0:
            continue
        uv, gu = u.values(x), u.grads(x)
        vv, gv = v.values(x), v.grads(x)
        if piece["chi"] is None:
            total += float(np.sum(np.sum(gu * gv, axis=-1) + uv * vv)) * piece["w"]
        else:
            chi, gchi, sq = piece["chi"], piece["grad_chi"], piece["sq"]
            gcu = chi[:, None] * gu + uv[:, None] * gchi  # grad of (chi_s u)
            total += (
                float(np.sum((np.sum(gcu * gv, axis=-1) + chi * uv * vv) * sq))
                * piece["w"]
            )
    for patch in _manifold_patches(A.M, flags, densities, quad, support=support):
        x = patch["x"]
        if len(x) == 0:
            continue
        uv, gu = u.values(x), u.grads(x)
        vv, gv = v.values(x), v.grads(x)
        total += float(np.sum((np.sum(gu * gv, axis=-1) + uv * vv) * patch["sq"])) * patch["w"]
    return total


def h12_norm(A, u, quad=None):
    return max(h12_inner(A, u, u, quad), 0.0) ** 0.5


# ----- chart-plane integration


def euclid_mesh(center, radius, flags, quad):
    """Mesh over a support ball with flagged balls refined; (points, weights)."""
    center = np.asarray(center, dtype=float)
    dim = len(center)
    flags = merge_flags(list(_active_flags(flags, quad)), min_scale=quad.min_refine_scale)
    base_pts, base_w = _ball_lattice(dim, radius, quad.density)
    base_pts = base_pts + center
    keep = np.ones(len(base_pts), dtype=bool)
    for c, r, s in flags:
        keep &= np.linalg.norm(base_pts - c, axis=-1) > r
    pts = [base_pts[keep]]
    wts = [np.full(int(keep.sum()), base_w)]
    densities = _patch_plan(flags, quad, len(base_pts), dim)
    for i, ((c, r, s), q_eff) in enumerate(zip(flags, densities)):
        # the integration domain is the support ball: skip and clip outside it
        if np.linalg.norm(np.asarray(c, dtype=float) - center) > r + radius:
            continue
        p, w = _ball_lattice(dim, r, q_eff)
        p = p + np.asarray(c, dtype=float)
        k2 = np.linalg.norm(p - center, axis=-1) <= radius
        for c2, r2, s2 in flags[:i]:
            k2 &= np.linalg.norm(p - c2, axis=-1) > r2
        pts.append(p[k2])
        wts.append(np.full(int(k2.sum()), w))
    return np.concatenate(pts, axis=0), np.concatenate(wts)


def euclid_integral(fn, center, radius, flags, quad=None):
    quad = quad or QuadratureSpec()
    pts, wts = euclid_mesh(center, radius, flags, quad)
    if len(pts) == 0:
        return 0.0
    return float(np.sum(fn(pts) * wts))


def lp_norm_e(w, p, quad=None):
    val = euclid_integral(
        lambda z: np.abs(w.values(z)) ** p, w.center, w.radius, w.flags, quad
    )
    return max(val, 0.0) ** (1.0 / p)


def h1_energy_e(w, quad=None):
    """int |grad w|^2 over R^N."""
    return euclid_integral(
        lambda z: np.sum(w.grads(z) ** 2, axis=-1), w.center, w.radius, w.flags, quad
    )


def h12_inner_e(u, v, quad=None):
    """Full H^1 inner product on R^N (gradient + mass), over the tighter support."""
    if u.radius <= v.radius:
        host = u
    else:
        host = v
    flags = tuple(u.flags) + tuple(v.flags)
    return euclid_integral(
        lambda z: np.sum(u.grads(z) * v.grads(z), axis=-1) + u.values(z) * v.values(z),
        host.center,
        host.radius,
        flags,
        quad,
    )


def pair_with_test(v, phi, quad=None):
    """int phi * v over the test function's support."""
    flags = tuple(v.flags) + tuple(phi.flags)
    return euclid_integral(
        lambda z: phi.values(z) * v.values(z), phi.center, phi.radius, flags, quad
    )


def grad_energy_by_radius(w, radii, quad=None, center=None):
    """Cumulative gradient energy inside |z - center| < radii[i]."""
    quad = quad or QuadratureSpec()
    center = w.center if center is None else np.asarray(center, dtype=float)
    radii = np.asarray(radii, dtype=float)
    pts, wts = euclid_mesh(center, float(radii.max()), w.flags, quad)
    if len(pts) == 0:
        return np.zeros(len(radii))
    e = np.sum(w.grads(pts) ** 2, axis=-1) * wts
    d = np.linalg.norm(pts - center, axis=-1)
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(e[order])
    idx = np.searchsorted(d[order], radii, side="right")
    out = np.zeros(len(radii))
    pos = idx > 0
    out[pos] = cum[idx[pos] - 1]
    return out
