"""Critical rescalings between manifold fields and chart-plane profiles.

The two directions:

* ``deflate(u, y, j)`` — zoom into u at center y and scale 2^-j:
  v(zeta) = 2^(-j r) (u o exp_y)(2^-j zeta), a chart-plane field.
* ``synthesize_bubble(M, w, y, j, cutoff)`` — the cut-off reinflation
  2^(j r) X(|log_y x|) w(2^j log_y x), a manifold field.

r = (N-2)/2 throughout, so both maps preserve the gradient energy in the
zoom limit.  ``chart_shift_consistency`` pairs a test function against the
gap between deflating through exp_z with an in-chart offset and deflating at
the moved center through the transition derivative — identically zero on the
torus, O(2^-j) on the sphere.
"""

import numpy as np

from .errors import DomainError, UsageError
from .field import AffineE, FieldE, FieldM, LinearMapE, critical_r, euclid_integral, merge_flags
from .geometry import transition_jacobian

__all__ = [
    "DeflatedE",
    "BubbleM",
    "PullbackM",
    "deflate",
    "synthesize_bubble",
    "chart_shift_consistency",
    "chart_shift_curve",
]


class DeflatedE(FieldE):
    """Deflation of a manifold field: 2^(-j r) (u o exp_y)(2^-j zeta)."""

    def __init__(self, u, y, j, domain=None):
        M = u.M
        self.u = u
        self.y = np.asarray(y, dtype=float)
        self.j = float(j)
        self.domain = float(domain) if domain is not None else 0.9 * M.rho_max
        lam = 2.0 ** self.j
        self._lam = lam
        self._amp = lam ** (-critical_r(M.dim))

        radius = lam * self.domain
        center = np.zeros(M.dim)
        if u.support is not None:
            c_u, r_u = u.support
            d = float(M.distance(self.y, c_u))
            radius = min(radius, lam * min(self.domain, d + r_u))
        flags = []
        for c_f, r_f, s_f in u.flags:
            d = float(M.distance(self.y, c_f))
            if d >= self.domain:
                continue
            xi_f = M.log(self.y, c_f, check=False).ravel()
            if M.kind == "sphere":
                pad = min(3.0, max(1.0, d / max(np.sin(d), 1e-9)))
            else:
                pad = 1.0
            flags.append((lam * xi_f, lam * r_f * pad, s_f - self.j))
        super().__init__(
            M.dim,
            center,
            radius,
            finest_scale=u.finest_scale - self.j,
            flags=flags,
        )

    def _values(self, z):
        xi = z / self._lam
        inside = np.linalg.norm(xi, axis=-1) < self.domain
        out = np.zeros(len(z))
        if np.any(inside):
            x = self.u.M.exp(self.y, xi[inside], check=False)
            out[inside] = self._amp * self.u.values(x)
        return out

    def _grads(self, z):
        xi = z / self._lam
        inside = np.linalg.norm(xi, axis=-1) < self.domain
        out = np.zeros_like(z)
        if np.any(inside):
            M = self.u.M
            x = M.exp(self.y, xi[inside], check=False)
            gu = self.u.grads(x)
            J = M.dexp(self.y, xi[inside])  # (m, amb, N)
            out[inside] = (self._amp / self._lam) * np.einsum("maj,ma->mj", J, gu)
        return out


def deflate(u, y, j, domain=None):
    """Zoom of a manifold field at (y, j); returns a chart-plane field."""
    if not isinstance(u, FieldM):
        raise UsageError("deflate expects a manifold field")
    return DeflatedE(u, y, j, domain=domain)


class BubbleM(FieldM):
    """Cut-off reinflation 2^(j r) X(|log_y x|) w(2^j log_y x)."""

    def __init__(self, M, w, y, j, cutoff):
        self.w = w
        self.y = np.asarray(y, dtype=float)
        self.j = float(j)
        self.cutoff = cutoff
        lam = 2.0 ** self.j
        self._lam = lam
        self._amp = lam ** critical_r(M.dim)
        reach = (float(np.linalg.norm(w.center)) + w.radius) / lam
        radius = min(cutoff.rho, reach)
        flags = []
        for c_f, r_f, s_f in w.flags:
            t = np.linalg.norm(c_f) / lam
            if t >= 0.98 * M.rho_max:
                continue
            yf = M.exp(self.y, np.asarray(c_f, dtype=float) / lam, check=False)
            flags.append((np.asarray(yf).ravel(), min(r_f / lam, 0.95 * M.rho_max), s_f + self.j))
        if not flags:
            flags = [(self.y, radius, self.j + w.finest_scale)]
        super().__init__(
            M,
            support=(self.y, radius),
            finest_scale=w.finest_scale + self.j,
            flags=flags,
        )

    def _values(self, x):
        M = self.M
        xi = M.log(self.y, x, check=False)
        t = np.linalg.norm(xi, axis=-1)
        return self._amp * self.cutoff.value(t) * self.w.values(self._lam * xi)

    def _grads(self, x):
        M = self.M
        x = np.atleast_2d(x)
        xi = M.log(self.y, x, check=False)
        t = np.linalg.norm(xi, axis=-1)
        wv = self.w.values(self._lam * xi)
        gw = self.w.grads(self._lam * xi)
        # radial unit tangent at x pointing away from y
        if M.kind == "torus":
            rad = M.reduce(x - self.y) / np.maximum(t, 1e-300)[:, None]
        else:
            q = np.cos(t)
            rad = -(self.y - q[:, None] * x) / np.maximum(np.sin(t), 1e-300)[:, None]
        Jl = M.dlog(self.y, x)  # (m, N, amb)
        chain = np.einsum("mia,mi->ma", Jl, gw)
        chi = self.cutoff.value(t)
        dchi = self.cutoff.dvalue(t)
        return self._amp * (
            (dchi * wv)[:, None] * rad + (self._lam * chi)[:, None] * chain
        )


def synthesize_bubble(M, w, y, j, cutoff):
    """Manifold bubble with profile w, center y, scale j, and chart cutoff X."""
    if not isinstance(w, FieldE):
        raise UsageError("synthesize_bubble expects a chart-plane profile")
    return BubbleM(M, w, y, j, cutoff)


class PullbackM(FieldM):
    """Chart-plane field read through a normal chart: fe(log_z(x)), zero far away."""

    def __init__(self, M, fe, z, domain=None):
        self.fe = fe
        self.z = np.asarray(z, dtype=float)
        self.domain = float(domain) if domain is not None else 0.9 * M.rho_max
        reach = min(self.domain, float(np.linalg.norm(fe.center)) + fe.radius)
        flags = []
        for c_f, r_f, s_f in fe.flags:
            if np.linalg.norm(c_f) >= self.domain:
                continue
            yf = M.exp(self.z, np.asarray(c_f, dtype=float), check=False)
            flags.append((np.asarray(yf).ravel(), min(r_f, 0.95 * M.rho_max), s_f))
        super().__init__(
            M, support=(self.z, reach), finest_scale=fe.finest_scale, flags=flags
        )

    def _values(self, x):
        xi = self.M.log(self.z, x, check=False)
        return self.fe.values(xi)

    def _grads(self, x):
        xi = self.M.log(self.z, x, check=False)
        g = self.fe.grads(xi)
        Jl = self.M.dlog(self.z, x)
        return np.einsum("mia,mi->ma", Jl, g)


# ---------------------------------------------------------------------------
# chart-shift consistency


def chart_shift_consistency(u, z, xi, j, phi, atlas=None, quad=None):
    """|int phi(zeta) * 2^(-jr) [u(exp_z(2^-j zeta + xi)) - u(exp_y(2^-j P zeta))] dzeta|.

    Here y = exp_z(xi) and P is the derivative at xi of the transition map
    log_y o exp_z, so both terms describe the same window of u through two
    chart centers.  On the flat torus P is the identity and the two terms
    collapse pointwise, so the value is exactly zero; on the sphere the
    second-order mismatch of the two charts leaves an O(2^-j) pairing gap
    for fields whose gradient energy refuses to leave the window.
    """
    M = u.M
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if atlas is not None:
        if phi.radius > atlas.rho + 1e-12:
            raise UsageError("test function support exceeds the chart radius")
        if np.linalg.norm(xi) >= atlas.rho:
            raise DomainError("offset leaves the chart")
    lam = 2.0 ** float(j)
    y = np.asarray(M.exp(z, xi, check=False)).reshape(-1)
    P = transition_jacobian(M, z, y, xi)

    a_side = AffineE(deflate(u, z, j), 0.0, -lam * xi)
    b_side = LinearMapE(deflate(u, y, j), P)
    flags = merge_flags(tuple(phi.flags) + tuple(a_side.flags) + tuple(b_side.flags))

    def fn(zz):
        return phi.values(zz) * (a_side.values(zz) - b_side.values(zz))

    val = euclid_integral(fn, np.zeros(M.dim), phi.radius, flags, quad)
    return abs(float(val))


def chart_shift_curve(u, z, xi, j_values, phi, atlas=None, quad=None):
    """Chart-shift pairing gaps along a scale schedule; list of (j, value)."""
    return [
        (float(j), chart_shift_consistency(u, z, xi, j, phi, atlas=atlas, quad=quad))
        for j in j_values
    ]
