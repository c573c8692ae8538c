"""Synthetic instances: canonical profiles, weak limits, oscillations, plants.

A plant is a sequence u_k = u + sum_n bubble(w_n, y_{n,k}, j_{n,k}) + o_k with
scheduled scales j_{n,k} = slope*k + offset, optional center drift
d(y_{n,k}, y_n) = drift * 2^-j, and an optional oscillation family o_k with
1/(k+1) amplitude decay (bounded in H^{1,2}, weakly null, not concentrating).
"""

import numpy as np

from .atlas import Cutoff
from .errors import ConfigError, UsageError
from .field import RadialE, SmoothE, SmoothM, SumM, ZeroM
from .rescale import synthesize_bubble

__all__ = [
    "critical_profile",
    "bump_profile",
    "lopsided_profile",
    "make_profile",
    "BubblePlant",
    "PlantSpec",
    "weak_limit_field",
    "oscillation_field",
    "planted_sequence",
    "truncation_tail_report",
]


def _taper(t, r0, r1):
    """C^2 fade from 1 below r0 to 0 above r1 (quintic smoothstep)."""
    s = np.clip((np.asarray(t, dtype=float) - r0) / (r1 - r0), 0.0, 1.0)
    return 1.0 - s * s * s * (s * (6.0 * s - 15.0) + 10.0)


def _dtaper(t, r0, r1):
    t = np.asarray(t, dtype=float)
    s = (t - r0) / (r1 - r0)
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, -30.0 * s * s * (1.0 - s) ** 2 / (r1 - r0), 0.0)


def critical_profile(dim=3, radius=8.0, taper=0.25):
    """The standard extremal decay profile, smoothly truncated at `radius`.

    Closed form (N(N-2))^((N-2)/4) (1+t^2)^(-(N-2)/2), multiplied by a C^2
    fade that starts at (1-taper)*radius.  For N = 3 the center value is
    3^(1/4) and the untruncated field solves the critical equation exactly.
    """
    if dim < 3:
        raise ConfigError("critical profile needs dim >= 3")
    p = 0.5 * (dim - 2)
    amp = (dim * (dim - 2)) ** (0.25 * (dim - 2))
    r0 = (1.0 - taper) * radius

    def h(t):
        return amp * (1.0 + t * t) ** (-p) * _taper(t, r0, radius)

    def hp(t):
        base = (1.0 + t * t) ** (-p)
        dbase = -2.0 * p * t * (1.0 + t * t) ** (-p - 1.0)
        return amp * (dbase * _taper(t, r0, radius) + base * _dtaper(t, r0, radius))

    f = RadialE(h, hp, radius, dim=dim, name="critical")
    f.params = {"kind": "critical", "dim": dim, "radius": radius, "taper": taper}
    return f


def bump_profile(radius=1.0, amplitude=1.0, dim=3):
    """Plain C^2 radial bump: amplitude at 0, zero outside `radius`."""

    def h(t):
        return amplitude * _taper(t, 0.0, radius)

    def hp(t):
        return amplitude * _dtaper(t, 0.0, radius)

    f = RadialE(h, hp, radius, dim=dim, name="bump")
    f.params = {"kind": "bump", "dim": dim, "radius": radius, "amplitude": amplitude}
    return f


def lopsided_profile(radius=1.0, amplitude=1.0, tilt=(0.8, 0.5, 0.0), dim=3):
    """Radial bump times (1 + tilt.z): a profile with no rotational symmetry.

    Rotation-blind diagnostics (anything paired against a radial profile)
    cannot see the leading rotational part of a chart change; this one can.
    """
    tilt = np.asarray(tilt, dtype=float)
    if tilt.shape != (dim,):
        raise ConfigError("tilt must have one component per dimension")
    base = bump_profile(radius=radius, amplitude=amplitude, dim=dim)

    def fn(z):
        return base.values(z) * (1.0 + z @ tilt)

    def gfn(z):
        out = base.grads(z) * (1.0 + z @ tilt)[:, None]
        return out + base.values(z)[:, None] * tilt[None, :]

    f = SmoothE(dim, fn, gfn, np.zeros(dim), radius)
    f.params = {
        "kind": "lopsided",
        "dim": dim,
        "radius": radius,
        "amplitude": amplitude,
        "tilt": [float(t) for t in tilt],
    }
    return f


def make_profile(kind, dim=3, **params):
    if kind == "critical":
        return critical_profile(dim=dim, **params)
    if kind == "bump":
        return bump_profile(dim=dim, **params)
    if kind == "lopsided":
        return lopsided_profile(dim=dim, **params)
    raise ConfigError("unknown profile kind %r" % kind)


def truncation_tail_report(dim=3, radius=8.0, n_grid=200_000):
    """Measured mass fractions outside the truncation radius (1-d quadrature)."""
    p = 0.5 * (dim - 2)
    two_star = 2.0 * dim / (dim - 2.0)
    t_in = np.linspace(0.0, radius, n_grid)
    t_out = radius / np.linspace(1.0, 1e-4, n_grid)  # maps to [radius, inf)

    def shell(t):
        return t ** (dim - 1)

    def grad2(t):
        return (2.0 * p * t * (1.0 + t * t) ** (-p - 1.0)) ** 2

    def mass(t):
        return (1.0 + t * t) ** (-p * two_star)

    def trapz(fn, t):
        y = fn(t) * shell(t)
        return float(np.trapezoid(y, t))

    g_in, g_out = trapz(grad2, t_in), trapz(grad2, np.sort(t_out))
    m_in, m_out = trapz(mass, t_in), trapz(mass, np.sort(t_out))
    return {
        "grad_tail_fraction": g_out / (g_in + g_out),
        "critical_mass_tail_fraction": m_out / (m_in + m_out),
        "radius": float(radius),
    }


# ---------------------------------------------------------------------------
# plant specification


class BubblePlant:
    def __init__(
        self,
        center,
        slope=1.0,
        offset=2.0,
        profile="critical",
        profile_radius=8.0,
        amplitude=1.0,
        drift=0.0,
        drift_axis=0,
    ):
        self.center = np.asarray(center, dtype=float)
        self.slope = float(slope)
        self.offset = float(offset)
        self.profile = str(profile)
        self.profile_radius = float(profile_radius)
        self.amplitude = float(amplitude)
        self.drift = float(drift)
        self.drift_axis = int(drift_axis)

    def scale_at(self, k):
        return self.slope * k + self.offset

    def to_dict(self):
        return {
            "center": [float(c) for c in self.center],
            "slope": self.slope,
            "offset": self.offset,
            "profile": self.profile,
            "profile_radius": self.profile_radius,
            "amplitude": self.amplitude,
            "drift": self.drift,
            "drift_axis": self.drift_axis,
        }


class PlantSpec:
    def __init__(
        self,
        kind="torus",
        dim=3,
        k_count=8,
        bubbles=(),
        weak_limit="none",
        weak_amplitude=0.0,
        osc_amplitude=0.0,
        osc_freq0=4,
    ):
        self.kind = kind
        self.dim = int(dim)
        self.k_count = int(k_count)
        self.bubbles = list(bubbles)
        self.weak_limit = str(weak_limit)
        self.weak_amplitude = float(weak_amplitude)
        self.osc_amplitude = float(osc_amplitude)
        self.osc_freq0 = int(osc_freq0)

    def to_dict(self):
        return {
            "kind": self.kind,
            "dim": self.dim,
            "k_count": self.k_count,
            "weak_limit": self.weak_limit,
            "weak_amplitude": self.weak_amplitude,
            "osc_amplitude": self.osc_amplitude,
            "osc_freq0": self.osc_freq0,
            "bubbles": [b.to_dict() for b in self.bubbles],
        }


def weak_limit_field(M, spec):
    a = spec.weak_amplitude
    if spec.weak_limit == "none" or a == 0.0:
        return ZeroM(M)
    if spec.weak_limit == "linear":
        if M.kind != "sphere":
            raise ConfigError("linear weak limit lives on the sphere")
        e = np.zeros(M.amb_dim)
        e[0] = 1.0

        def fn(x):
            return a * x[:, 0]

        def gfn(x):
            return a * (e[None, :] - x[:, 0][:, None] * x)

        return SmoothM(M, fn, gfn, finest_scale=0.0)
    if spec.weak_limit == "trig":
        if M.kind != "torus":
            raise ConfigError("trig weak limit lives on the torus")

        def fn(x):
            return a * (np.cos(x[:, 0]) + 0.6 * np.sin(x[:, 1]) * np.cos(x[:, 2]))

        def gfn(x):
            g = np.zeros_like(x)
            g[:, 0] = -a * np.sin(x[:, 0])
            g[:, 1] = 0.6 * a * np.cos(x[:, 1]) * np.cos(x[:, 2])
            g[:, 2] = -0.6 * a * np.sin(x[:, 1]) * np.sin(x[:, 2])
            return g

        return SmoothM(M, fn, gfn, finest_scale=0.0)
    raise ConfigError("unknown weak limit kind %r" % spec.weak_limit)


def oscillation_field(M, spec, k):
    """Weakly null, H^1-bounded, non-concentrating: amplitude ~ 1/(k+1),
    frequency ~ (k+1), so the windowed gradient energy stays O(1) while every
    deflated capture dies."""
    a = spec.osc_amplitude / (k + 1.0)
    f = float(spec.osc_freq0 * (k + 1))
    if a == 0.0:
        return ZeroM(M)
    if M.kind == "torus":

        def fn(x):
            return a * np.sin(f * x[:, 0])

        def gfn(x):
            g = np.zeros_like(x)
            g[:, 0] = a * f * np.cos(f * x[:, 0])
            return g

    else:
        e = np.zeros(M.amb_dim)
        e[0] = 1.0

        def fn(x):
            return a * np.sin(f * x[:, 0])

        def gfn(x):
            return (a * f * np.cos(f * x[:, 0]))[:, None] * (
                e[None, :] - x[:, 0][:, None] * x
            )

    return SmoothM(M, fn, gfn, finest_scale=max(0.0, float(np.log2(max(f, 1.0)))))


def bubble_center_at(M, plant, k):
    y = plant.center
    if plant.drift == 0.0:
        return np.asarray(y, dtype=float)
    step = np.zeros(M.dim)
    step[plant.drift_axis] = plant.drift * 2.0 ** (-plant.scale_at(k))
    return np.asarray(M.exp(y, step, check=False)).ravel()


def _validate_plant(M, spec):
    for b in spec.bubbles:
        if b.slope < 0:
            raise UsageError("bubble scales must be nondecreasing in k")
    for i in range(len(spec.bubbles)):
        for l in range(i + 1, len(spec.bubbles)):
            bi, bl = spec.bubbles[i], spec.bubbles[l]
            d = float(M.distance(bi.center, bl.center))
            if d < 0.05 and abs(bi.slope - bl.slope) < 1e-12:
                raise UsageError(
                    "inconsistent plant: bubbles %d and %d share a center with a "
                    "bounded scale offset; their separation functional stays bounded" % (i, l)
                )


def planted_sequence(M, spec, cutoff=None):
    """Build the field sequence and its ground-truth description.

    Returns (fields, truth) where fields is a list of k_count manifold fields
    and truth records the planted weak limit, bubble tracks, and oscillation.
    """
    if M.kind != spec.kind or M.dim != spec.dim:
        raise UsageError("manifold does not match the plant spec")
    _validate_plant(M, spec)
    cutoff = cutoff or Cutoff(0.3 * M.rho_max)
    u = weak_limit_field(M, spec)
    profiles = [
        make_profile(
            b.profile,
            dim=spec.dim,
            radius=b.profile_radius,
            **({"amplitude": b.amplitude} if b.profile == "bump" else {}),
        )
        for b in spec.bubbles
    ]
    fields = []
    for k in range(spec.k_count):
        parts = [(1.0, u)]
        for b, w in zip(spec.bubbles, profiles):
            yk = bubble_center_at(M, b, k)
            parts.append((1.0, synthesize_bubble(M, w, yk, b.scale_at(k), cutoff)))
        parts.append((1.0, oscillation_field(M, spec, k)))
        fields.append(SumM.of(*parts))
    truth = {
        "spec": spec.to_dict(),
        "cutoff_rho": cutoff.rho,
        "bubbles": [
            {
                "profile": profiles[i].params,
                "centers": [
                    [float(c) for c in bubble_center_at(M, b, k)]
                    for k in range(spec.k_count)
                ],
                "scales": [float(b.scale_at(k)) for k in range(spec.k_count)],
            }
            for i, b in enumerate(spec.bubbles)
        ],
    }
    return fields, truth
