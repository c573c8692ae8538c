import numpy as np
import pytest
from scipy import integrate as sint

from bubbledecomp.errors import NodeBudgetError, UsageError
from bubbledecomp.field import (
    AffineE,
    LinearMapE,
    QuadratureSpec,
    SmoothM,
    SumE,
    ZeroE,
    euclid_integral,
    grad_energy_by_radius,
    h1_energy_e,
    h12_inner,
    h12_inner_e,
    h12_norm,
    integrate,
    lp_norm,
    lp_norm_e,
    merge_flags,
    pair_with_test,
)
from bubbledecomp.synth import bump_profile, critical_profile

# frozen reference values for the canonical truncated profile (radius 8,
# taper 0.25); re-derived against 1-d adaptive quadrature below
GRAD_ENERGY = 27.987372092411338
L2_SQ = 116.65069510781281
R_HALF = 6.726392165639


def radial_oracle(w, integrand, hi):
    """Adaptive 1-d quadrature of 4*pi*t^2*integrand(t) against w.h/w.hprime."""
    val, err = sint.quad(lambda t: 4.0 * np.pi * t * t * integrand(t), 0.0, hi, limit=400)
    assert err < 1e-6 * max(abs(val), 1.0)
    return val


# ---------------------------------------------------------------------- euclid


def test_critical_profile_grad_energy_matches_radial_quadrature():
    w = critical_profile()
    oracle = radial_oracle(w, lambda t: w.hprime(np.array([t]))[0] ** 2, 8.0)
    assert abs(oracle - GRAD_ENERGY) <= 1e-8
    e = h1_energy_e(w, QuadratureSpec(density=8))
    assert abs(e - oracle) <= 1e-5 * oracle


def test_critical_profile_mass_and_critical_norm():
    w = critical_profile()
    m2 = radial_oracle(w, lambda t: w.h(np.array([t]))[0] ** 2, 8.0)
    m6 = radial_oracle(w, lambda t: w.h(np.array([t]))[0] ** 6, 8.0)
    assert abs(m2 - L2_SQ) <= 1e-8
    q = QuadratureSpec(density=8)
    assert abs(lp_norm_e(w, 2, q) ** 2 - m2) <= 1e-4 * m2
    assert abs(lp_norm_e(w, 6, q) - m6 ** (1.0 / 6.0)) <= 1e-6 * m6 ** (1.0 / 6.0)


def test_h12_inner_e_splits_into_energy_plus_mass():
    w = critical_profile()
    q = QuadratureSpec(density=6)
    whole = h12_inner_e(w, w, q)
    split = h1_energy_e(w, q) + lp_norm_e(w, 2, q) ** 2
    assert abs(whole - split) <= 1e-10 * abs(whole)


def test_grad_energy_by_radius_matches_cumulative_oracle():
    w = critical_profile()
    radii = np.array([2.0, R_HALF, 8.0])
    got = grad_energy_by_radius(w, radii, QuadratureSpec(density=8))
    for r, g in zip(radii, got):
        cum = radial_oracle(w, lambda t: w.hprime(np.array([t]))[0] ** 2, r)
        assert abs(g - cum) <= 1e-3 * GRAD_ENERGY
    # R_HALF is the half-energy radius of this profile
    assert abs(got[1] / got[2] - 0.5) <= 2e-3


def test_dilation_invariance_is_exact_on_matched_lattices():
    # 2^(j r) w(2^j z) preserves the critical Lp norm and the gradient energy;
    # with density scaled by 2^j the meshes map node-for-node, so the computed
    # values agree to the last bit (powers of two are exact).
    w = critical_profile()
    base = QuadratureSpec(density=4, refine=False)
    for j in (1.0, 3.0):
        fine = QuadratureSpec(density=4 * 2.0 ** j, refine=False)
        v = AffineE(w, j)
        a, b = lp_norm_e(w, 6, base), lp_norm_e(v, 6, fine)
        assert abs(a - b) <= 1e-14 * a
        ea, eb = h1_energy_e(w, base), h1_energy_e(v, fine)
        assert abs(ea - eb) <= 1e-14 * ea


def test_pair_with_test_matches_product_oracle():
    w = critical_profile()
    phi = bump_profile(radius=1.0)

    def prod(t):
        return w.h(np.array([t]))[0] * phi.h(np.array([t]))[0]

    oracle, err = sint.quad(lambda t: 4 * np.pi * t * t * prod(t), 0.0, 1.0)
    got = pair_with_test(w, phi, QuadratureSpec(density=16))
    assert abs(got - oracle) <= 1e-4 * abs(oracle)


def test_refinement_flags_are_load_bearing():
    # a scale-4 feature under a density-3 base mesh: hopeless without patch
    # refinement, accurate with it
    fine = AffineE(critical_profile(), 4.0)
    good = h1_energy_e(fine, QuadratureSpec(density=3, refine=True))
    bad = h1_energy_e(fine, QuadratureSpec(density=3, refine=False))
    assert abs(good - GRAD_ENERGY) <= 1e-3 * GRAD_ENERGY
    assert abs(bad - GRAD_ENERGY) >= 0.1 * GRAD_ENERGY


def test_node_budget_error_and_graceful_shrink():
    w = critical_profile()
    with pytest.raises(NodeBudgetError) as info:
        h1_energy_e(w, QuadratureSpec(density=8, node_budget=1000))
    assert info.value.requested > info.value.budget == 1000
    # over-budget patches shrink instead of failing, with small drift
    fine = AffineE(w, 4.0)
    full = h1_energy_e(fine, QuadratureSpec(density=6))
    tight = h1_energy_e(fine, QuadratureSpec(density=6, node_budget=40_000))
    assert abs(full - tight) <= 1e-2 * full


def test_sum_algebra_and_support_masking():
    rng = np.random.default_rng(3)
    w = critical_profile()
    phi = bump_profile(radius=2.0, amplitude=0.7)
    z = rng.uniform(-3, 3, size=(200, 3))
    s = 2.0 * w - phi
    assert np.allclose(s.values(z), 2 * w.values(z) - phi.values(z), atol=1e-14)
    assert np.allclose(s.grads(z), 2 * w.grads(z) - phi.grads(z), atol=1e-14)
    far = np.array([[9.0, 0.0, 0.0], [0.0, -8.5, 0.0]])
    assert np.all(w.values(far) == 0.0)
    assert np.all(w.grads(far) == 0.0)
    assert np.all((-phi).values(z) == -phi.values(z))
    zero = ZeroE(3)
    assert np.all(zero.values(z) == 0.0)
    assert isinstance(w + phi, SumE)


def test_affine_flag_bookkeeping():
    w = critical_profile()  # no flags of its own
    v = AffineE(w, 3.0, np.array([0.5, 0.0, -0.25]))
    assert len(v.flags) == 1
    c, r, s = v.flags[0]
    assert np.allclose(c, v.center)
    assert abs(r - 1.0) <= 1e-12  # 8 / 2^3
    assert abs(s - 3.0) <= 1e-12
    # flags of a flagged base transform; no auto-flag gets added
    vv = AffineE(v, 2.0)
    assert len(vv.flags) == 1
    c2, r2, s2 = vv.flags[0]
    assert abs(r2 - 0.25) <= 1e-12
    assert abs(s2 - 5.0) <= 1e-12
    assert np.allclose(c2, c / 4.0)


def test_linear_map_values_and_grads():
    w = critical_profile()
    A = np.array([[0.9, 0.1, 0.0], [-0.1, 1.1, 0.05], [0.0, 0.0, 0.8]])
    v = LinearMapE(w, A)
    rng = np.random.default_rng(5)
    z = rng.uniform(-2, 2, size=(100, 3))
    assert np.allclose(v.values(z), w.values(z @ A.T), atol=1e-13)
    assert np.allclose(v.grads(z), w.grads(z @ A.T) @ A, atol=1e-13)


def test_merge_flags_dedup_and_cap():
    a = (np.zeros(3), 1.0, 4.0)
    a2 = (np.full(3, 0.01), 1.05, 4.1)  # same blob, slightly moved
    b = (np.array([3.0, 0, 0]), 0.5, 6.0)
    merged = merge_flags([a, a2, b])
    assert len(merged) == 2
    assert merged[0][2] == 6.0  # finest first
    many = [(np.array([float(i), 0, 0]), 0.3, 2.0) for i in range(100)]
    assert len(merge_flags(many, cap=64)) == 64


# -------------------------------------------------------------------- manifold


def const_one(M):
    return SmoothM(M, lambda x: np.ones(len(x)), lambda x: np.zeros_like(x))


def test_torus_volume_exact(torus_atlas):
    vol = integrate(torus_atlas, const_one(torus_atlas.M), QuadratureSpec(density=3))
    assert abs(vol - (2 * np.pi) ** 3) <= 1e-12 * (2 * np.pi) ** 3


def test_sphere_volume(sphere_atlas):
    vol = integrate(sphere_atlas, const_one(sphere_atlas.M), QuadratureSpec(density=6))
    assert abs(vol - 2 * np.pi ** 2) <= 5e-4 * 2 * np.pi ** 2


def trig_field(M, which=0):
    if which == 0:
        def fn(x):
            return np.sin(x[:, 0])

        def gfn(x):
            g = np.zeros_like(x)
            g[:, 0] = np.cos(x[:, 0])
            return g
    else:
        def fn(x):
            return np.cos(x[:, 0]) * np.sin(2 * x[:, 1])

        def gfn(x):
            g = np.zeros_like(x)
            g[:, 0] = -np.sin(x[:, 0]) * np.sin(2 * x[:, 1])
            g[:, 1] = 2 * np.cos(x[:, 0]) * np.cos(2 * x[:, 1])
            return g
    return SmoothM(M, fn, gfn)


def test_torus_chart_sum_collapses_to_global_lattice(torus_atlas):
    # the partition of unity telescopes node-for-node on the shared lattice,
    # so the chart-sum integral IS the plain lattice sum
    T = torus_atlas.M
    f = trig_field(T, 1)
    q = QuadratureSpec(density=4)
    got = integrate(torus_atlas, f, q)
    nodes, h = torus_atlas.global_lattice(q.density)
    plain = float(np.sum(f.values(nodes))) * h ** 3
    assert abs(got - plain) <= 1e-13 * max(abs(plain), 1.0)


def test_torus_h12_trig_closed_forms(torus_atlas):
    T = torus_atlas.M
    q = QuadratureSpec(density=4)
    u = trig_field(T, 0)
    # int cos^2 + int sin^2 = (2pi)^3; the lattice sums are alias-free
    vol = (2 * np.pi) ** 3
    assert abs(h12_inner(torus_atlas, u, u, q) - vol) <= 1e-10 * vol
    v = trig_field(T, 1)
    # cross terms integrate to zero frequency by frequency
    assert abs(h12_inner(torus_atlas, u, v, q)) <= 1e-10 * vol
    assert abs(h12_norm(torus_atlas, u, q) - vol ** 0.5) <= 1e-10 * vol ** 0.5


def test_torus_h12_symmetry_exact(torus_atlas):
    q = QuadratureSpec(density=4)
    u = trig_field(torus_atlas.M, 0) + 0.3 * trig_field(torus_atlas.M, 1)
    v = trig_field(torus_atlas.M, 1)
    a = h12_inner(torus_atlas, u, v, q)
    b = h12_inner(torus_atlas, v, u, q)
    assert abs(a - b) <= 1e-12 * max(abs(a), 1.0)


def coord_field(S, i):
    def fn(x):
        return x[:, i]

    def gfn(x):
        e = np.zeros(x.shape[1])
        e[i] = 1.0
        return e[None, :] - x[:, i][:, None] * x

    return SmoothM(S, fn, gfn)


def test_sphere_h12_ambient_coordinate_closed_form(sphere_atlas):
    # restricted ambient coordinates are Laplace eigenfunctions with
    # eigenvalue N, and the four of them split the volume evenly:
    # h12(x_i, x_i) = (N + 1) * vol / (N + 1) = vol/4 * (3 + 1) = 2 pi^2
    q = QuadratureSpec(density=6)
    u0 = coord_field(sphere_atlas.M, 0)
    u1 = coord_field(sphere_atlas.M, 1)
    diag = h12_inner(sphere_atlas, u0, u0, q)
    assert abs(diag - 2 * np.pi ** 2) <= 1e-3 * 2 * np.pi ** 2
    cross = h12_inner(sphere_atlas, u0, u1, q)
    assert abs(cross) <= 1e-3 * diag
    asym = abs(cross - h12_inner(sphere_atlas, u1, u0, q))
    assert asym <= 2e-3 * diag


def test_lp_norm_on_manifold(torus_atlas):
    # int sin^2 = vol/2, int sin^6 = vol * 5/16
    u = trig_field(torus_atlas.M, 0)
    q = QuadratureSpec(density=4)
    vol = (2 * np.pi) ** 3
    assert abs(lp_norm(torus_atlas, u, 2, q) - (vol / 2) ** 0.5) <= 1e-10
    assert abs(lp_norm(torus_atlas, u, 6, q) - (vol * 5 / 16) ** (1 / 6.0)) <= 1e-10


def test_declared_support_prunes_charts_consistently(sphere_atlas):
    # a field that truly lives in a small cap integrates identically whether
    # or not its support hint lets charts be skipped
    S = sphere_atlas.M
    c = np.array([0.0, 0.0, 0.0, 1.0])

    def fn(x):
        d = S.distance(c, x)
        s = np.clip(d / 0.5, 0.0, 1.0)
        return 1.0 - s * s * s * (s * (6 * s - 15) + 10)

    def gfn(x):
        d = S.distance(c, x)
        s = np.clip(d / 0.5, 0.0, 1.0)
        dh = np.where((s > 0) & (s < 1), -30.0 * s * s * (1 - s) ** 2 / 0.5, 0.0)
        sd = np.maximum(np.sin(d), 1e-12)
        gd = -(c[None, :] - np.cos(d)[:, None] * x) / sd[:, None]
        return dh[:, None] * gd

    free = SmoothM(S, fn, gfn)
    hinted = SmoothM(S, fn, gfn)
    hinted.support = (c, 0.6)
    q = QuadratureSpec(density=6)
    a = integrate(sphere_atlas, free, q)
    b = integrate(sphere_atlas, hinted, q)
    assert abs(a - b) <= 1e-12 * max(abs(a), 1e-12)
