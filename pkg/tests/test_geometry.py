import numpy as np
import pytest

from bubbledecomp.errors import ConfigError, DomainError
from bubbledecomp.geometry import (
    FlatTorus,
    Sphere,
    exp_map,
    geodesic_distance,
    log_map,
    make_manifold,
    mean_point,
    metric_in_chart,
    transition_jacobian,
    transition_point,
)


def random_chart_vectors(rng, m, dim, rmax):
    v = rng.standard_normal((m, dim))
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return v * rng.uniform(0.01, rmax, size=(m, 1))


# ----------------------------------------------------------------- sphere


def test_sphere_exp_closed_form():
    # oracle: great-circle formula at the first ambient axis
    S = Sphere(3)
    y = np.array([1.0, 0.0, 0.0, 0.0])
    for t in (0.0, 0.3, 1.2, 2.9):
        x = exp_map(S, y, np.array([t, 0.0, 0.0]))
        expect = np.array([np.cos(t), np.sin(t), 0.0, 0.0])
        np.testing.assert_allclose(x.ravel(), expect, atol=1e-14)


def test_sphere_frame_orthonormal():
    for dim in (3, 4, 5):
        S = Sphere(dim)
        rng = np.random.default_rng(7 + dim)
        for y in S.sample_points(rng, 50):
            F = S.frame(y)
            np.testing.assert_allclose(F.T @ F, np.eye(dim), atol=1e-12)
            np.testing.assert_allclose(F.T @ y, np.zeros(dim), atol=1e-12)


def test_sphere_round_trip():
    S = Sphere(3)
    rng = np.random.default_rng(11)
    for y in S.sample_points(rng, 20):
        xi = random_chart_vectors(rng, 200, 3, 3.0)
        x = S.exp(y, xi)
        np.testing.assert_allclose(np.linalg.norm(x, axis=-1), 1.0, atol=1e-12)
        back = S.log(y, x)
        np.testing.assert_allclose(back, xi, atol=1e-10)


def test_sphere_distance_is_arccos_and_metric_axioms():
    S = Sphere(3)
    rng = np.random.default_rng(13)
    x1 = S.sample_points(rng, 1000)
    x2 = S.sample_points(rng, 1000)
    x3 = S.sample_points(rng, 1000)
    d12 = geodesic_distance(S, x1, x2)
    # oracle: arccos of the ambient dot product
    np.testing.assert_allclose(d12, np.arccos(np.clip(np.sum(x1 * x2, axis=1), -1, 1)), atol=1e-12)
    np.testing.assert_allclose(d12, geodesic_distance(S, x2, x1), atol=1e-12)
    d13 = geodesic_distance(S, x1, x3)
    d23 = geodesic_distance(S, x2, x3)
    assert np.all(d13 <= d12 + d23 + 1e-12)
    assert np.all(d12 >= 0)
    # arccos near 1 resolves zero distance only to sqrt(eps)
    np.testing.assert_allclose(geodesic_distance(S, x1, x1), 0.0, atol=1e-7)


def test_sphere_log_matches_distance():
    S = Sphere(4)
    rng = np.random.default_rng(17)
    y = S.sample_points(rng, 1)[0]
    x = S.sample_points(rng, 500)
    keep = S.distance(y, x) < 3.0
    xi = S.log(y, x[keep])
    np.testing.assert_allclose(np.linalg.norm(xi, axis=-1), S.distance(y, x[keep]), atol=1e-10)


def fd_pullback_metric(M, y, xi, h=1e-5):
    """Independent metric oracle: g_ij = <d_i exp, d_j exp> by central differences."""
    dim = M.dim
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        cols.append((M.exp(y, xi + e, check=False) - M.exp(y, xi - e, check=False)) / (2 * h))
    J = np.stack([c.ravel() for c in cols], axis=-1)
    return J.T @ J


@pytest.mark.parametrize("kind,dim", [("sphere", 3), ("sphere", 4), ("torus", 3)])
def test_metric_against_fd_pullback(kind, dim):
    M = make_manifold(kind, dim)
    rng = np.random.default_rng(23)
    for y in M.sample_points(rng, 5):
        for xi in random_chart_vectors(rng, 40, dim, 2.8):
            md = metric_in_chart(M, xi)
            g_fd = fd_pullback_metric(M, y, xi)
            np.testing.assert_allclose(md.g, g_fd, atol=5e-8)
            np.testing.assert_allclose(md.g @ md.g_inv, np.eye(dim), atol=1e-10)
            np.testing.assert_allclose(
                md.sqrt_det, np.sqrt(np.linalg.det(g_fd)), atol=1e-7
            )


def test_sphere_sqrt_det_closed_form():
    S = Sphere(3)
    t = np.array([1e-16, 0.1, 1.0, 2.5])
    np.testing.assert_allclose(S.sqrt_det_g(t), (np.sin(t) / t) ** 2, rtol=1e-12)


def test_dexp_matches_fd():
    for kind in ("sphere", "torus"):
        M = make_manifold(kind, 3)
        rng = np.random.default_rng(31)
        y = M.sample_points(rng, 1)[0]
        xi = random_chart_vectors(rng, 30, 3, 2.5)
        J = M.dexp(y, xi)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (M.exp(y, xi + e, check=False) - M.exp(y, xi - e, check=False)) / (2 * h)
            np.testing.assert_allclose(J[..., :, i], fd, atol=1e-8)


def test_dlog_inverse_of_dexp():
    S = Sphere(3)
    rng = np.random.default_rng(37)
    y = S.sample_points(rng, 1)[0]
    xi = random_chart_vectors(rng, 50, 3, 2.8)
    x = S.exp(y, xi)
    J = S.dexp(y, xi)
    Jl = S.dlog(y, x)
    prod = np.einsum("...ia,...aj->...ij", Jl, J)
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(3), prod.shape), atol=1e-9)


def test_dexp_ginv_dexp_is_tangent_projection():
    # the identity the chart quadrature leans on:
    # Dexp g^{-1} Dexp^T equals the ambient tangent projection at the image point
    S = Sphere(3)
    rng = np.random.default_rng(41)
    y = S.sample_points(rng, 1)[0]
    for xi in random_chart_vectors(rng, 60, 3, 2.9):
        md = S.metric(xi)
        J = S.dexp(y, xi)[0]
        x = S.exp(y, xi).ravel()
        P = np.eye(4) - np.outer(x, x)
        np.testing.assert_allclose(J @ md.g_inv @ J.T, P, atol=1e-10)


def test_sphere_domain_errors():
    S = Sphere(3)
    y = np.array([1.0, 0.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        exp_map(S, y, np.array([np.pi + 0.01, 0.0, 0.0]))
    with pytest.raises(DomainError):
        log_map(S, y, -y)
    with pytest.raises(DomainError):
        metric_in_chart(S, np.array([3.2, 0.0, 0.0]))
    with pytest.raises(DomainError):
        S.check_points(np.array([1.1, 0.0, 0.0, 0.0]))


def test_dimension_gate():
    with pytest.raises(ConfigError):
        make_manifold("sphere", 2)
    with pytest.raises(ConfigError):
        make_manifold("torus", 1)
    with pytest.raises(ConfigError):
        make_manifold("klein", 3)


def test_critical_exponents():
    M = make_manifold("sphere", 3)
    assert M.r_critical == 0.5
    assert M.two_star == 6.0
    M = make_manifold("torus", 4)
    assert M.r_critical == 1.0
    assert M.two_star == 4.0


# ----------------------------------------------------------------- torus


def test_torus_exp_log_wraparound():
    T = FlatTorus(3)
    y = np.array([0.1, 6.2, 3.0])
    xi = np.array([-0.3, 0.2, 0.0])
    x = exp_map(T, y, xi)
    np.testing.assert_allclose(x, np.mod(y + xi, 2 * np.pi), atol=1e-15)
    np.testing.assert_allclose(log_map(T, y, x), xi, atol=1e-12)
    # wrap through 0
    a = np.array([0.05, 0.0, 0.0])
    b = np.array([2 * np.pi - 0.05, 0.0, 0.0])
    np.testing.assert_allclose(geodesic_distance(T, a, b), 0.1, atol=1e-12)
    np.testing.assert_allclose(log_map(T, a, b), [-0.1, 0.0, 0.0], atol=1e-12)


def test_torus_round_trip_random():
    T = FlatTorus(3)
    rng = np.random.default_rng(43)
    y = T.sample_points(rng, 1)[0]
    xi = random_chart_vectors(rng, 500, 3, 3.1)
    np.testing.assert_allclose(T.log(y, T.exp(y, xi)), xi, atol=1e-12)


def test_torus_trivial_jacobians():
    T = FlatTorus(3)
    rng = np.random.default_rng(47)
    y = T.sample_points(rng, 1)[0]
    xi = random_chart_vectors(rng, 10, 3, 2.0)
    np.testing.assert_allclose(T.dexp(y, xi), np.broadcast_to(np.eye(3), (10, 3, 3)))
    np.testing.assert_allclose(T.frame(y), np.eye(3))
    assert metric_in_chart(T, xi[0]).sqrt_det == 1.0


def test_torus_cut_locus():
    T = FlatTorus(3)
    y = np.zeros(3)
    with pytest.raises(DomainError):
        exp_map(T, y, np.array([np.pi, 0.4, 0.0]))
    with pytest.raises(DomainError):
        log_map(T, y, np.array([np.pi, 0.0, 0.0]))


# ------------------------------------------------------- transition maps


def test_transition_self_is_identity():
    for kind in ("sphere", "torus"):
        M = make_manifold(kind, 3)
        rng = np.random.default_rng(53)
        a = M.sample_points(rng, 1)[0]
        xi = random_chart_vectors(rng, 20, 3, 1.0)
        for v in xi:
            np.testing.assert_allclose(transition_point(M, a, a, v), v, atol=1e-12)
        np.testing.assert_allclose(transition_jacobian(M, a, a, xi[0]), np.eye(3), atol=1e-6)


def test_transition_jacobian_singular_values():
    # at the origin of the source chart the jacobian stretches the directions
    # orthogonal to the connecting geodesic by t/sin(t); at the geodesic
    # midpoint the two chart distortions cancel and the map is orthogonal
    S = Sphere(3)
    rng = np.random.default_rng(59)
    for _ in range(5):
        a = S.sample_points(rng, 1)[0]
        dirv = random_chart_vectors(rng, 1, 3, 1.0)[0]
        dirv = dirv / np.linalg.norm(dirv)
        t = rng.uniform(0.3, 1.2)
        b = S.exp(a, t * dirv).ravel()

        J0 = transition_jacobian(S, a, b, np.zeros(3))
        sv = np.sort(np.linalg.svd(J0, compute_uv=False))
        expect = np.sort([1.0, t / np.sin(t), t / np.sin(t)])
        np.testing.assert_allclose(sv, expect, atol=1e-5)

        Jm = transition_jacobian(S, a, b, 0.5 * t * dirv)
        np.testing.assert_allclose(Jm.T @ Jm, np.eye(3), atol=5e-6)


def test_transition_cocycle():
    S = Sphere(3)
    rng = np.random.default_rng(61)
    base = S.sample_points(rng, 1)[0]
    a = S.exp(base, np.array([0.25, 0.0, 0.0])).ravel()
    b = S.exp(base, np.array([0.0, 0.3, 0.0])).ravel()
    c = S.exp(base, np.array([-0.2, 0.1, 0.1])).ravel()
    xi = np.array([0.15, -0.1, 0.05])
    one_hop = transition_point(S, a, c, xi)
    two_hop = transition_point(S, b, c, transition_point(S, a, b, xi))
    np.testing.assert_allclose(one_hop, two_hop, atol=1e-8)


def test_mean_point_of_cluster():
    for kind in ("sphere", "torus"):
        M = make_manifold(kind, 3)
        rng = np.random.default_rng(67)
        p = M.sample_points(rng, 1)[0]
        offs = random_chart_vectors(rng, 12, 3, 0.05)
        pts = M.exp(p, offs)
        m = mean_point(M, pts)
        assert M.distance(m, p) < 0.05


def test_sample_points_deterministic():
    for kind in ("sphere", "torus"):
        M = make_manifold(kind, 3)
        a = M.sample_points(np.random.default_rng(5), 8)
        b = M.sample_points(np.random.default_rng(5), 8)
        np.testing.assert_array_equal(a, b)
