import numpy as np
import pytest
from scipy import integrate as sint
from scipy import optimize as sopt

from bubbledecomp.errors import ConfigError, UsageError
from bubbledecomp.field import QuadratureSpec, SumM, h12_norm, lp_norm
from bubbledecomp.synth import (
    BubblePlant,
    PlantSpec,
    bubble_center_at,
    bump_profile,
    critical_profile,
    lopsided_profile,
    make_profile,
    oscillation_field,
    planted_sequence,
    truncation_tail_report,
    weak_limit_field,
)

GRAD_ENERGY = 27.987372092411338
L2_SQ = 116.65069510781281
R_HALF = 6.726392165639


def test_center_value_is_the_critical_amplitude():
    w = critical_profile()
    assert abs(w.values(np.zeros((1, 3)))[0] - 3.0 ** 0.25) <= 1e-14
    # closed form inside the untapered core
    t = np.linspace(0.1, 5.5, 40)
    z = np.stack([t, 0 * t, 0 * t], axis=-1)
    assert np.allclose(w.values(z), 3.0 ** 0.25 / np.sqrt(1 + t * t), atol=1e-13)


def test_profile_solves_the_critical_equation_in_the_core():
    # radial form: h'' + (2/t) h' + h^5 = 0, checked by finite differences
    w = critical_profile()

    def h(t):
        return w.values(np.stack([t, 0 * t, 0 * t], axis=-1))

    step = 1e-3
    t = np.linspace(0.15, 5.0, 120)
    d1 = (h(t + step) - h(t - step)) / (2 * step)
    d2 = (h(t + step) - 2 * h(t) + h(t - step)) / step ** 2
    residual = d2 + 2.0 / t * d1 + h(t) ** 5
    assert np.max(np.abs(residual)) <= 1e-5


def test_frozen_energy_constants_rederive():
    w = critical_profile()

    def grad_cum(r):
        val, _ = sint.quad(
            lambda t: 4 * np.pi * t * t * w.hprime(np.array([t]))[0] ** 2, 0.0, r, limit=400
        )
        return val

    total = grad_cum(8.0)
    mass, _ = sint.quad(
        lambda t: 4 * np.pi * t * t * w.h(np.array([t]))[0] ** 2, 0.0, 8.0, limit=400
    )
    assert abs(total - GRAD_ENERGY) <= 1e-8
    assert abs(mass - L2_SQ) <= 1e-8
    # half of the gradient energy sits inside R_HALF
    r_half = sopt.brentq(lambda r: grad_cum(r) - 0.5 * total, 1.0, 8.0, xtol=1e-10)
    assert abs(r_half - R_HALF) <= 1e-6


def test_truncation_tail_report_matches_adaptive_quadrature():
    rep = truncation_tail_report()
    amp2 = np.sqrt(3.0)  # amplitude^2 of the N=3 profile

    def gsq(t):
        return amp2 * t * t * (1 + t * t) ** -3  # (dh/dt)^2 of the full profile

    def m6(t):
        return amp2 ** 3 * (1 + t * t) ** -3

    g_in, _ = sint.quad(lambda t: t * t * gsq(t), 0, 8.0)
    g_out, _ = sint.quad(lambda t: t * t * gsq(t), 8.0, np.inf)
    m_in, _ = sint.quad(lambda t: t * t * m6(t), 0, 8.0)
    m_out, _ = sint.quad(lambda t: t * t * m6(t), 8.0, np.inf)
    assert abs(rep["grad_tail_fraction"] - g_out / (g_in + g_out)) <= 1e-3
    assert abs(rep["critical_mass_tail_fraction"] - m_out / (m_in + m_out)) <= 1e-4
    # the 1/t gradient tail is heavy, the critical mass tail is not
    assert rep["grad_tail_fraction"] > 0.15
    assert rep["critical_mass_tail_fraction"] < 0.005


def test_profile_factory_and_parameter_records():
    b = make_profile("bump", radius=2.0, amplitude=0.5)
    assert b.params["kind"] == "bump" and b.radius == 2.0
    assert abs(b.values(np.zeros((1, 3)))[0] - 0.5) <= 1e-14
    assert b.values(np.array([[2.1, 0, 0]]))[0] == 0.0
    lop = make_profile("lopsided", tilt=(0.2, 0.0, 0.1))
    assert lop.params["tilt"] == [0.2, 0.0, 0.1]
    with pytest.raises(ConfigError):
        make_profile("sawtooth")
    with pytest.raises(ConfigError):
        lopsided_profile(tilt=(1.0, 0.0))
    with pytest.raises(ConfigError):
        critical_profile(dim=2)


def test_lopsided_profile_breaks_radial_symmetry():
    lop = lopsided_profile()
    z = np.array([[0.4, 0.0, 0.0], [-0.4, 0.0, 0.0]])
    v = lop.values(z)
    assert abs(v[0] - v[1]) > 0.1  # mirrored points differ
    rng = np.random.default_rng(21)
    pts = rng.uniform(-0.7, 0.7, (50, 3))
    h = 1e-6
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = h
        fd = (lop.values(pts + e) - lop.values(pts - e)) / (2 * h)
        assert np.max(np.abs(fd - lop.grads(pts)[:, ax])) <= 1e-8


def test_plant_schedule_and_drifting_centers(torus3):
    p = BubblePlant(center=SPOT3, slope=1.5, offset=2.0, drift=0.4, drift_axis=1)
    assert p.scale_at(0) == 2.0 and p.scale_at(4) == 8.0
    for k in (0, 2, 5):
        c = bubble_center_at(torus3, p, k)
        want = 0.4 * 2.0 ** (-p.scale_at(k))
        assert abs(float(torus3.distance(SPOT3, c)) - want) <= 1e-12
    d = p.to_dict()
    assert d["slope"] == 1.5 and d["drift_axis"] == 1


SPOT3 = np.array([1.0, 2.0, 3.0])


def test_planted_sequence_structure_and_truth(torus3):
    spec = PlantSpec(
        kind="torus",
        k_count=4,
        bubbles=[BubblePlant(center=SPOT3, slope=1.0, offset=2.0)],
        weak_limit="trig",
        weak_amplitude=0.3,
    )
    fields, truth = planted_sequence(torus3, spec)
    assert len(fields) == 4
    assert all(isinstance(f, SumM) for f in fields)
    assert truth["spec"]["k_count"] == 4
    (track,) = truth["bubbles"]
    assert track["scales"] == [2.0, 3.0, 4.0, 5.0]
    assert len(track["centers"]) == 4
    assert track["profile"]["kind"] == "critical"
    # the planted field carries the bubble: values near the center are large
    x = np.atleast_2d(SPOT3)
    amp_k = [float(f.values(x)[0]) for f in fields]
    assert all(b > 1.4 * a for a, b in zip(amp_k, amp_k[1:]))  # 2^(jr) growth


def test_plant_validation(torus3, sphere3):
    same = BubblePlant(center=SPOT3, slope=1.0, offset=2.0)
    offset_only = BubblePlant(center=SPOT3, slope=1.0, offset=6.0)
    with pytest.raises(UsageError):
        planted_sequence(torus3, PlantSpec(kind="torus", bubbles=[same, offset_only]))
    with pytest.raises(UsageError):
        planted_sequence(sphere3, PlantSpec(kind="torus"))
    with pytest.raises(ConfigError):
        weak_limit_field(torus3, PlantSpec(kind="torus", weak_limit="linear", weak_amplitude=1.0))
    with pytest.raises(ConfigError):
        weak_limit_field(sphere3, PlantSpec(kind="sphere", weak_limit="trig", weak_amplitude=1.0))


def test_weak_limit_gradients(sphere3, torus3):
    rng = np.random.default_rng(22)
    lin = weak_limit_field(sphere3, PlantSpec(kind="sphere", weak_limit="linear", weak_amplitude=0.8))
    x = sphere3.sample_points(rng, 30)
    g = lin.grads(x)
    # tangent and correct along a frame walk
    assert np.max(np.abs(np.einsum("ma,ma->m", g, x))) <= 1e-12
    h = 1e-6
    e = np.array([h, 0.0, 0.0])
    xp = np.stack([np.asarray(sphere3.exp(p, e, check=False)).ravel() for p in x])
    xm = np.stack([np.asarray(sphere3.exp(p, -e, check=False)).ravel() for p in x])
    fd = (lin.values(xp) - lin.values(xm)) / (2 * h)
    F = np.stack([sphere3.frame(p) for p in x])
    assert np.max(np.abs(fd - np.einsum("ma,ma->m", g, F[:, :, 0]))) <= 1e-6

    trig = weak_limit_field(torus3, PlantSpec(kind="torus", weak_limit="trig", weak_amplitude=0.5))
    y = rng.uniform(-np.pi, np.pi, (30, 3))
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = h
        fd = (trig.values(y + e) - trig.values(y - e)) / (2 * h)
        assert np.max(np.abs(fd - trig.grads(y)[:, ax])) <= 1e-6


def test_oscillation_family_is_bounded_and_vanishing(torus_atlas):
    # amplitude 1/(k+1) against frequency (k+1): the H^{1,2} norms stay flat
    # while the critical norm dies off linearly
    T = torus_atlas.M
    spec = PlantSpec(kind="torus", osc_amplitude=1.0, osc_freq0=4)
    q = QuadratureSpec(density=4)
    homes, crits = [], []
    for k in range(6):
        o = oscillation_field(T, spec, k)
        homes.append(h12_norm(torus_atlas, o, q))
        crits.append(lp_norm(torus_atlas, o, 6, q))
    assert max(homes) / min(homes) <= 1.05  # only the 1/f^2 mass term moves
    assert crits[-1] <= 0.2 * crits[0]
    assert all(b < a for a, b in zip(crits, crits[1:]))
