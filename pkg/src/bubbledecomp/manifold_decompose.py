"""Manifold-level profile decomposition through a chart atlas.

Pipeline: the sequence is split by the partition of unity, each chart's
localized plane sequence is decomposed by the plane extractor, recovered
tracks are mapped back to manifold points and re-expressed in the normal
frame at their limit point, near-identical tracks from overlapping charts
are merged, and each merged cluster's per-chart profiles are summed into
one profile.  Bubble sums and remainders are then assembled per index.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError, UsageError
from .euclid_extract import ExtractConfig, euclid_decompose, _sample_cube
from .field import (
    AffineE,
    FieldM,
    LinearMapE,
    QuadratureSpec,
    SumE,
    SumM,
    ZeroE,
    ZeroM,
    h1_energy_e,
    h12_inner,
)
from .geometry import mean_point, transition_jacobian
from .rescale import deflate, synthesize_bubble

__all__ = [
    "ChiFieldM",
    "TrackM",
    "Bubble",
    "Decomposition",
    "ManifoldConfig",
    "localize",
    "recenter_track",
    "synchronize",
    "assemble_profiles",
    "pair_divergence_m",
    "decompose",
    "as_report",
]

_TINY = 1e-300


class ChiFieldM(FieldM):
    """One partition term chi_s * u of a manifold field."""

    def __init__(self, A, s, u):
        self.A = A
        self.s = int(s)
        self.u = u
        z = A.centers[self.s]
        flags = [
            fl for fl in u.flags if float(A.M.distance(z, fl[0])) < A.rho + fl[1]
        ]
        super().__init__(
            A.M,
            support=(z, A.rho),
            finest_scale=u.finest_scale,
            flags=tuple(flags),
        )

    def _values(self, x):
        return self.A.chi(self.s, x) * self.u.values(x)

    def _grads(self, x):
        chi, gchi = self.A.chi_and_grad(self.s, x)
        uv = self.u.values(x)
        gu = self.u.grads(x)
        return chi[:, None] * gu + uv[:, None] * gchi


def _localize_one(A, s, f):
    return deflate(ChiFieldM(A, s, f), A.centers[int(s)], 0.0, domain=A.rho)


def localize(u, A, charts=None):
    """Chart restrictions (chi_i u_k) o exp_{z_i} as plane fields.

    Returns a dict chart index -> list over the sequence index; each field
    vanishes identically outside the chart ball B_rho(0).
    """
    u = list(u)
    if charts is None:
        charts = range(A.n_charts)
    return {int(s): [_localize_one(A, s, f) for f in u] for s in charts}


@dataclass
class TrackM:
    """A concentration track on the manifold: per-index centers and scales."""

    M: object
    centers: np.ndarray  # (K, ambient dim)
    scales: np.ndarray  # (K,)
    limit_point: np.ndarray
    chart: int = -1  # chart the track was recovered in
    score: float = 0.0


@dataclass
class Bubble:
    track: TrackM
    profile: object  # plane profile in the normal frame at the limit point


@dataclass
class Decomposition:
    weak_limit: FieldM
    bubbles: list
    bubble_sums: list  # per-index sums of synthesized bubbles
    remainders: list
    diagnostics: dict


def recenter_track(t, A, chart, w, tail=3):
    """Map a chart-plane track to manifold points and rename its profile.

    Centers become exp_{z_i}(xi_k); the limit point is the intrinsic mean of
    the tail centers; the profile argument is composed with the jacobian (at
    the origin) of the chart change from the limit point's normal frame into
    chart i, so the profile reads in the limit point's own frame.
    """
    M = A.M
    xis = np.asarray(t.centers, dtype=float)
    if np.any(np.linalg.norm(xis, axis=-1) >= M.rho_max):
        raise DomainError("track centers leave the chart's normal range")
    z = A.centers[int(chart)]
    ys = M.exp(z, xis, check=False)
    ybar = mean_point(M, ys[-min(tail, len(ys)) :])
    jac = transition_jacobian(M, ybar, z, np.zeros(M.dim))
    if np.allclose(jac, np.eye(M.dim), atol=1e-12):
        w2 = w
    else:
        w2 = LinearMapE(w, jac)
    tm = TrackM(
        M=M,
        centers=np.asarray(ys, dtype=float),
        scales=np.asarray(t.scales, dtype=float).copy(),
        limit_point=np.asarray(ybar, dtype=float),
        chart=int(chart),
        score=float(t.score),
    )
    return tm, w2


def _beta(a, b):
    """Boundedness functional between two manifold tracks."""
    d = a.M.distance(a.centers, b.centers)
    return float(np.max(np.abs(a.scales - b.scales) + 2.0**a.scales * d))


def pair_divergence_m(a, b):
    """Per-index separation of two manifold tracks: |dj| + 2^(j_a) d(y, y')."""
    d = a.M.distance(a.centers, b.centers)
    return np.abs(a.scales - b.scales) + 2.0**a.scales * d


def synchronize(items, b_sync=10.0):
    """Single-linkage clustering of (TrackM, profile, chart) triples.

    Tracks joined by a chain of links with boundedness functional <= b_sync
    form one cluster.  The first member (input order) is the representative;
    other members' profiles are re-gauged by their constant scale offset so
    all members express the same object in the representative's gauge.
    """
    items = list(items)
    n = len(items)
    if n == 0:
        return []
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(n):
        for b in range(a + 1, n):
            ta, tb = items[a][0], items[b][0]
            if min(_beta(ta, tb), _beta(tb, ta)) <= b_sync:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    groups = {}
    for a in range(n):
        groups.setdefault(find(a), []).append(a)
    clusters = []
    for root in sorted(groups):
        idxs = groups[root]
        rep = items[idxs[0]]
        out = [rep]
        for idx in idxs[1:]:
            tm, w, ch = items[idx]
            delta = float(np.median(tm.scales - rep[0].scales))
            if abs(delta) > 1e-9:
                w = AffineE(w, -delta)
            out.append((tm, w, ch))
        clusters.append(out)
    return clusters


def assemble_profiles(cluster, A, quad=None):
    """Sum a cluster's per-chart profiles; report the partition consistency.

    Each member profile should be close to its chart's partition weight at
    the limit point times the summed profile; the relative gradient-energy
    errors and the covered weight are returned alongside the sum.
    """
    if not cluster:
        raise UsageError("empty cluster")
    quad = quad or QuadratureSpec(density=4.0)
    w = SumE.of(*((1.0, m[1]) for m in cluster))
    ybar = cluster[0][0].limit_point
    wn = float(np.sqrt(max(h1_energy_e(w, quad), 0.0)))
    charts = {}
    cover = 0.0
    for tm, wm, ch in cluster:
        chi = float(A.chi(int(ch), ybar)[0])
        cover += chi
        diff = SumE.of((1.0, wm), (-chi, w))
        err = float(np.sqrt(max(h1_energy_e(diff, quad), 0.0)))
        charts[int(ch)] = {
            "chi": chi,
            "rel_err": err / max(chi * wn, _TINY),
        }
    return w, {"charts": charts, "chi_cover": float(cover)}


@dataclass(frozen=True)
class ManifoldConfig:
    euclid: ExtractConfig = field(default_factory=ExtractConfig)
    tail: int = 3
    b_sync: float = 10.0  # cluster-link threshold on the boundedness functional
    chart_chi_min: float = 0.05  # partition weight below which a chart is skipped
    chart_cap: int = 2  # charts extracted per declared site
    rough_chart_cap: int = 1  # ditto for the weak-limit estimation pass
    weak_floor: float = 0.05  # weak-part energy floor, relative to peak energy
    threads: int = 1
    attach_verification: bool = True
    quad_m: QuadratureSpec = field(default_factory=QuadratureSpec)
    quad_e: QuadratureSpec = field(default_factory=lambda: QuadratureSpec(density=4.0))


def _site_charts(A, fields, chi_min, cap):
    """Charts worth extracting: best partition weights at declared sites."""
    picked = set()
    for f in fields:
        for c, _r, _s in f.flags:
            c = np.atleast_2d(np.asarray(c, dtype=float))
            _rows, cols, chi, _den = A.partition(c)
            order = np.lexsort((cols, -chi))
            for o in order[: int(cap)]:
                if chi[o] >= chi_min:
                    picked.add(int(cols[o]))
    return sorted(picked)


def _extract_all(base, A, cfg, cap, hint_fields):
    """Per-chart plane extraction, recentring, synchronization, assembly."""
    charts = _site_charts(A, hint_fields, cfg.chart_chi_min, cap)
    dim = A.M.dim

    def run(i):
        v = [_localize_one(A, i, f) for f in base]
        hv = [tuple(_localize_one(A, i, f).flags) for f in hint_fields]
        return euclid_decompose(v, cfg.euclid, weak=ZeroE(dim), hints=hv)

    runs = {}
    if cfg.threads > 1 and len(charts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            for i, dec in zip(charts, ex.map(run, charts)):
                runs[i] = dec
    else:
        for i in charts:
            runs[i] = run(i)

    items = []
    for i in charts:
        for p in runs[i].profiles:
            tm, w = recenter_track(p.track, A, i, p.profile, tail=cfg.tail)
            items.append((tm, w, i))
    clusters = synchronize(items, cfg.b_sync)

    bubbles, reports = [], []
    for cl in clusters:
        w, rep = assemble_profiles(cl, A, cfg.quad_e)
        cover = rep["chi_cover"]
        if cover >= 0.25 and abs(cover - 1.0) > 1e-9:
            # charts below the weight floor were not extracted; the partition
            # consistency fixes their share of the profile exactly
            w = SumE.of((1.0 / cover, w))
        bubbles.append(Bubble(track=cl[0][0], profile=w))
        reports.append(rep)
    notes = {
        "charts": charts,
        "per_chart": {int(i): len(runs[i].profiles) for i in charts},
        "clusters": len(clusters),
        "assembly": reports,
    }
    return bubbles, notes


def _bubble_sum(A, bubbles, k):
    terms = [
        (1.0, synthesize_bubble(A.M, b.profile, b.track.centers[k], b.track.scales[k], A.cutoff))
        for b in bubbles
    ]
    if not terms:
        return ZeroM(A.M)
    return SumM.of(*terms)


def decompose(u, A, cfg=None, weak=None):
    """Profile decomposition of a manifold field sequence.

    Returns the weak-limit estimate, bubbles (manifold tracks with plane
    profiles in the limit point's normal frame), per-index bubble sums, and
    remainders u_k - weak - S_k.  Two extraction passes when no weak part is
    supplied, as in the plane decomposition.
    """
    cfg = cfg or ManifoldConfig()
    u = list(u)
    if len(u) < 4:
        raise UsageError("need at least four fields to decompose")
    if A.M.kind != u[0].M.kind or A.M.dim != u[0].M.dim:
        raise UsageError("atlas and fields live on different manifolds")
    K = len(u)
    h12_sq = [float(h12_inner(A, f, f, cfg.quad_m)) for f in u]
    if not all(np.isfinite(e) for e in h12_sq):
        raise DataError("non-finite field values")
    e_sup = max(h12_sq)

    diag = {"h12_sq": h12_sq, "b_sync": cfg.b_sync}
    if weak is not None:
        ubar = weak
        base = [SumM.of((1.0, f), (-1.0, ubar)) for f in u]
        diag["weak_kept"] = True
    else:
        rough, notes1 = _extract_all(u, A, cfg, cfg.rough_chart_cap, u)
        s1 = [_bubble_sum(A, rough, k) for k in range(K)]
        resid1 = [SumM.of((1.0, u[k]), (-1.0, s1[k])) for k in range(K)]
        tail_ks = range(K - cfg.tail, K)
        ubar = SumM.of(*((1.0 / cfg.tail, resid1[k]) for k in tail_ks))
        # a common weak part makes every pair of tail residuals correlate at
        # unit rate, while leftover junk and vanishing content decorrelate
        # somewhere in the window; the worst pair is the honest estimate
        gate_ks = list(range(max(0, K - 5), K))
        norms = {
            k: float(h12_inner(A, resid1[k], resid1[k], cfg.quad_m)) for k in gate_ks
        }
        den_floor = 1e-9 * max(e_sup, _TINY)
        sigma = []
        for i, k in enumerate(gate_ks):
            for m in gate_ks[i + 1 :]:
                den = min(norms[k], norms[m])
                num = float(h12_inner(A, resid1[k], resid1[m], cfg.quad_m))
                sigma.append(num / den if den > den_floor else 0.0)
        gate = float(min(sigma)) if sigma else 0.0
        # an average smaller than the extraction's own leftovers is noise,
        # not a weak limit, no matter how coherent it looks
        ubar_sq = float(h12_inner(A, ubar, ubar, cfg.quad_m))
        diag["weak_gate"] = gate
        diag["weak_sq"] = ubar_sq
        diag["rough"] = notes1
        diag["rough_count"] = len(rough)
        if gate < 0.5 or ubar_sq < cfg.weak_floor * e_sup:
            ubar = ZeroM(A.M)
            base = list(u)
        else:
            base = [SumM.of((1.0, f), (-1.0, ubar)) for f in u]
        diag["weak_kept"] = not isinstance(ubar, ZeroM)

    bubbles, notes2 = _extract_all(base, A, cfg, cfg.chart_cap, u)
    bubbles.sort(
        key=lambda b: (
            -h1_energy_e(b.profile, cfg.quad_e),
            b.track.scales[0],
            tuple(np.round(b.track.limit_point, 12)),
        )
    )
    diag["final"] = notes2
    diag["count"] = len(bubbles)

    sums = [_bubble_sum(A, bubbles, k) for k in range(K)]
    remainders = [
        SumM.of((1.0, u[k]), (-1.0, ubar), (-1.0, sums[k])) for k in range(K)
    ]
    dec = Decomposition(
        weak_limit=ubar,
        bubbles=bubbles,
        bubble_sums=sums,
        remainders=remainders,
        diagnostics=diag,
    )
    if cfg.attach_verification:
        from .verify import VerifyConfig, verify_decomposition

        vcfg = VerifyConfig(tail=cfg.tail, quad_m=cfg.quad_m, quad_e=cfg.quad_e)
        diag["verification"] = verify_decomposition(dec, A, u=u, cfg=vcfg)
    return dec


def as_report(dec, sample_n=9, sample_extent=8.0):
    """JSON-ready summary: tracks, profile sample grids, extraction ledger."""
    bubbles = []
    for b in dec.bubbles:
        cube = _sample_cube(b.profile, sample_extent, sample_n)
        bubbles.append(
            {
                "centers": [[float(x) for x in row] for row in b.track.centers],
                "scales": [float(s) for s in b.track.scales],
                "limit_point": [float(x) for x in b.track.limit_point],
                "chart": int(b.track.chart),
                "score": float(b.track.score),
                "samples": {
                    "extent": float(sample_extent),
                    "n": int(sample_n),
                    "values": cube.tolist(),
                },
            }
        )
    return {"bubbles": bubbles, "diagnostics": _plain(dec.diagnostics)}


def _plain(obj):
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj
