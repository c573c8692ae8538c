"""Numerical audit of a computed decomposition.

verify_decomposition checks the bookkeeping claims: captured gradient
energies plus the weak part must fit under the tail of the sequence norms,
separation functionals of track pairs must diverge, remainders must shrink
in the critical norm, and bubble pairs must decouple in the H^1 pairing.
cocompactness_probe measures the largest pairing any rescaled test function
extracts from each field; vanishing pairings should travel together with
vanishing critical norms.  Check failures land in the report - nothing
raises except resource limits.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NodeBudgetError, UsageError
from .field import (
    QuadratureSpec,
    SumM,
    h1_energy_e,
    h12_inner,
    lp_norm,
    pair_with_test,
)
from .manifold_decompose import ChiFieldM, pair_divergence_m
from .rescale import deflate, synthesize_bubble
from .synth import bump_profile


@dataclass(frozen=True)
class ProbeConfig:
    """Sampling plan for the deflation-pairing probe."""

    scale_pad: tuple = (-0.5, 0.0, 0.5)  # exponents probed around declared scales
    base_scales: tuple = (1.0, 2.0, 3.0)  # fallback when a field declares nothing
    offsets: tuple = (0.5,)  # center offsets, as fractions of the site radius
    chart_cap: int = 1  # chart pieces tried per candidate point
    combo_budget: int = 20000
    quad: QuadratureSpec = field(default_factory=lambda: QuadratureSpec(density=6.0))


@dataclass(frozen=True)
class VerifyConfig:
    tau_e: float = 0.05  # energy-bound slack factor
    tail: int = 3  # trailing indices standing in for the norm liminf
    quad_m: QuadratureSpec = field(default_factory=QuadratureSpec)
    quad_e: QuadratureSpec = field(default_factory=lambda: QuadratureSpec(density=4.0))
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    probe_remainders: bool = True


def default_dictionary():
    """Five radial test bumps at distinct radii."""
    return [bump_profile(radius=r) for r in (0.6, 0.9, 1.3, 1.8, 2.4)]


def _tangent_axes(M, c):
    """Orthonormal tangent directions at c (coordinate axes on the torus)."""
    c = np.asarray(c, dtype=float)
    if M.kind == "torus":
        return np.eye(M.dim)
    q, _ = np.linalg.qr(np.column_stack([c, np.eye(len(c))]))
    return q[:, 1 : M.dim + 1].T


def _probe_grid(A, f, cfg):
    """Candidate (point, scales) pairs: declared sites plus offset rings,
    or a fixed coarse spread when nothing is declared."""
    M = A.M
    pts = []
    flags, seen = [], set()
    for c, rad, s in f.flags:
        key = (tuple(np.round(np.asarray(c, dtype=float), 2)), round(float(s) * 4) / 4)
        if key not in seen:
            seen.add(key)
            flags.append((c, rad, s))
    if flags:
        for c, rad, s in flags:
            c = np.asarray(c, dtype=float)
            js = [float(s) + p for p in cfg.scale_pad]
            pts.append((c, js))
            step = min(float(rad), 1.0)
            for frac in cfg.offsets:
                for ax in _tangent_axes(M, c):
                    for sgn in (1.0, -1.0):
                        y = M.exp(c, sgn * frac * step * ax, check=False)
                        pts.append((y, js))
    else:
        stride = max(1, len(A.centers) // 4)
        for y in A.centers[::stride][:4]:
            pts.append((np.asarray(y, dtype=float), [float(j) for j in cfg.base_scales]))
    return pts


def _top_charts(A, y, cap):
    _rows, cols, chi, _den = A.partition(np.atleast_2d(np.asarray(y, dtype=float)))
    order = np.lexsort((cols, -chi))
    return [int(cols[o]) for o in order[: int(cap)]]


def cocompactness_probe(u, A, dictionary=None, cfg=None):
    """Largest deflated pairing per field against a test dictionary.

    Each field is chart-localized, deflated on a grid of candidate centers
    and scales, and paired with every dictionary element; the report rows
    hold the max |pairing| next to the field's critical norm.
    """
    cfg = cfg or ProbeConfig()
    dictionary = default_dictionary() if dictionary is None else list(dictionary)
    if not dictionary:
        raise UsageError("probe needs a nonempty dictionary")
    per_field = []
    total = 0
    for f in u:
        combos = []
        for y, js in _probe_grid(A, f, cfg):
            for i_chart in _top_charts(A, y, cfg.chart_cap):
                for j in js:
                    combos.append((y, float(j), i_chart))
        total += len(combos) * len(dictionary)
        per_field.append(combos)
    if total > cfg.combo_budget:
        raise NodeBudgetError(total, cfg.combo_budget)
    rows = []
    for f, combos in zip(u, per_field):
        best, arg = 0.0, None
        for y, j, i_chart in combos:
            v = deflate(ChiFieldM(A, i_chart, f), y, j)
            for p_i, phi in enumerate(dictionary):
                val = abs(float(pair_with_test(v, phi, cfg.quad)))
                if val > best:
                    best = val
                    arg = {
                        "point": [float(t) for t in np.asarray(y)],
                        "scale": j,
                        "chart": i_chart,
                        "test": p_i,
                    }
        rows.append(
            {
                "pairing": best,
                "critical_norm": float(lp_norm(A, f, A.M.two_star, cfg.quad)),
                "argmax": arg,
            }
        )
    return {"rows": rows, "tests": len(dictionary), "combos": total}


def verify_decomposition(d, A, u=None, cfg=None):
    """Audit report: energy ledger, pair separations, remainder trend,
    bubble cross pairings, and a leftover-concentration probe.

    `u` optionally supplies the original sequence; otherwise it is rebuilt
    exactly as weak part + bubble sum + remainder.
    """
    cfg = cfg or VerifyConfig()
    K = len(d.remainders)
    tail = list(range(max(0, K - cfg.tail), K))

    per_bubble = [float(h1_energy_e(b.profile, cfg.quad_e)) for b in d.bubbles]
    weak_sq = float(h12_inner(A, d.weak_limit, d.weak_limit, cfg.quad_m))
    lhs = float(sum(per_bubble) + weak_sq)
    if u is None:
        u = [
            SumM.of((1.0, d.weak_limit), (1.0, d.bubble_sums[k]), (1.0, d.remainders[k]))
            for k in range(K)
        ]
    tail_norms = [float(h12_inner(A, u[k], u[k], cfg.quad_m)) for k in tail]
    rhs = min(tail_norms)
    energy = {
        "per_bubble": per_bubble,
        "weak": weak_sq,
        "lhs": lhs,
        "tail_norms_sq": tail_norms,
        "rhs": rhs,
        "slack": float((1.0 + cfg.tau_e) * rhs - lhs),
        "passed": bool(lhs <= (1.0 + cfg.tau_e) * rhs),
    }

    orth = []
    for m in range(len(d.bubbles)):
        for n in range(m + 1, len(d.bubbles)):
            vals = pair_divergence_m(d.bubbles[m].track, d.bubbles[n].track)
            orth.append(
                {
                    "pair": [m, n],
                    "values": [float(t) for t in vals],
                    "increasing": bool(np.all(np.diff(vals) > 0)),
                    "final": float(vals[-1]),
                }
            )

    two_star = A.M.two_star
    rem_vals = [float(lp_norm(A, d.remainders[k], two_star, cfg.quad_m)) for k in range(K)]
    seq_scale = max(float(lp_norm(A, u[k], two_star, cfg.quad_m)) for k in tail)
    remainder = {
        "values": rem_vals,
        "trend_slope": float(np.polyfit(np.arange(K), rem_vals, 1)[0]) if K > 1 else 0.0,
        "sequence_scale": seq_scale,
        "final_over_scale": float(rem_vals[-1] / max(seq_scale, 1e-300)),
    }

    cross = []
    for m in range(len(d.bubbles)):
        for n in range(m + 1, len(d.bubbles)):
            tm, tn = d.bubbles[m].track, d.bubbles[n].track
            vals, ref_dj, ref_sep = [], [], []
            for k in range(K):
                bm = synthesize_bubble(
                    A.M, d.bubbles[m].profile, tm.centers[k], tm.scales[k], A.cutoff
                )
                bn = synthesize_bubble(
                    A.M, d.bubbles[n].profile, tn.centers[k], tn.scales[k], A.cutoff
                )
                vals.append(abs(float(h12_inner(A, bm, bn, cfg.quad_m))))
                ref_dj.append(float(2.0 ** (-abs(tm.scales[k] - tn.scales[k]))))
                sep = 2.0 ** min(tm.scales[k], tn.scales[k]) * float(
                    A.M.distance(tm.centers[k], tn.centers[k])
                )
                # co-centered pair: the scale-gap curve is the operative one
                ref_sep.append(float(1.0 / sep) if sep > 1e-9 else 0.0)
            cross.append(
                {
                    "pair": [m, n],
                    "values": vals,
                    "ref_scale_gap": ref_dj,
                    "ref_separation": ref_sep,
                    "floor": float(min(per_bubble[m], per_bubble[n])),
                }
            )

    coco = None
    if cfg.probe_remainders:
        coco = cocompactness_probe(d.remainders, A, cfg=cfg.probe)

    checks = {
        "energy_bound": energy["passed"],
        "pairs_diverge": all(o["increasing"] for o in orth) if orth else True,
        "remainder_shrinks": bool(rem_vals[-1] <= rem_vals[0] + 1e-12) if K > 1 else True,
    }
    return {
        "energy": energy,
        "orthogonality": orth,
        "remainder": remainder,
        "cross_pairings": cross,
        "cocompactness": coco,
        "checks": checks,
    }
