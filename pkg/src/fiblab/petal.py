"""Near-involution structure of the deep return maps and its parabolic chart.

At deep levels the return iterate, composed with the affine identification
of one level window with the window two levels up, is an orientation
reversing self-map of the little interval between the critical point and
the outer return anchor.  Its fixed point is the innermost precritical
point, and the derivative there approaches -1 from inside at speed 1/ell:
the map is almost an involution, and its second iterate is almost
parabolic.

This module measures that structure directly: the multiplier and its
distance-from--1 excess, the self-mapping of the interval, and the settle
counts (how many applications drive any start point into a prescribed
neighbourhood of the fixed point).  It then switches to the inverse-square
chart around the fixed point, where the almost-parabolic second iterate
becomes a near-translation, and verifies the two trap inequalities that
make the chart useful: far from the origin the modulus gains a definite
amount per step, and on a vertical line at a tunable offset the real part
does.  Both margins are measured on sample grids, with both square-root
branches of the chart, and the worst margin is reported.

Orbit evaluations run in the same extended-precision workspace as the
disc construction: the iterate passes through the power-map bottleneck,
where double rounding would be amplified far above the measured margins
at deep levels.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from mpmath import mp

from .branches import iterate_derivative, solve_on_branch, verify_branch
from .combinatorics import fibonacci_times
from .core import BracketError, MapParams
from .discs import _orbit_value, _Workspace
from .levels import LevelPoints

__all__ = ["PetalAnalysis", "psi_petal_check"]


@dataclass
class PetalAnalysis:
    """Measured almost-involution data at one level.

    All anchor points are stored as signed doubles (their defining solves
    live in the level-point set at full precision).  `excess` is
    ell * (1 + multiplier): the distance of the multiplier from -1 in
    units of 1/ell, expected positive and stable across deep levels.
    """

    level: int
    ell: int
    inner_fixed: float
    outer_anchor: float
    prev_fixed: float
    prev_anchor: float
    anchor_preimage: float
    anchor_margin: float
    multiplier: float
    excess: float
    fixed_point_residual: float
    maps_into: bool
    image_fraction: float
    chart_radius: float
    radial_margin: float
    line_offset: float
    line_margin: float
    settle_counts: dict = field(default_factory=dict)
    anchor_solve_residual: float = 0.0
    samples: dict = field(default_factory=dict)

    def ok(self) -> bool:
        return (
            -1.0 < self.multiplier < 0.0
            and self.excess > 0.0
            and self.maps_into
            and self.radial_margin > 0.0
            and self.line_margin > 0.0
            and all(c >= 0 for c in self.settle_counts.values())
        )

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "ell": self.ell,
            "inner_fixed": self.inner_fixed,
            "outer_anchor": self.outer_anchor,
            "prev_fixed": self.prev_fixed,
            "prev_anchor": self.prev_anchor,
            "anchor_preimage": self.anchor_preimage,
            "anchor_margin": self.anchor_margin,
            "multiplier": self.multiplier,
            "excess": self.excess,
            "fixed_point_residual": self.fixed_point_residual,
            "maps_into": self.maps_into,
            "image_fraction": self.image_fraction,
            "chart_radius": self.chart_radius,
            "radial_margin": self.radial_margin,
            "line_offset": self.line_offset,
            "line_margin": self.line_margin,
            "settle_counts": {str(k): v for k, v in self.settle_counts.items()},
            "anchor_solve_residual": self.anchor_solve_residual,
            "ok": self.ok(),
        }


def _pick_anchor(points: LevelPoints, m: int, side_of: int) -> tuple:
    """The outer return point of level m, signed to lie on `side_of`'s side.

    Returns (anchor, relative margin inside the allowed window); the window
    is bounded by the branch edges one level in and two levels out.
    """
    y = abs(points.outer_return[m])
    lo = abs(points.branch_edge[m + 1])
    hi = abs(points.branch_edge[m - 1])
    margin = float(min(y - lo, hi - y) / (hi - lo)) if hi > lo else 0.0
    sign = 1 if points.branch_edge[side_of] > 0 else -1
    return sign * y, margin


def _real_iterate(ws: _Workspace, x, T: int):
    """f^T on a work-typed real value (real arithmetic, no collision check)."""
    ell, c1 = ws.ell, ws.c1
    for _ in range(T):
        x = x**ell + c1
    return x


def psi_petal_check(
    params: MapParams,
    points: LevelPoints,
    n: int,
    *,
    outer_radius_factor: float = 2.0,
    line_offset: float | None = None,
    settle_eps: tuple = (0.1,),
    work_bits: int = 192,
    circle_samples: int = 36,
    line_samples: int = 33,
    settle_starts: int = 13,
    settle_cap: int = 200,
) -> PetalAnalysis:
    """Measure the almost-involution at level n and its parabolic chart.

    Needs level points up to n+2.  `outer_radius_factor` fixes the chart
    circle at factor*ell; `line_offset` is the real part of the vertical
    test line, grid-searched for the best margin when None.
    """
    ell = params.degree
    need = [n - 1, n + 1]
    if any(m not in points.precritical for m in need) or n + 2 not in points.branch_edge:
        raise BracketError(
            f"almost-involution check at level {n} needs precritical points at "
            f"levels {need} and branch edges to {n + 2}"
        )
    S = fibonacci_times(n + 1)
    bits = points.bits

    with mp.workprec(bits):
        inner = points.precritical[n + 1]
        prev = points.precritical[n - 1]
        outer_anchor, m1 = _pick_anchor(points, n + 1, n + 2)
        prev_anchor, m2 = _pick_anchor(points, n - 1, n)
        scale = outer_anchor - inner
        slope = scale / (prev_anchor - prev)
        # multiplier of the composed map at its fixed point, and the
        # residual of the fixed-point identity itself
        v, dv = iterate_derivative(params, inner, S[n], bits=bits)
        multiplier = float(slope * dv)
        fp_res = float(abs(slope * (v - prev) / scale))
        # the interval from the critical point to the outer anchor must map
        # into itself; endpoints suffice (the composed map is monotone)
        end0 = inner + slope * (apply_iterate(params, mp.mpf(0), S[n], bits=bits) - prev)
        end1 = inner + slope * (
            apply_iterate(params, outer_anchor, S[n], bits=bits) - prev
        )
        lo_i, hi_i = sorted((mp.mpf(0), outer_anchor))
        pad = abs(outer_anchor) * mp.mpf("1e-12")
        maps_into = bool(
            lo_i - pad <= end0 <= hi_i + pad and lo_i - pad <= end1 <= hi_i + pad
        )
        image_fraction = float(abs(end0 - end1) / abs(outer_anchor))

    # image-side preimage of the previous anchor, on the branch between the
    # two already-solved image-side pullback markers
    if n in points.img_edge_pull and n in points.img_prev_edge_pull:
        with mp.workprec(bits):
            e1, e2 = points.img_edge_pull[n], points.img_prev_edge_pull[n]
            bracket = (e1, e2) if e1 <= e2 else (e2, e1)
            tol = params.precision.tol()
            width = abs(bracket[1] - bracket[0])
            cert = verify_branch(
                params, S[n] - 1, bracket, bits, touch_tol=tol * mp.mpf("1e12")
            )
            if not cert.ok:
                raise BracketError(
                    f"image-side sub-branch at level {n} lost monotonicity "
                    f"(failure at {cert.failure_time})"
                )
            lo_v, hi_v = cert.image_interval()
            atol = tol * (width / abs(hi_v - lo_v)) * mp.mpf("1e-6")
            rb = solve_on_branch(
                params,
                S[n] - 1,
                bracket,
                prev_anchor,
                certificate=cert,
                bits=bits,
                abs_tol=atol,
            )
            anchor_preimage = float(rb.x)
            anchor_res = float(abs(rb.residual))
    else:
        anchor_preimage = float("nan")
        anchor_res = float("nan")

    # ---- inverse-square chart ------------------------------------------
    ws = _Workspace(params, work_bits)
    R = outer_radius_factor * ell

    with ws:
        w_inner = ws.lift_exact(inner)
        w_prev = ws.lift_exact(prev)
        w_slope = ws.lift_exact(slope)
        w_scale = ws.lift_exact(scale)

        def second_iterate_scaled(zs: complex):
            x = w_inner + ws.lift(zs) * w_scale
            for _ in range(2):
                x = w_inner + w_slope * (_orbit_value(ws, x, S[n])[0] - w_prev)
            return complex((x - w_inner) / w_scale)

        def theta(w: complex, branch: int) -> complex:
            zs = branch * w ** -0.5
            z2 = second_iterate_scaled(zs)
            return 1.0 / (z2 * z2)

        radial_margin = math.inf
        radial_samples = []
        for rad in (R, 2.0 * R):
            for k in range(circle_samples):
                w = rad * cmath.exp(2j * math.pi * k / circle_samples)
                for br in (1, -1):
                    t = theta(w, br)
                    gain = abs(t) - abs(w)
                    if gain < radial_margin:
                        radial_margin = gain
                    if rad == R and br == 1:
                        radial_samples.append((w.real, w.imag, t.real, t.imag))

        def line_margin_at(offset: float, samples: int, branches=(1, -1)) -> float:
            half = math.sqrt(max(R * R - offset * offset, 0.0))
            worst = math.inf
            for t in np.linspace(-half, half, samples):
                w = complex(offset, float(t))
                for br in branches:
                    gain = theta(w, br).real - w.real
                    if gain < worst:
                        worst = gain
            return worst

        if line_offset is None:
            cands = np.linspace(1.0, 0.6 * R, 10)
            coarse = [(line_margin_at(float(g), 9), float(g)) for g in cands]
            line_offset = max(coarse)[1]
        line_margin = line_margin_at(float(line_offset), line_samples)
        line_samples_out = []
        half = math.sqrt(max(R * R - line_offset**2, 0.0))
        for t in np.linspace(-half, half, min(line_samples, 17)):
            w = complex(float(line_offset), float(t))
            tv = theta(w, 1)
            line_samples_out.append((w.real, w.imag, tv.real, tv.imag))

        # settle counts: how many applications bring interval points into
        # an eps-neighbourhood of the fixed point (in units of the window);
        # -1 records a start that failed to settle within the cap
        x_fixed = w_inner.real
        x_prev = w_prev.real
        x_slope = w_slope.real
        span = ws.lift_exact(outer_anchor).real
        x_scale = abs(w_scale.real)
        counts = {}
        for eps in settle_eps:
            tol_dist = float(eps) * float(x_scale)
            worst = 0
            for s in np.linspace(0.0, 1.0, settle_starts):
                x = span * float(s)
                m_count = -1
                for it in range(settle_cap + 1):
                    if abs(float(x - x_fixed)) <= tol_dist:
                        m_count = it
                        break
                    x = x_fixed + x_slope * (_real_iterate(ws, x, S[n]) - x_prev)
                if m_count < 0:
                    worst = -1
                    break
                worst = max(worst, m_count)
            counts[float(eps)] = worst

    return PetalAnalysis(
        level=n,
        ell=ell,
        inner_fixed=float(inner),
        outer_anchor=float(outer_anchor),
        prev_fixed=float(prev),
        prev_anchor=float(prev_anchor),
        anchor_preimage=anchor_preimage,
        anchor_margin=float(min(m1, m2)),
        multiplier=multiplier,
        excess=float(ell * (1.0 + multiplier)),
        fixed_point_residual=fp_res,
        maps_into=maps_into,
        image_fraction=image_fraction,
        chart_radius=float(R),
        radial_margin=float(radial_margin),
        line_offset=float(line_offset),
        line_margin=float(line_margin),
        settle_counts=counts,
        anchor_solve_residual=anchor_res,
        samples={"radial": radial_samples, "line": line_samples_out},
    )
