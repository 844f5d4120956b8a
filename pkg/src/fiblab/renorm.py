"""Affinely normalized return maps and the limit-shape sandwich.

Each level i gets a frame: the affine chart that puts the precritical point
z_{i-1} at 0 and the same-side branch edge at unit distance.  Read through
consecutive frames, the return f^{S_i} becomes a map fixing 0 with an almost
neutral derivative, and two-level composites carry the cubic Taylor
signature that the flow module models.  The deepest-level check compares a
full return branch against the closed-form limit shape in these charts.
"""

from __future__ import annotations

from dataclasses import dataclass

from mpmath import mp, mpf

from .branches import apply_iterate, iterate_derivative, verify_branch
from .combinatorics import fibonacci_times
from .core import BracketError, DynamicsError, MapParams
from .flow import gamma_deriv, gamma_map
from .levels import LevelPoints

__all__ = [
    "Frame",
    "NormalizedMap",
    "normalize_return_map",
    "TaylorCoeffs",
    "taylor_extract",
    "Miracle2Report",
    "verify_miracle2",
]


@dataclass(frozen=True)
class Frame:
    """Affine chart w = (x - center) * slope, slope of either sign."""

    center: mpf
    slope: mpf

    def __call__(self, x):
        return (x - self.center) * self.slope

    def inverse(self, w):
        return self.center + w / self.slope


def _frame_at(points: LevelPoints, i: int) -> Frame:
    """Chart at level i: z_{i-1} at 0, the same-side branch edge at +1.

    Anchoring the positive direction at the edge (rather than at a fixed
    spatial side) keeps the extracted jets aligned within a parity class;
    levels two apart sit on mirrored sides of 0, so a side-fixed chart
    would flip the even coefficients at every step.
    """
    z_prev = points.precritical[i - 1]
    gap = abs(z_prev) - abs(points.branch_edge[i])
    if not gap > 0:
        raise DynamicsError(f"degenerate frame at level {i}: |z|-|u| = {gap}")
    return Frame(center=z_prev, slope=-points.side(i + 1) / gap)


@dataclass
class NormalizedMap:
    """The return f^{S_i} read through the charts at levels i and i+2.

    Maps 0 to 0 (up to solver residuals) and reverses orientation; the
    chart unit is the z-to-edge gap, so the marked points sit near +-1.

    `twist` is the orientation of the image chart: the return sends the
    inner precritical point to the stored one or to its mirror depending
    on the side pattern, and since the map is even the mirrored chart
    reads the same values.  Composites of consecutive normalized returns
    are therefore chart-consistent with no further bookkeeping.
    """

    level: int
    params: MapParams
    time: int
    frame: Frame        # chart at level i (image side)
    inner_frame: Frame  # chart at level i+2 (domain side)
    twist: int          # +-1 orientation of the image chart
    domain: tuple       # framed w-interval on which the branch is certified
    residual: mpf
    bits: int
    coeffs: "TaylorCoeffs | None" = None

    def _pullback(self, w):
        x = self.inner_frame.inverse(w)
        lo, hi = self.domain
        if not (lo < w < hi):
            raise BracketError(
                f"w={mp.nstr(mpf(w), 8)} outside certified frame window "
                f"({mp.nstr(lo, 6)}, {mp.nstr(hi, 6)}) at level {self.level}"
            )
        return x

    def __call__(self, w):
        with mp.workprec(self.bits):
            x = self._pullback(mpf(w))
            val = apply_iterate(self.params, x, self.time, self.bits)
            return self.frame(self.twist * val)

    def deriv(self, w):
        with mp.workprec(self.bits):
            x = self._pullback(mpf(w))
            _, dv = iterate_derivative(self.params, x, self.time, self.bits)
            return self.twist * self.frame.slope / self.inner_frame.slope * dv


def normalize_return_map(
    params: MapParams,
    points: LevelPoints,
    i: int,
    *,
    bits: int | None = None,
    window: float = 1.6,
) -> NormalizedMap:
    """Build the chart-normalized return at level i.

    Needs marked points to depth i+2.  The monotone branch through z_{i+1}
    is re-certified on the pullback of [-window, window] (clipped to the
    level window) before any evaluation is allowed.
    """
    bits = bits or points.bits
    for dic, lvl, what in (
        (points.precritical, i - 1, "precritical"),
        (points.precritical, i + 1, "precritical"),
        (points.branch_edge, i, "branch edge"),
        (points.branch_edge, i + 2, "branch edge"),
    ):
        if lvl not in dic:
            raise BracketError(f"need {what} at level {lvl}; recompute deeper")
    S = fibonacci_times(i)
    with mp.workprec(bits):
        H_out = _frame_at(points, i)
        H_in = _frame_at(points, i + 2)
        z_in = points.precritical[i + 1]
        s = 1 if z_in > 0 else -1
        # monotone piece of f^{S_i} on the side of z_{i+1}: (0, |z_{i-1}|)
        edge = abs(points.precritical[i - 1])
        margin = edge / 1024
        lo_x = margin if s > 0 else -(edge - margin)
        hi_x = (edge - margin) if s > 0 else -margin
        w_lo, w_hi = sorted((H_in(lo_x), H_in(hi_x)))
        w_lo = max(w_lo, mpf(-window))
        w_hi = min(w_hi, mpf(window))
        if not (w_lo < 0 < w_hi):
            raise DynamicsError(f"frame window at level {i} does not bracket 0")
        x_int = tuple(sorted((H_in.inverse(w_lo), H_in.inverse(w_hi))))
        tol = params.precision.tol()
        cert = verify_branch(params, S[i], x_int, bits, touch_tol=tol * mpf("1e12"))
        if not cert.ok:
            raise DynamicsError(
                f"return branch at level {i} lost monotonicity at time "
                f"{cert.failure_time}"
            )
        nm = NormalizedMap(
            level=i, params=params, time=S[i], frame=H_out, inner_frame=H_in,
            twist=points.side(i) * points.side(i + 1),
            domain=(w_lo, w_hi), residual=mpf(0), bits=bits,
        )
        nm.residual = abs(nm(mpf(0)))
        if not nm.residual < mpf("1e-6"):
            raise DynamicsError(
                f"normalized return at level {i} does not fix 0: "
                f"residual {mp.nstr(nm.residual, 6)}"
            )
        return nm


@dataclass
class TaylorCoeffs:
    """Leading jet at 0 from 5-point differences at two steps, extrapolated."""

    a1: mpf
    a2: mpf
    a3: mpf
    h: mpf
    spread: mpf          # |a1(h) - a1(h/2)| before extrapolation
    residual: mpf        # |g(0)|
    alpha: mpf = None    # slow coefficient: ell*(1-|a1|) for either orientation
    beta: mpf = None     # ell * a2 (orientation-preserving case)
    gamma: mpf = None    # -a3 (orientation-preserving case)

    def as_dict(self):
        out = {k: mp.nstr(v, 17) for k, v in self.__dict__.items() if v is not None}
        return out


def _stencil(g, h):
    """5-point central first/second/third derivatives at 0, O(h^4)/O(h^2)."""
    gp2, gp1, g0, gm1, gm2 = g(2 * h), g(h), g(0), g(-h), g(-2 * h)
    d1 = (-gp2 + 8 * gp1 - 8 * gm1 + gm2) / (12 * h)
    d2 = (-gp2 + 16 * gp1 - 30 * g0 + 16 * gm1 - gm2) / (12 * h ** 2)
    d3 = (gp2 - 2 * gp1 + 2 * gm1 - gm2) / (2 * h ** 3)
    return d1, d2, d3, abs(g0)


def taylor_extract(nm, h="3e-4", *, outer=None, ell: int | None = None,
                   bits: int | None = None) -> TaylorCoeffs:
    """(a1, a2, a3) of a normalized return, or of a two-level composite.

    With `outer` given, extracts the jet of outer(nm(w)) — the composite
    whose cubic coefficients feed the flow model.  Two stencils at h and
    h/2 are combined by Richardson extrapolation; a large disagreement
    between them raises (step badly sized for the precision in use).
    """
    bits = bits or getattr(nm, "bits", None) or mp.prec
    with mp.workprec(bits):
        h = mpf(str(h)) if not isinstance(h, mpf) else h
        if outer is None:
            g = nm
        else:
            def g(w):
                return outer(nm(w))
        d1a, d2a, d3a, g0 = _stencil(g, h)
        d1b, d2b, d3b, _ = _stencil(g, h / 2)
        spread = abs(d1a - d1b)
        a1 = (16 * d1b - d1a) / 15
        a2 = (16 * d2b - d2a) / 30
        a3 = (4 * d3b - d3a) / 18
        if spread > mpf("1e-5"):
            raise BracketError(
                f"ill-conditioned jet extraction: step spread {mp.nstr(spread, 4)}"
            )
        tc = TaylorCoeffs(a1=a1, a2=a2, a3=a3, h=h, spread=spread, residual=g0)
        if ell is None:
            ell = getattr(getattr(nm, "params", None), "degree", None)
        if ell:
            tc.alpha = ell * (1 - abs(a1))
            if a1 > 0:
                tc.beta = ell * a2
                tc.gamma = -a3
        if hasattr(nm, "coeffs") and outer is None:
            nm.coeffs = tc
        return tc


@dataclass
class Miracle2Report:
    """Fit of a deep return branch against the closed-form limit shape."""

    n: int
    degree: int
    K: mpf
    value_dev: mpf       # max |F - model| / image length over the grid
    deriv_dev: mpf       # max |DF - Dmodel| / |Dmodel|
    rho: mpf             # far edge in chart units (1 = symmetric sandwich)
    anchor_residual: mpf
    grid: int
    bracket_hit: bool    # fitted K landed at an end of the search bracket

    def as_dict(self):
        return {
            "n": self.n,
            "degree": self.degree,
            "K": mp.nstr(self.K, 12),
            "value_dev": mp.nstr(self.value_dev, 8),
            "deriv_dev": mp.nstr(self.deriv_dev, 8),
            "rho": mp.nstr(self.rho, 12),
            "anchor_residual": mp.nstr(self.anchor_residual, 6),
            "grid": self.grid,
            "bracket_hit": self.bracket_hit,
        }


def verify_miracle2(
    params: MapParams,
    points: LevelPoints,
    n: int,
    *,
    grid: int = 33,
    bits: int | None = None,
    k_bracket=("1e-3", "20"),
) -> Miracle2Report:
    """Fit K so the chart model K-root-curve matches f^{S_{n-2}} on the
    off-center branch [x_{n-1}, u_{n-1}], and report the deviations.

    Everything runs on the positive-side representative of the branch: the
    domain [|u_{n-1}|, |x_{n-1}|] straddles |z_{n-2}|, maps onto the edge
    pair [u_{n-2}, -u_{n-2}], and the model is w -> -u_{n-2} * Gamma_K(w)
    in the chart anchored at |z_{n-2}|.  K minimizes the max value
    deviation by golden-section; the derivative deviation is reported at
    the fitted K.
    """
    bits = bits or points.bits
    for dic, lvl in ((points.branch_edge, n - 1), (points.branch_far_edge, n - 1),
                     (points.precritical, n - 2), (points.branch_edge, n - 2)):
        if lvl not in dic:
            raise BracketError(f"insufficient depth: need level {lvl}")
    S = fibonacci_times(n)
    l = params.degree
    with mp.workprec(bits):
        u_in = abs(points.branch_edge[n - 1])
        x_in = abs(points.branch_far_edge[n - 1])
        z_mid = abs(points.precritical[n - 2])
        u_out = points.branch_edge[n - 2]
        if not (u_in < z_mid < x_in):
            raise DynamicsError(f"level-{n} branch does not straddle its zero")
        lam = 1 / (z_mid - u_in)
        rho = (x_in - z_mid) * lam
        image_len = 2 * abs(u_out)

        # chart with the near edge at +1 (w positive toward the edge), so
        # the model is w -> u_{n-2} * Gamma(w) with both anchors exact
        ws, Fs, DFs = [], [], []
        for k in range(grid):
            t = mpf(k) / (grid - 1)
            x = u_in + t * (x_in - u_in)
            val, dv = iterate_derivative(params, x, S[n - 2], bits)
            ws.append((z_mid - x) * lam)
            Fs.append(val)
            DFs.append(dv)
        anchor = abs(Fs[0] - u_out) / abs(u_out)

        def devs(K):
            vmax = mpf(0)
            dmax = mpf(0)
            for w, Fv, DFv in zip(ws, Fs, DFs):
                model = u_out * gamma_map(K, l, w, bits)
                dmodel = -u_out * gamma_deriv(K, l, w, bits) * lam
                vmax = max(vmax, abs(Fv - model) / image_len)
                dmax = max(dmax, abs(DFv - dmodel) / abs(dmodel))
            return vmax, dmax

        lo, hi = (mpf(str(k_bracket[0])), mpf(str(k_bracket[1])))
        invphi = (mp.sqrt(5) - 1) / 2
        a, b = lo, hi
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc = devs(c)[0]
        fd = devs(d)[0]
        for _ in range(48):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = devs(c)[0]
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = devs(d)[0]
        K = (a + b) / 2
        value_dev, deriv_dev = devs(K)
        bracket_hit = (K - lo) < (hi - lo) / 1000 or (hi - K) < (hi - lo) / 1000
        return Miracle2Report(
            n=n, degree=l, K=K, value_dev=value_dev, deriv_dev=deriv_dev,
            rho=rho, anchor_residual=anchor, grid=grid, bracket_hit=bracket_hit,
        )
