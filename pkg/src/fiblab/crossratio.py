"""Cross-ratio operators, Koebe checks, and the deep-branch derivative profile.

Three classical distortion measures for a monotone map on an interval:

* ``C`` — the four-point ratio of an interval and a strict sub-interval;
* ``B`` — the multiplier by which a map changes ``C`` (at least 1 for maps
  with negative Schwarzian derivative, exactly computable for pure powers);
* ``A`` — a two-point operator built from the endpoint derivatives, with an
  exact chain rule and a product inequality for adjacent intervals.

The product inequality for ``A`` reduces, for pure powers, to positivity of
two explicit integer/rational sequences; those are checked here in exact
arithmetic (no floats).  The module ends with the measured derivative
profile of the deep return branch of a Fibonacci map: the derivative at a
point whose image lands ``i`` annuli deep grows like ``i^(3/2)``, measurably
flatter than the ``i^2`` a naive Koebe argument would give.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

from mpmath import mp, mpf

from .branches import (
    BranchCertificate,
    apply_iterate,
    iterate_derivative,
    solve_on_branch,
    verify_branch,
)
from .combinatorics import fibonacci_times
from .core import BracketError, DynamicsError, MapParams

__all__ = [
    "IntervalPair",
    "MonotoneBranch",
    "cross_ratio_C",
    "cross_ratio_B",
    "pure_power_B",
    "cross_ratio_A",
    "power_A",
    "AInequalityReport",
    "verify_A_inequality",
    "a_split_product",
    "a_inequality_sweep",
    "b_random_pairs",
    "taylor_coefficient_check",
    "taylor_coefficient_oracle",
    "quadratic_inequality_check",
    "KoebeReport",
    "koebe_distortion_check",
    "ProfileReport",
    "derivative_profile",
]


def _as_mpf(x):
    return x if isinstance(x, mpf) else mpf(str(x))


@dataclass(frozen=True)
class IntervalPair:
    """An interval `t` with a strict sub-interval `j` (possibly a point).

    `l` and `r` are the two components of t minus j; both must be nonempty,
    so j never touches the boundary of t.  Endpoints are converted with the
    ambient mpmath precision — construct pairs inside the same `mp.workprec`
    block as the branch they will be used with.
    """

    t: tuple
    j: tuple

    def __post_init__(self):
        t0, t1 = (_as_mpf(v) for v in self.t)
        j0, j1 = (_as_mpf(v) for v in self.j)
        if not t0 < t1:
            raise BracketError(f"t must be nondegenerate, got {self.t}")
        if not j0 <= j1:
            raise BracketError(f"j must be ordered, got {self.j}")
        if not (t0 < j0 and j1 < t1):
            raise BracketError("j must lie strictly inside t")
        object.__setattr__(self, "t", (t0, t1))
        object.__setattr__(self, "j", (j0, j1))

    @property
    def l(self) -> tuple:
        return (self.t[0], self.j[0])

    @property
    def r(self) -> tuple:
        return (self.j[1], self.t[1])

    @property
    def is_point(self) -> bool:
        return self.j[0] == self.j[1]

    def widths(self):
        return (
            self.t[1] - self.t[0],
            self.j[1] - self.j[0],
            self.j[0] - self.t[0],
            self.t[1] - self.j[1],
        )


@dataclass
class MonotoneBranch:
    """f^T restricted to an interval on which it is a certified diffeomorphism."""

    params: MapParams
    T: int
    domain: tuple
    certificate: BranchCertificate
    bits: int

    @classmethod
    def certify(cls, params: MapParams, T: int, domain, bits: int | None = None,
                touch_tol=None) -> "MonotoneBranch":
        bits = bits or params.precision.bits
        cert = verify_branch(params, T, domain, bits, touch_tol=touch_tol)
        if not cert.ok:
            raise DynamicsError(
                f"f^{T} is not monotone on {domain} (lost at time {cert.failure_time})"
            )
        return cls(params, T, tuple(cert.interval), cert, bits)

    def __call__(self, x) -> mpf:
        return apply_iterate(self.params, x, self.T, self.bits)

    def deriv(self, x):
        """(f^T(x), Df^T(x))."""
        return iterate_derivative(self.params, x, self.T, self.bits)

    def _require_inside(self, *xs):
        a, b = self.domain
        for x in xs:
            if not (a <= x <= b):
                raise BracketError(f"{x} outside branch domain {self.domain}")


def cross_ratio_C(pair: IntervalPair) -> mpf:
    """(|t|/|l|) * (|j|/|r|); tends to 0 as j degenerates to a point."""
    wt, wj, wl, wr = pair.widths()
    if wl == 0 or wr == 0:
        raise BracketError("degenerate side interval")
    return (wt / wl) * (wj / wr)


def cross_ratio_B(branch: MonotoneBranch, pair: IntervalPair, bits: int | None = None) -> mpf:
    """Ratio of the image pair's C to the original pair's C.

    When `j` is a single point the quotient |J|/|j| is replaced by the
    derivative of the branch at that point, which is its limit.
    """
    bits = bits or branch.bits
    with mp.workprec(bits):
        t0, t1 = pair.t
        j0, j1 = pair.j
        branch._require_inside(t0, t1)
        wt, wj, wl, wr = pair.widths()
        T0, T1 = branch(t0), branch(t1)
        J0 = branch(j0)
        WT = abs(T1 - T0)
        if pair.is_point:
            _, d = branch.deriv(j0)
            stretch = WT * abs(d) / wt
            WL = abs(J0 - T0)
            WR = abs(T1 - J0)
        else:
            J1 = branch(j1)
            stretch = WT * abs(J1 - J0) / (wt * wj)
            WL = abs(J0 - T0)
            WR = abs(T1 - J1)
        if WL == 0 or WR == 0:
            raise BracketError("image pair degenerate; raise precision")
        return stretch * (wl * wr) / (WL * WR)


def pure_power_B(degree: int, gamma, alpha, bits: int = 128):
    """Exact B of x^degree on t=(0, gamma) with j the single point alpha.

    Returns (value, lower_bound) where the bound is degree*(1 - alpha/gamma);
    the value exceeds the bound because gamma^l/(gamma^l - alpha^l) > 1.
    """
    with mp.workprec(bits):
        g = _as_mpf(gamma)
        a = _as_mpf(alpha)
        if not 0 < a < g:
            raise BracketError(f"need 0 < alpha < gamma, got {alpha}, {gamma}")
        lower = degree * (1 - a / g)
        value = lower * g ** degree / (g ** degree - a ** degree)
        return value, lower


def cross_ratio_A(g, J, dg=None, bits: int = 128) -> mpf:
    """[|g(J)|/|J|]^2 / (|Dg(a)| |Dg(b)|) for a monotone g on J=(a, b).

    `g` may be a MonotoneBranch (derivatives come from the orbit chain rule)
    or a plain callable, in which case `dg` must be supplied.
    """
    with mp.workprec(bits if not isinstance(g, MonotoneBranch) else g.bits):
        a, b = (_as_mpf(v) for v in J)
        if not a < b:
            raise BracketError(f"need a < b, got {J}")
        if isinstance(g, MonotoneBranch):
            g._require_inside(a, b)
            ga, da = g.deriv(a)
            gb, db = g.deriv(b)
        else:
            if dg is None:
                raise ValueError("plain callable needs dg")
            ga, gb = _as_mpf(g(a)), _as_mpf(g(b))
            da, db = _as_mpf(dg(a)), _as_mpf(dg(b))
        if da == 0 or db == 0:
            raise DynamicsError("zero endpoint derivative")
        return ((gb - ga) / (b - a)) ** 2 / abs(da * db)


def power_A(degree: int, J, bits: int = 128) -> mpf:
    """A of the pure power x^degree on an interval in one component of R - {0}."""
    with mp.workprec(bits):
        a, b = (_as_mpf(v) for v in J)
        if not a < b or a * b <= 0:
            raise BracketError("interval must avoid 0 and be nondegenerate")
        a, b = abs(a), abs(b)
        if a > b:
            a, b = b, a
        chord = (b ** degree - a ** degree) / (b - a)
        return chord ** 2 / (degree ** 2 * a ** (degree - 1) * b ** (degree - 1))


@dataclass
class AInequalityReport:
    degree: int
    left: tuple
    right: tuple
    product: mpf
    sqrt_whole: mpf
    margin: mpf
    ok: bool


def verify_A_inequality(degree: int, T1, T2, bits: int = 192) -> AInequalityReport:
    """Check A(f,T')A(f,T'') >= sqrt(A(f, T' u T'')) for f = x^degree.

    T' and T'' must share exactly one endpoint and sit in one component of
    R minus {0}.
    """
    with mp.workprec(bits):
        a1, b1 = sorted(_as_mpf(v) for v in T1)
        a2, b2 = sorted(_as_mpf(v) for v in T2)
        if b1 == a2:
            lo, mid, hi = a1, b1, b2
        elif b2 == a1:
            lo, mid, hi = a2, b2, b1
        else:
            raise BracketError("intervals must share exactly one endpoint")
        if lo * hi <= 0:
            raise BracketError("union must avoid 0")
        prod = power_A(degree, (lo, mid), bits) * power_A(degree, (mid, hi), bits)
        rhs = mp.sqrt(power_A(degree, (lo, hi), bits))
        margin = prod - rhs
        return AInequalityReport(degree, (lo, mid), (mid, hi), prod, rhs, margin,
                                 ok=margin >= 0)


def a_split_product(degree: int, alpha, beta, x, bits: int = 192) -> mpf:
    """A(f,[alpha,x]) * A(f,[x,beta]) for f = x^degree, used to probe where
    the product is smallest over the split point x (the geometric mean)."""
    with mp.workprec(bits):
        a, b, xx = _as_mpf(alpha), _as_mpf(beta), _as_mpf(x)
        if not a < xx < b:
            raise BracketError("x must split (alpha, beta)")
        return power_A(degree, (a, xx), bits) * power_A(degree, (xx, b), bits)


def a_inequality_sweep(degree: int, count: int = 1000, seed: int = 20260823,
                       bits: int = 160):
    """Randomized adjacent-interval pairs; returns (worst_margin, failures).

    Multiplicative sampling: the product is scale-invariant, so only the two
    log-lengths matter.
    """
    rng = random.Random(seed)
    worst = None
    failures = []
    for _ in range(count):
        base = math.exp(rng.uniform(-2.0, 2.0))
        s1 = rng.uniform(0.05, 2.5)
        s2 = rng.uniform(0.05, 2.5)
        lo = base
        mid = base * math.exp(s1)
        hi = mid * math.exp(s2)
        rep = verify_A_inequality(degree, (lo, mid), (mid, hi), bits)
        rel = rep.margin / rep.sqrt_whole
        if worst is None or rel < worst:
            worst = rel
        if not rep.ok:
            failures.append((lo, mid, hi))
    return worst, failures


def b_random_pairs(branch: MonotoneBranch, count: int = 200, seed: int = 20260823):
    """Min of B over random sub-pairs of the branch domain (expected >= 1)."""
    rng = random.Random(seed)
    a, b = branch.domain
    with mp.workprec(branch.bits):
        width = b - a
        bmin = None
        for _ in range(count):
            cuts = sorted(rng.uniform(0.02, 0.98) for _ in range(4))
            if cuts[1] - cuts[0] < 1e-3 or cuts[3] - cuts[2] < 1e-3 or cuts[2] - cuts[1] < 1e-3:
                continue
            pair = IntervalPair(
                (a + width * mpf(cuts[0]), a + width * mpf(cuts[3])),
                (a + width * mpf(cuts[1]), a + width * mpf(cuts[2])),
            )
            val = cross_ratio_B(branch, pair)
            if bmin is None or val < bmin:
                bmin = val
        return bmin


# --------------------------------------------------------------------------
# exact sequence checks behind the adjacent-interval inequality


def taylor_coefficient_check(n: int) -> Fraction:
    """Coefficient of t^n in (e^t-1)^3 - (e^t+1)e^t t^3/2, exactly.

    Zero for n = 2..6, then 1/240 at n = 7 and strictly positive after; this
    positivity is what makes the adjacent-interval product inequality work
    for large degrees.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    cubic = Fraction(3 ** n - 3 * 2 ** n + 3, math.factorial(n))
    if n < 3:
        return cubic
    shift = Fraction(n * (n - 1) * (n - 2), 2) * Fraction(2 ** (n - 3) + 1, math.factorial(n))
    return cubic - shift


def taylor_coefficient_oracle(n: int) -> Fraction:
    """Same coefficient by brute-force exact series arithmetic.

    Builds the series of e^t - 1, cubes it by convolution, subtracts the
    shifted series of (e^{2t} + e^t)/2; shares no algebra with the closed
    form above.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    N = n
    em1 = [Fraction(1, math.factorial(k)) for k in range(N + 1)]
    em1[0] = Fraction(0)

    def convolve(p, q):
        out = [Fraction(0)] * (N + 1)
        for i, pi in enumerate(p):
            if pi == 0:
                continue
            for j_, qj in enumerate(q):
                if i + j_ > N:
                    break
                out[i + j_] += pi * qj
        return out

    cubed = convolve(convolve(em1, em1), em1)
    mix = [
        (Fraction(2 ** k, math.factorial(k)) + Fraction(1, math.factorial(k))) / 2
        for k in range(N + 1)
    ]
    total = list(cubed)
    for k in range(N + 1):
        if k + 3 <= N:
            total[k + 3] -= mix[k]
    return total[n]


def quadratic_inequality_check(n: int) -> int:
    """Exact margin 4^n + 6*2^n - 4*3^n - 4 (>= 0 for n >= 1).

    Equality exactly at n = 1, 2, 3; this is the degree-2 counterpart of the
    Taylor-coefficient positivity above.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    return 4 ** n + 6 * 2 ** n - 4 * 3 ** n - 4


# --------------------------------------------------------------------------
# Koebe distortion check


@dataclass
class KoebeReport:
    tau: mpf
    bound: mpf
    measured: mpf
    ok: bool
    samples: int


def koebe_distortion_check(branch: MonotoneBranch, j, tau, samples: int = 33) -> KoebeReport:
    """Max derivative ratio over j against the ((1+tau)/tau)^2 Koebe bound.

    Requires the branch image to contain a tau-scaled neighbourhood of the
    image of j on both sides.
    """
    with mp.workprec(branch.bits):
        a, b = (_as_mpf(v) for v in j)
        tau = _as_mpf(tau)
        branch._require_inside(a, b)
        d0, d1 = branch.domain
        ia, ib = sorted((branch(a), branch(b)))
        img_lo, img_hi = sorted((branch(d0), branch(d1)))
        wj = ib - ia
        if img_lo > ia - tau * wj or img_hi < ib + tau * wj:
            raise BracketError(
                f"branch image lacks the {tau}-scaled neighbourhood of the image of j"
            )
        lo_d = None
        hi_d = None
        for k in range(samples):
            x = a + (b - a) * mpf(k) / (samples - 1)
            _, d = branch.deriv(x)
            d = abs(d)
            if lo_d is None or d < lo_d:
                lo_d = d
            if hi_d is None or d > hi_d:
                hi_d = d
        measured = hi_d / lo_d
        bound = ((1 + tau) / tau) ** 2
        return KoebeReport(tau=tau, bound=bound, measured=measured,
                           ok=measured <= bound, samples=samples)


# --------------------------------------------------------------------------
# derivative profile of the deep return branch


@dataclass
class ProfileReport:
    """Normalized derivative of the deep return branch versus landing depth.

    `norm` holds |Df^T(y)| * |T_dom| / |image| for the sample point whose
    image lands i annuli deep (geometric mean over the two symmetric sides).
    `exponent` is the log-log slope fitted over i in [2, degree]; the two
    endpoint constants and the value above the deepest interior point are
    the natural normalizations at the ends of the profile.
    """

    n: int
    degree: int
    i_values: list
    norm: list
    norm_sides: list
    exponent: float | None
    amplitude: float | None
    r_squared: float | None
    endpoint_const: mpf
    endpoint_const_far: mpf
    root_norm: mpf
    root_const: mpf
    cap: mpf
    fit_range: tuple
    ramp_i: list = field(default_factory=list)
    ramp: list = field(default_factory=list)

    def as_dict(self):
        out = {
            "n": self.n,
            "degree": self.degree,
            "i": list(self.i_values),
            "normalized_derivative": [mp.nstr(v, 17) for v in self.norm],
            "exponent": self.exponent,
            "amplitude": self.amplitude,
            "r_squared": self.r_squared,
            "endpoint_const": mp.nstr(self.endpoint_const, 17),
            "endpoint_const_far": mp.nstr(self.endpoint_const_far, 17),
            "root_norm": mp.nstr(self.root_norm, 17),
            "root_const": mp.nstr(self.root_const, 17),
            "cap_sqrt_degree": mp.nstr(self.cap, 17),
            "fit_range": list(self.fit_range),
            "ramp_i": list(self.ramp_i),
            "ramp": [mp.nstr(v, 17) for v in self.ramp],
        }
        return out


def derivative_profile(params: MapParams, points, n: int, *, i_max: int | None = None,
                       bits: int | None = None) -> ProfileReport:
    """Measure how the deep return branch's derivative grows with landing depth.

    The branch is the return composition of level n-2 restricted to the
    off-center interval of level n-1; it maps that interval onto the full
    level-(n-2) window.  A sample point is taken in each annulus between
    consecutive deeper windows (index i counts levels below n), on both
    sides, and the derivative there is normalized by the branch's mean
    slope.  The profile should grow like i^(3/2) up to i = degree and
    saturate near sqrt(degree) after.
    """
    bits = bits or points.bits
    l = params.degree
    S = fibonacci_times(max(n, 3))
    T = S[n - 2]
    avail = points.edge_depth - n - 1
    if avail < 3:
        raise DynamicsError(
            f"edge points reach level {points.edge_depth}; need at least {n + 4}"
        )
    if i_max is None:
        i_max = min(l + 4, avail)
    i_max = min(i_max, avail)
    with mp.workprec(bits):
        u_prev = abs(points.branch_edge[n - 1])
        x_prev = abs(points.branch_far_edge[n - 1])
        z_prev = abs(points.precritical[n - 2])
        dom = (u_prev, x_prev)
        image_len = 2 * abs(points.branch_edge[n - 2])
        scale = (x_prev - u_prev) / image_len
        touch = params.precision.tol() * mpf("1e12")
        cert = verify_branch(params, T, dom, bits, touch_tol=touch)
        if not cert.ok:
            raise DynamicsError(f"deep return branch not monotone at level {n}")

        def norm_at(y):
            _, d = iterate_derivative(params, y, T, bits)
            return abs(d) * scale

        def annulus_sample(i):
            outer = abs(points.branch_edge[n + i])
            inner = abs(points.branch_edge[n + i + 1])
            tgt = mp.sqrt(outer * inner)
            vals = []
            for sgn in (1, -1):
                res = solve_on_branch(params, T, dom, sgn * tgt, certificate=cert, bits=bits)
                vals.append(norm_at(res.x))
            return vals

        i_values = []
        norm = []
        norm_sides = []
        for i in range(2, i_max + 1):
            vals = annulus_sample(i)
            i_values.append(i)
            norm_sides.append(tuple(vals))
            norm.append(mp.sqrt(vals[0] * vals[1]))
        # the outermost annuli, outside the fit range; this is where the
        # profile actually climbs at desk scales
        ramp_i = list(range(-2, 2))
        ramp = []
        for i in ramp_i:
            vals = annulus_sample(i)
            ramp.append(mp.sqrt(vals[0] * vals[1]))

        fit_hi = min(l, i_max)
        xs = [math.log(i) for i, _ in zip(i_values, norm) if i <= fit_hi]
        ys = [math.log(float(v)) for i, v in zip(i_values, norm) if i <= fit_hi]
        exponent = amplitude = r2 = None
        if len(xs) >= 3:
            m = len(xs)
            mx = sum(xs) / m
            my = sum(ys) / m
            sxx = sum((x - mx) ** 2 for x in xs)
            sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
            exponent = sxy / sxx
            intercept = my - exponent * mx
            amplitude = math.exp(intercept) * l
            ss_res = sum((y - (intercept + exponent * x)) ** 2 for x, y in zip(xs, ys))
            ss_tot = sum((y - my) ** 2 for y in ys)
            r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

        n_end = norm_at(u_prev)
        n_far = norm_at(x_prev)
        n_root = norm_at(z_prev)
        cap = mp.sqrt(l)
        return ProfileReport(
            n=n,
            degree=l,
            i_values=i_values,
            norm=norm,
            norm_sides=norm_sides,
            exponent=exponent,
            amplitude=amplitude,
            r_squared=r2,
            endpoint_const=n_end * l,
            endpoint_const_far=n_far * l,
            root_norm=n_root,
            root_const=n_root / cap,
            cap=cap,
            fit_range=(2, fit_hi),
            ramp_i=ramp_i,
            ramp=ramp,
        )
