"""The cubic slow-decay flow and long compositions of near-flow maps.

A single differential equation, x' = -(a/l)x - g x^3, organizes the deep
asymptotics of the return maps: its time-1 map has an almost neutral fixed
point at 0 with the same Taylor signature as the affinely normalized return
compositions, and long products of such maps shadow the flow itself.  This
module has the closed-form flow, an independent Runge-Kutta oracle for it,
the orbit-sum estimates, the limiting one-parameter family built from a
Moebius map in the square variable, synthetic map families satisfying the
composition theorem's hypotheses, and the tracker comparing a composition
against the flow.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from mpmath import mp, mpf

from .core import BracketError, DynamicsError

__all__ = [
    "FlowParams",
    "flow_phi",
    "flow_phi_deriv",
    "flow_phi_numeric",
    "FlowSums",
    "flow_sums",
    "gamma_map",
    "gamma_inverse",
    "gamma_deriv",
    "moebius_squared",
    "ThetaMap",
    "FlowTheta",
    "synthetic_theta",
    "theta_check_self_map",
    "CompositionTrace",
    "compose_track",
]


def _as_mpf(x):
    return x if isinstance(x, mpf) else mpf(str(x))


@dataclass(frozen=True)
class FlowParams:
    """Coefficients of x' = -(alpha/ell) x - gamma x^3 (ell continuous here)."""

    alpha: float = 1.0
    gamma: float = 1.0
    ell: float = 16.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.gamma > 0 and self.ell > 0):
            raise ValueError("alpha, gamma, ell must all be positive")


def flow_phi(fp: FlowParams, t, x, bits: int = 96) -> mpf:
    """Closed-form flow value at time t from x.

    Derived by integrating the equation for 1/x^2, which is linear; the
    solution decays like exp(-alpha t / ell) once the cubic term has burned
    off the O(1) part of the initial condition.
    """
    with mp.workprec(bits):
        t = _as_mpf(t)
        x = _as_mpf(x)
        if t < 0:
            raise ValueError("t must be >= 0")
        if x == 0:
            return mpf(0)
        if t == 0:
            return x
        a = _as_mpf(fp.alpha)
        g = _as_mpf(fp.gamma)
        l = _as_mpf(fp.ell)
        decay = mp.exp(-a * t / l)
        bulge = (g * l / a) * (1 - decay ** 2) * x ** 2 + 1
        return x * decay / mp.sqrt(bulge)


def flow_phi_deriv(fp: FlowParams, t, x, bits: int = 96) -> mpf:
    """d/dx of the closed-form flow: exp(-a t/l) * (B x^2 + 1)^(-3/2)."""
    with mp.workprec(bits):
        t = _as_mpf(t)
        x = _as_mpf(x)
        a = _as_mpf(fp.alpha)
        g = _as_mpf(fp.gamma)
        l = _as_mpf(fp.ell)
        decay = mp.exp(-a * t / l)
        B = (g * l / a) * (1 - decay ** 2)
        return decay / (B * x ** 2 + 1) ** mpf("1.5")


def flow_phi_numeric(fp: FlowParams, t, x, steps: int, bits: int = 96) -> mpf:
    """Integrate the defining equation with classical 4th-order Runge-Kutta.

    Integration happens in the log of |x|: u' = -a/l - g exp(2u).  That
    keeps the iteration well-scaled through many decades of decay and
    preserves the sign and the fixed point at 0 exactly.  Built as an
    oracle for `flow_phi`; shares no algebra with the closed form.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    with mp.workprec(bits):
        t = _as_mpf(t)
        x = _as_mpf(x)
        if x == 0 or t == 0:
            return x
        sign = 1 if x > 0 else -1
        a = _as_mpf(fp.alpha)
        g = _as_mpf(fp.gamma)
        l = _as_mpf(fp.ell)
        h = t / steps
        if h == 0:
            raise DynamicsError("step size underflowed at this precision")
        u = mp.log(abs(x))

        def du(uv):
            return -a / l - g * mp.exp(2 * uv)

        for _ in range(steps):
            k1 = du(u)
            k2 = du(u + h * k1 / 2)
            k3 = du(u + h * k2 / 2)
            k4 = du(u + h * k3)
            u = u + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        return sign * mp.exp(u)


@dataclass
class FlowSums:
    S1: mpf
    S2: mpf
    S3: mpf
    tails: tuple
    cutoff: int
    c_sqrt: mpf  # S1 / sqrt(ell)
    c_log: mpf   # S2 / log(ell)
    c_one: mpf   # S3 itself

    def as_dict(self):
        return {
            "S1": mp.nstr(self.S1, 17),
            "S2": mp.nstr(self.S2, 17),
            "S3": mp.nstr(self.S3, 17),
            "tails": [mp.nstr(v, 6) for v in self.tails],
            "cutoff": self.cutoff,
            "S1_over_sqrt_ell": mp.nstr(self.c_sqrt, 17),
            "S2_over_log_ell": mp.nstr(self.c_log, 17),
            "S3": mp.nstr(self.c_one, 17),
        }


def flow_sums(fp: FlowParams, x, cutoff: int, tol="1e-12", bits: int = 96) -> FlowSums:
    """Orbit sums sum |phi_i|^p for p = 1, 2, 3 with geometric tail bounds.

    The flow decays like exp(-a t / l) for large t, so the tail beyond the
    cutoff is bounded by a geometric series; raises if that bound exceeds
    `tol` (cutoff too small).
    """
    with mp.workprec(bits):
        x = _as_mpf(x)
        tol = _as_mpf(tol)
        if abs(x) > 1:
            raise BracketError("need |x| <= 1")
        a = _as_mpf(fp.alpha)
        l = _as_mpf(fp.ell)
        if x == 0:
            zero = mpf(0)
            return FlowSums(zero, zero, zero, (zero, zero, zero), cutoff, zero, zero, zero)
        S = [mpf(0)] * 3
        v = abs(x)
        for i in range(cutoff + 1):
            v = abs(flow_phi(fp, 1, v, bits)) if i else v
            S[0] += v
            S[1] += v ** 2
            S[2] += v ** 3
        r = mp.exp(-a / l)
        tails = tuple(v ** p * r ** p / (1 - r ** p) for p in (1, 2, 3))
        if any(tl > tol for tl in tails):
            raise BracketError(
                f"cutoff {cutoff} leaves a tail above {tol}; increase it"
            )
        ell = _as_mpf(fp.ell)
        return FlowSums(S[0], S[1], S[2], tails, cutoff,
                        c_sqrt=S[0] / mp.sqrt(ell),
                        c_log=S[1] / mp.log(ell),
                        c_one=S[2])


# --------------------------------------------------------------------------
# the limiting one-parameter family


def gamma_map(K, l, x, bits: int = 96) -> mpf:
    """x * sqrt(K l + 1) / sqrt(K l x^2 + 1): the limit shape of the deep
    return diffeomorphism in its affine frame."""
    with mp.workprec(bits):
        K = _as_mpf(K)
        l = _as_mpf(l)
        x = _as_mpf(x)
        if K <= 0 or l <= 0:
            raise BracketError("K and l must be positive")
        return x * mp.sqrt(K * l + 1) / mp.sqrt(K * l * x ** 2 + 1)


def gamma_inverse(K, l, y, bits: int = 96) -> mpf:
    """Inverse of gamma_map on [-1, 1]."""
    with mp.workprec(bits):
        K = _as_mpf(K)
        l = _as_mpf(l)
        y = _as_mpf(y)
        if K <= 0 or l <= 0:
            raise BracketError("K and l must be positive")
        if abs(y) > 1:
            raise BracketError("inverse defined on [-1, 1]")
        return y / mp.sqrt(K * l * (1 - y ** 2) + 1)


def gamma_deriv(K, l, x, bits: int = 96) -> mpf:
    """sqrt(K l + 1) / (K l x^2 + 1)^(3/2)."""
    with mp.workprec(bits):
        K = _as_mpf(K)
        l = _as_mpf(l)
        x = _as_mpf(x)
        return mp.sqrt(K * l + 1) / (K * l * x ** 2 + 1) ** mpf("1.5")


def moebius_squared(K, l, x, bits: int = 96) -> mpf:
    """sign(x) * sqrt(M(x^2)) with M(t) = t(Kl+1)/(Kl t+1).

    The same map as `gamma_map`, written as square map -> Moebius -> root;
    the Moebius factor is what pushes interior points hard toward the ends.
    """
    with mp.workprec(bits):
        K = _as_mpf(K)
        l = _as_mpf(l)
        x = _as_mpf(x)
        t = x ** 2
        m = t * (K * l + 1) / (K * l * t + 1)
        s = mp.sqrt(m)
        return s if x >= 0 else -s


# --------------------------------------------------------------------------
# synthetic families for the composition theorem


@dataclass
class ThetaMap:
    """A diffeomorphism of (-1,1) with jet (1-a/l)x + (b/l)x^2 - c x^3 + O(x^4).

    A plain cubic polynomial with c of order 1 loses injectivity inside
    (-1,1) (its derivative vanishes near 1/sqrt(3c)), so the quartic-and-up
    remainder is not optional: here the map is the exact time-1 flow with
    coefficients (a, c), times the factor 1 + (b/l)x + q x^3, which keeps
    the required jet while staying monotone for moderate b and q.
    """

    a: mpf
    b: mpf
    c: mpf
    q: mpf
    ell: mpf
    bits: int = 96

    def __post_init__(self):
        self._fp = FlowParams(float(self.a), float(self.c), float(self.ell))

    def __call__(self, x):
        x = _as_mpf(x)
        core = flow_phi(self._fp, 1, x, self.bits)
        return core * (1 + (self.b / self.ell) * x + self.q * x ** 3)

    def deriv(self, x):
        x = _as_mpf(x)
        core = flow_phi(self._fp, 1, x, self.bits)
        dcore = flow_phi_deriv(self._fp, 1, x, self.bits)
        g = (self.b / self.ell) * x + self.q * x ** 3
        dg = self.b / self.ell + 3 * self.q * x ** 2
        return dcore * (1 + g) + core * dg


@dataclass
class FlowTheta:
    """The exact time-1 flow map as a composition element.

    Satisfies the theorem's hypotheses exactly, and composes to the flow
    itself by the semigroup property — the trivial anchor for the tracker.
    """

    fp: FlowParams
    bits: int = 96

    def __call__(self, x):
        return flow_phi(self.fp, 1, x, self.bits)

    def deriv(self, x):
        return flow_phi_deriv(self.fp, 1, x, self.bits)


def theta_check_self_map(theta, grid: int = 1000, bits: int = 96):
    """Hypothesis check: theta is monotone on (-1,1) with |theta(x)| < |x|.

    Both clauses matter — contraction alone admits folded maps that the
    composition theorem excludes.  Checked on a symmetric grid; raises on
    any violation.
    """
    with mp.workprec(bits):
        for k in range(1, grid + 1):
            x = mpf(2 * k - grid - 1) / (grid + 1)
            if x != 0:
                y = theta(x)
                if abs(y) >= abs(x):
                    raise DynamicsError(
                        f"self-map hypothesis fails at x={mp.nstr(x, 8)}: "
                        f"|theta(x)|={mp.nstr(abs(y), 8)} >= |x|"
                    )
            if hasattr(theta, "deriv") and not theta.deriv(x) > 0:
                raise DynamicsError(
                    f"not a diffeomorphism: derivative {mp.nstr(theta.deriv(x), 6)} "
                    f"at x={mp.nstr(x, 8)}"
                )
        return True


def synthetic_theta(fp: FlowParams, perturb, count: int, seed: int = 20260823,
                    beta=1.0, quartic=0.05, bits: int = 96, check: bool = True):
    """A family of `count` near-identical maps around the flow's model.

    Coefficient perturbations are uniform in [-perturb, perturb]; the
    composition theorem wants perturb <= C/ell.  Each map is verified to be
    a monotone contraction of (-1,1) unless `check` is disabled.
    """
    rng = random.Random(seed)
    with mp.workprec(bits):
        ell = _as_mpf(fp.ell)
        eps = _as_mpf(perturb)
        thetas = []
        for _ in range(count):
            a = _as_mpf(fp.alpha) + eps * (2 * mpf(rng.random()) - 1)
            b = _as_mpf(beta) + eps * (2 * mpf(rng.random()) - 1)
            c = _as_mpf(fp.gamma) + eps * (2 * mpf(rng.random()) - 1)
            q = _as_mpf(quartic) * (2 * mpf(rng.random()) - 1)
            if a <= 0 or c <= 0:
                raise DynamicsError("perturbation drove a coefficient nonpositive")
            thetas.append(ThetaMap(a=a, b=b, c=c, q=q, ell=ell, bits=bits))
        if check:
            for th in thetas[: min(8, count)]:
                theta_check_self_map(th, grid=257, bits=bits)
        return thetas


# --------------------------------------------------------------------------
# composition tracking


@dataclass
class CompositionTrace:
    """A composition F_k = theta_k o ... o theta_1 compared against the flow."""

    x0: mpf
    m: int
    threshold: int            # ceil(ell^(3/2))
    values: list              # F_k(x0) at k = 1..m (downsampled if huge)
    sample_k: list
    ratio_at_threshold: mpf   # F_k/phi_k at the threshold
    ratio_at_m: mpf
    deriv_ratio_at_threshold: mpf
    deriv_ratio_at_m: mpf
    max_ratio_dev: mpf        # max |F_k/phi_k - 1| over k >= threshold
    max_deriv_dev: mpf
    value_at_threshold: mpf
    one_over_ell: mpf
    tail_distortion: mpf      # sup over [-1/l, 1/l] of |DF_tail(y)|/|DF_tail(0)|

    def within_comdv1(self) -> bool:
        return abs(self.value_at_threshold) < self.one_over_ell


def compose_track(thetas, fp: FlowParams, x, m: int | None = None,
                  bits: int = 96, tail_grid: int = 9) -> CompositionTrace:
    """Track theta_m o ... o theta_1 (x) against the closed-form flow.

    Records value and derivative ratios at the ell^(3/2) threshold and at m,
    the worst deviations past the threshold, and the measured distortion of
    the past-threshold tail composition on [-1/ell, 1/ell].
    """
    with mp.workprec(bits):
        x = _as_mpf(x)
        if not abs(x) < 1:
            raise BracketError("need |x| < 1")
        ell = float(fp.ell)
        threshold = math.ceil(ell ** 1.5)
        if m is None:
            m = threshold
        if m < 1 or len(thetas) < m:
            raise ValueError(f"need at least m={m} maps, got {len(thetas)}")
        v = x
        dv = mpf(1)
        values = []
        sample_k = []
        stride = max(1, m // 512)
        ratio_thr = dratio_thr = val_thr = None
        max_rdev = mpf(0)
        max_ddev = mpf(0)
        for k in range(1, m + 1):
            th = thetas[k - 1]
            dv = dv * th.deriv(v)
            v = th(v)
            if not abs(v) < 1:
                raise DynamicsError(f"composition escaped (-1,1) at step {k}")
            if k % stride == 0 or k == m:
                values.append(v)
                sample_k.append(k)
            if k >= threshold and (k % stride == 0 or k in (threshold, m)):
                ph = flow_phi(fp, k, x, bits)
                dph = flow_phi_deriv(fp, k, x, bits)
                r = v / ph
                dr = dv / dph
                max_rdev = max(max_rdev, abs(r - 1))
                max_ddev = max(max_ddev, abs(dr - 1))
                if k == threshold:
                    ratio_thr, dratio_thr, val_thr = r, dr, v
            if k == m:
                ph = flow_phi(fp, k, x, bits)
                dph = flow_phi_deriv(fp, k, x, bits)
                ratio_m = v / ph
                dratio_m = dv / dph
        if ratio_thr is None:
            ratio_thr, dratio_thr, val_thr = ratio_m, dratio_m, v

        one_over_ell = 1 / _as_mpf(fp.ell)
        tail = thetas[threshold:m]
        if tail:
            def tail_deriv(y0):
                yy = _as_mpf(y0)
                dd = mpf(1)
                for th in tail:
                    dd = dd * th.deriv(yy)
                    yy = th(yy)
                return abs(dd)

            base = tail_deriv(0)
            worst = mpf(1)
            for k in range(tail_grid):
                y = one_over_ell * (2 * mpf(k) / (tail_grid - 1) - 1)
                worst = max(worst, tail_deriv(y) / base, base / tail_deriv(y))
            tail_distortion = worst
        else:
            tail_distortion = mpf(1)

        return CompositionTrace(
            x0=x, m=m, threshold=threshold, values=values, sample_k=sample_k,
            ratio_at_threshold=ratio_thr, ratio_at_m=ratio_m,
            deriv_ratio_at_threshold=dratio_thr, deriv_ratio_at_m=dratio_m,
            max_ratio_dev=max_rdev, max_deriv_dev=max_ddev,
            value_at_threshold=val_thr, one_over_ell=one_over_ell,
            tail_distortion=tail_distortion,
        )
