"""Certified monotone branches of iterates and root solving on them.

A branch is the restriction of f^T to an interval on which it is injective.
Injectivity is certified inductively from the two endpoint orbits: if f^t is
monotone on [a,b] then its image is the interval between the endpoint
iterates, and f^{t+1} stays monotone exactly when that image does not
contain the critical point 0 in its interior.  Endpoint iterates are allowed
to *touch* 0 (x^l is injective on each closed half-line), so brackets with a
precritical endpoint — which is the normal case here — certify fine.

Solving f^T(x) = target on a certified branch combines bisection (robust)
with chain-rule Newton steps (fast) under one working precision.
"""

from __future__ import annotations

from dataclasses import dataclass

from mpmath import mp, mpf

try:
    import gmpy2 as _gmpy2
except ImportError:  # pragma: no cover - present in the supported environment
    _gmpy2 = None

from .core import BracketError, DynamicsError, MapParams

__all__ = [
    "BranchCertificate",
    "SolveResult",
    "verify_branch",
    "solve_on_branch",
    "fixed_point_q",
    "apply_iterate",
    "iterate_derivative",
]


def _mpf_to_mpfr(x):
    """Exact mpf -> gmpy2.mpfr conversion (caller provides the context)."""
    sign, man, exp, _ = x._mpf_
    if man == 0:
        return _gmpy2.mpfr(0)
    g = _gmpy2.mpfr(_gmpy2.mpz(man)) * _gmpy2.exp2(exp)
    return -g if sign else g


def _mpfr_to_mpf(g, bits: int):
    """gmpy2.mpfr -> mpf, exact up to one rounding at `bits`."""
    if g == 0:
        return mpf(0)
    m, e = g.as_mantissa_exp()
    with mp.workprec(bits + 8):
        return mpf(int(m)) * mpf(2) ** int(e)


@dataclass
class BranchCertificate:
    T: int
    interval: tuple
    ok: bool
    orientation: int  # +1 increasing, -1 decreasing (sign of Df^T on the branch)
    image: tuple  # (f^T(a), f^T(b)) before orientation sorting
    failure_time: int | None = None

    def image_interval(self) -> tuple:
        a, b = self.image
        return (a, b) if a <= b else (b, a)


@dataclass
class SolveResult:
    x: mpf
    residual: mpf
    iterations: int
    certificate: BranchCertificate


def _eval_mpmath(degree: int, c1, x, T: int):
    """Reference single pass computing (f^T(x), Df^T(x)) in pure mpmath."""
    v = x
    dv = mpf(1)
    for _ in range(T):
        dv *= degree * v ** (degree - 1)
        v = v ** degree + c1
    return v, dv


def _eval_with_deriv(degree: int, c1, x, T: int, want_deriv: bool = True):
    """One pass computing (f^T(x), Df^T(x)) at the ambient working precision.

    Dispatches to gmpy2 when available: the conversions in and out are exact
    (mantissa/exponent pairs) and the loop carries 32 guard bits, so the only
    rounding difference against the mpmath reference is in the last few bits
    of intermediate products.  Callers that certify results re-measure final
    residuals through `_eval_mpmath`.
    """
    if T == 0:
        return x, mpf(1)
    if _gmpy2 is not None:
        bits = mp.prec
        ctx = _gmpy2.context()
        ctx.precision = bits + 32
        with _gmpy2.local_context(ctx):
            v = _mpf_to_mpfr(x)
            gc = _mpf_to_mpfr(c1)
            dv = _gmpy2.mpfr(1)
            if want_deriv:
                for _ in range(T):
                    dv *= degree * v ** (degree - 1)
                    v = v ** degree + gc
            else:
                for _ in range(T):
                    v = v ** degree + gc
            return _mpfr_to_mpf(v, bits), _mpfr_to_mpf(dv, bits)
    return _eval_mpmath(degree, c1, x, T)


def apply_iterate(params: MapParams, x, T: int, bits: int | None = None) -> mpf:
    """f^T(x) — plain forward evaluation, no derivative or error tracking."""
    if T < 0:
        raise ValueError("T must be >= 0")
    bits = bits or params.precision.bits
    with mp.workprec(bits):
        xv = x if isinstance(x, mpf) else mpf(str(x))
        v, _ = _eval_with_deriv(params.degree, params.param(), xv, T, want_deriv=False)
        return v


def iterate_derivative(params: MapParams, x, T: int, bits: int | None = None):
    """(f^T(x), Df^T(x)) by the chain-rule product along the orbit."""
    if T < 0:
        raise ValueError("T must be >= 0")
    bits = bits or params.precision.bits
    with mp.workprec(bits):
        xv = x if isinstance(x, mpf) else mpf(str(x))
        return _eval_with_deriv(params.degree, params.param(), xv, T)


def verify_branch(
    params: MapParams,
    T: int,
    interval,
    bits: int | None = None,
    touch_tol=None,
) -> BranchCertificate:
    """Certify that f^T is injective on `interval` via the endpoint-orbit test.

    `touch_tol` widens the boundary-touch band: endpoint iterates within it
    of 0 are treated as touching rather than crossing.  Brackets whose
    endpoints were themselves produced by root solves need this, since their
    orbits pass through 0 only up to the recorded residual (the map is an
    even power near 0, so the continuation is insensitive to the side).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    bits = bits or params.precision.bits
    with mp.workprec(bits):
        a, b = (x if isinstance(x, mpf) else mpf(str(x)) for x in interval)
        if not a < b:
            raise BracketError(f"need a < b, got ({a}, {b})")
        c1 = params.param()
        l = params.degree
        band = mpf(0) if touch_tol is None else (touch_tol if isinstance(touch_tol, mpf) else mpf(str(touch_tol)))
        p, q = a, b
        for t in range(T):
            if (p > band and q < -band) or (q > band and p < -band):
                return BranchCertificate(T, (a, b), False, 0, (p, q), failure_time=t)
            p = p ** l + c1
            q = q ** l + c1
        orient = 1 if q > p else (-1 if q < p else 0)
        return BranchCertificate(T, (a, b), orient != 0, orient, (p, q))


def solve_on_branch(
    params: MapParams,
    T: int,
    interval,
    target,
    *,
    certificate: BranchCertificate | None = None,
    x0=None,
    abs_tol=None,
    bits: int | None = None,
    max_iter: int = 200,
) -> SolveResult:
    """Solve f^T(x) = target on a certified monotone branch.

    `x0` seeds Newton directly (useful when a nearly identical solve was done
    one level up); otherwise bisection localizes the root first.  The
    residual is measured in the image, the tolerance in the domain.
    """
    bits = bits or params.precision.bits
    cert = certificate or verify_branch(params, T, interval, bits)
    if not cert.ok:
        raise BracketError(
            f"f^{T} is not monotone on {interval} (failure at time {cert.failure_time})"
        )
    with mp.workprec(bits):
        a, b = (x if isinstance(x, mpf) else mpf(str(x)) for x in interval)
        tgt = target if isinstance(target, mpf) else mpf(str(target))
        lo_v, hi_v = cert.image_interval()
        if not (lo_v <= tgt <= hi_v):
            raise BracketError(f"target {tgt} outside branch image ({lo_v}, {hi_v})")
        tol = mpf(str(abs_tol)) if abs_tol is not None else params.precision.tol()
        c1 = params.param()
        l = params.degree
        s = cert.orientation

        def h(x):
            v, dv = _eval_with_deriv(l, c1, x, T)
            return v - tgt, dv

        lo, hi = a, b
        if x0 is None:
            x = (lo + hi) / 2
        else:
            x = x0 if isinstance(x0, mpf) else mpf(str(x0))
        if not (lo <= x <= hi):
            x = (lo + hi) / 2
        iters = 0
        fx, dfx = h(x)
        while iters < max_iter:
            iters += 1
            if s * fx > 0:
                hi = x
            elif s * fx < 0:
                lo = x
            else:
                break
            if hi - lo <= tol:
                break
            # Newton, falling back to bisection when the step leaves the bracket
            if dfx != 0:
                xn = x - fx / dfx
            else:
                xn = (lo + hi) / 2
            if not (lo < xn < hi):
                xn = (lo + hi) / 2
            step = abs(xn - x)
            x = xn
            fx, dfx = h(x)
            if step <= tol and abs(fx) <= tol * max(mpf(1), abs(dfx)):
                break
        else:
            raise DynamicsError(f"solve_on_branch did not converge in {max_iter} iterations")
        # the reported residual is always the pure-mpmath measurement
        ref, _ = _eval_mpmath(l, c1, x, T)
        return SolveResult(x=x, residual=ref - tgt, iterations=iters, certificate=cert)


def fixed_point_q(params: MapParams, bits: int | None = None) -> mpf:
    """The orientation-reversing fixed point q < 0 of x^l + c1.

    g(x) = x^l + c1 - x is strictly decreasing for x < 0 (l even), so the
    fixed point is a clean bisection/Newton target on [c1, 0]; requires
    c1 < 0.
    """
    bits = bits or params.precision.bits
    with mp.workprec(bits):
        c1 = params.param()
        if c1 >= 0:
            raise BracketError("fixed point construction requires c1 < 0")
        l = params.degree
        lo, hi = c1, mpf(0)  # g(lo) = c1^l > 0 > c1 = g(hi)
        x = (lo + hi) / 2
        tol = params.precision.tol()
        for _ in range(max(200, bits)):
            g = x ** l + c1 - x
            if g > 0:
                lo = x
            elif g < 0:
                hi = x
            else:
                break
            dg = l * x ** (l - 1) - 1
            xn = x - g / dg
            if not (lo < xn < hi):
                xn = (lo + hi) / 2
            if abs(xn - x) <= tol:
                x = xn
                break
            x = xn
        return x
