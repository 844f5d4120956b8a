"""Arbitrary-precision arithmetic for the unimodal family f(x) = x^l + c1.

Everything downstream (parameter search, level points, disc ladders) sits on
top of the three primitives in this module: pointwise evaluation, derivative
chains along orbits, and deep orbit iteration with a running round-off
estimate.  All operations take an explicit :class:`Precision` so results are
reproducible; nothing reads or writes global precision state outside a
``mp.workprec`` block, which keeps the module safe to call from worker pools.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from mpmath import mp, mpf

__all__ = [
    "Precision",
    "MapParams",
    "OrbitRecord",
    "DynamicsError",
    "PrecisionExhausted",
    "BracketError",
    "default_bits_for_depth",
    "escape_radius",
    "eval_map",
    "deriv_map",
    "schwarzian",
    "iterate",
    "iterate_adaptive",
    "orbit_points",
    "to_decimal_string",
    "from_decimal_string",
]


class DynamicsError(Exception):
    """Base class for failures that carry dynamical meaning."""


class PrecisionExhausted(DynamicsError):
    """Running round-off estimate exceeded the requested tolerance."""


class BracketError(DynamicsError):
    """A root bracket was invalid or did not straddle the target."""


def default_bits_for_depth(depth: int) -> int:
    """Mantissa size used for orbits up to the Fibonacci time of `depth`.

    Expansion along return branches multiplies absolute errors by a bounded
    factor per level, so the requirement grows linearly with depth.  64+8n
    bits leaves a wide safety margin for every depth used in the test suite.
    """
    return max(64, 64 + 8 * depth)


@dataclass(frozen=True)
class Precision:
    bits: int = 256
    abs_tol: str = "1e-25"

    def tol(self) -> mpf:
        with mp.workprec(self.bits):
            return mpf(self.abs_tol)

    def doubled(self) -> "Precision":
        return Precision(bits=2 * self.bits, abs_tol=self.abs_tol)


@dataclass(frozen=True)
class MapParams:
    """The map x -> x^degree + c1 with `c1` held as a decimal literal.

    `degree` must be even (the critical point at 0 is then a minimum).  The
    parameter is stored as a string so that a `MapParams` is hashable and the
    value survives precision changes without silent rounding.
    """

    degree: int
    c1: str
    precision: Precision = field(default_factory=Precision)

    def __post_init__(self):
        if self.degree < 2 or self.degree % 2 != 0:
            raise ValueError(f"degree must be even and >= 2, got {self.degree}")
        if not isinstance(self.c1, str):
            object.__setattr__(self, "c1", to_decimal_string(self.c1, self.precision.bits))

    def param(self) -> mpf:
        with mp.workprec(self.precision.bits):
            return mpf(self.c1.partition("@")[0])

    def with_precision(self, prec: Precision) -> "MapParams":
        return MapParams(self.degree, self.c1, prec)


@dataclass
class OrbitRecord:
    """Orbit samples of one starting point at the requested times.

    `deriv_chain[k]` is |Df^t(x0)| for t = times[k], accumulated with the
    chain rule along the way.  `err_estimate` is a coarse upper bound for the
    absolute rounding error of the final recorded value; it is propagated as
    err' = |Df| err + ulp and triggers :class:`PrecisionExhausted` upstream.
    """

    times: list
    values: list
    deriv_chain: list
    escaped: bool = False
    escape_time: int | None = None
    err_estimate: mpf = None


def escape_radius(params: MapParams) -> mpf:
    """Radius beyond which orbits increase monotonically to infinity."""
    with mp.workprec(params.precision.bits):
        a = abs(params.param())
        one = mpf(1)
        return 2 * max(one, a) ** (one / (params.degree - 1)) + 1


def eval_map(params: MapParams, x) -> mpf:
    with mp.workprec(params.precision.bits):
        return mpf(x) ** params.degree + params.param()


def deriv_map(params: MapParams, x) -> mpf:
    with mp.workprec(params.precision.bits):
        return params.degree * mpf(x) ** (params.degree - 1)


def schwarzian(params: MapParams, x) -> mpf:
    """Schwarzian derivative of the map at x != 0.

    For a pure power plus constant this collapses to -(l^2-1)/(2 x^2), which
    is negative everywhere; the tests cross-check against the finite
    difference form f'''/f' - 1.5 (f''/f')^2.
    """
    with mp.workprec(params.precision.bits):
        xv = mpf(x)
        if xv == 0:
            raise ZeroDivisionError("schwarzian is singular at the critical point")
        l = params.degree
        return -mpf((l * l - 1)) / (2 * xv * xv)


def _ulp(value: mpf, bits: int) -> mpf:
    return (abs(value) + mpf(2) ** (-bits)) * mpf(2) ** (1 - bits)


def iterate(
    params: MapParams,
    x0,
    schedule: Sequence[int],
    *,
    track_error: bool = True,
    raise_on_exhaustion: bool = True,
) -> OrbitRecord:
    """Iterate f recording values and |Df^t| at the scheduled times.

    `schedule` must be strictly increasing non-negative integers.  Escape is
    detected against :func:`escape_radius`; the record is then truncated and
    flagged rather than raising, since escape is a legitimate outcome during
    parameter search.
    """
    sched = list(schedule)
    if any(b <= a for a, b in zip(sched, sched[1:])) or (sched and sched[0] < 0):
        raise ValueError("schedule must be strictly increasing and non-negative")
    bits = params.precision.bits
    with mp.workprec(bits):
        c1 = params.param()
        l = params.degree
        radius = escape_radius(params)
        tol = params.precision.tol()
        x = mpf(x0)
        dchain = mpf(1)
        err = _ulp(x, bits) if track_error else mpf(0)
        out = OrbitRecord(times=[], values=[], deriv_chain=[])
        t = 0
        want = iter(sched)
        nxt = next(want, None)
        while True:
            if nxt is None:
                break
            if t == nxt:
                out.times.append(t)
                out.values.append(x)
                out.deriv_chain.append(abs(dchain))
                nxt = next(want, None)
                if nxt is None:
                    break
            if abs(x) > radius:
                out.escaped = True
                out.escape_time = t
                break
            dfx = l * x ** (l - 1)
            x = x ** l + c1
            dchain *= dfx
            t += 1
            if track_error:
                err = abs(dfx) * err + _ulp(x, bits)
                if err > tol:
                    if raise_on_exhaustion:
                        raise PrecisionExhausted(
                            f"error estimate {mp.nstr(err, 5)} > {mp.nstr(tol, 5)} "
                            f"at time {t} with {bits} bits"
                        )
                    break
        out.err_estimate = err
        return out


def iterate_adaptive(params: MapParams, x0, schedule: Sequence[int], *, max_doublings: int = 4) -> OrbitRecord:
    """Like :func:`iterate` but doubles the mantissa until the error budget holds."""
    prec = params.precision
    for _ in range(max_doublings + 1):
        try:
            return iterate(params.with_precision(prec), x0, schedule)
        except PrecisionExhausted:
            prec = prec.doubled()
    raise PrecisionExhausted(f"no convergence up to {prec.bits} bits")


def orbit_points(params: MapParams, x0, up_to: int) -> list:
    """Dense orbit x0, f(x0), ..., f^up_to(x0) without error tracking."""
    rec = iterate(params, x0, range(up_to + 1), track_error=False)
    return rec.values


def to_decimal_string(x, bits: int) -> str:
    """Serialize to the explicit-precision literal form '<mantissa>e<exp>@<bits>'."""
    digits = int(bits * 0.30103) + 3
    with mp.workprec(bits):
        s = mp.nstr(mpf(x), digits, strip_zeros=True, min_fixed=1, max_fixed=0)
        if "e" not in s:
            s += "e0"
    return f"{s}@{bits}"


def from_decimal_string(s: str) -> tuple[mpf, int]:
    """Parse the serialization produced by :func:`to_decimal_string`."""
    body, _, bits_s = s.partition("@")
    bits = int(bits_s) if bits_s else mp.prec
    with mp.workprec(bits):
        return mpf(body), bits
