"""Fibonacci closest-return combinatorics and the parameter search.

A parameter c1 has the target combinatorics to depth N when the strict
closest-return times of the critical orbit are exactly the Fibonacci times
S_0=1, S_1=2, S_k = S_{k-1} + S_{k-2} up to S_N.  The search is driven by a
symbolic target itinerary: the itinerary of the critical orbit of the
topological model is generated by a block recursion (append the previous
block with its last symbol flipped), and observed itineraries are compared to
it in the parity-signed lexicographic order, flipping the symbol order once
for every visit to the orientation-reversing half-line x < 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from mpmath import mp, mpf

try:
    import gmpy2 as _gmpy2
except ImportError:  # pragma: no cover - present in the supported environment
    _gmpy2 = None

from .core import (
    BracketError,
    DynamicsError,
    MapParams,
    Precision,
    default_bits_for_depth,
    escape_radius,
    to_decimal_string,
)

__all__ = [
    "FibSchedule",
    "ClosestReturnTrace",
    "FibVerdict",
    "fibonacci_times",
    "closest_returns",
    "check_fibonacci",
    "target_kneading",
    "itinerary",
    "parity_lex_compare",
    "bisect_parameter",
]


@dataclass(frozen=True)
class FibSchedule:
    depth: int
    times: tuple

    def __contains__(self, t: int) -> bool:
        return t in self.times

    def __getitem__(self, k: int) -> int:
        return self.times[k]

    def __len__(self) -> int:
        return len(self.times)

    def last(self) -> int:
        return self.times[-1]


def fibonacci_times(depth: int) -> FibSchedule:
    """Return times S_0..S_depth with S_0=1, S_1=2."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    ts = [1, 2]
    while len(ts) <= depth:
        ts.append(ts[-1] + ts[-2])
    return FibSchedule(depth, tuple(ts[: depth + 1]))


@dataclass
class ClosestReturnTrace:
    times: list
    distances: list
    sides: list
    escaped: bool = False
    escape_time: int | None = None


@dataclass
class FibVerdict:
    ok: bool
    depth_requested: int
    depth_certified: int
    first_violation: tuple | None  # (time, kind)
    distances: list  # |f^{S_n}(0)| for certified n


def _raw_orbit(params: MapParams, up_to: int, bits: int | None = None):
    """Critical orbit c_1..c_{up_to} as a plain list; None entries after escape."""
    bits = bits or params.precision.bits
    with mp.workprec(bits):
        c1 = params.param()
        l = params.degree
        radius = escape_radius(params)
        xs = []
        x = mpf(0)
        for t in range(1, up_to + 1):
            x = x ** l + c1
            xs.append(x)
            if abs(x) > radius:
                return xs, t
        return xs, None


def closest_returns(params: MapParams, max_time: int) -> ClosestReturnTrace:
    """Strict closest returns of the critical orbit up to `max_time`.

    A time t >= 1 qualifies when |f^t(0)| is strictly smaller than at every
    earlier time.  If the orbit escapes, the partial trace is returned with
    the flag set instead of raising.
    """
    xs, esc = _raw_orbit(params, max_time)
    tr = ClosestReturnTrace([], [], [], escaped=esc is not None, escape_time=esc)
    best = None
    for i, x in enumerate(xs):
        d = abs(x)
        if best is None or d < best:
            best = d
            tr.times.append(i + 1)
            tr.distances.append(d)
            tr.sides.append(-1 if x < 0 else (1 if x > 0 else 0))
    return tr


def check_fibonacci(params: MapParams, depth: int) -> FibVerdict:
    """Certify that closest returns up to S_depth happen exactly at Fibonacci times.

    An orbit point within `abs_tol` of the critical point at any time is
    treated as a violation (the orbit is then combinatorially on a parameter
    boundary and cannot have aperiodic closest returns), reported with kind
    ``extra-return`` and distance ~0.  Escape is reported with kind
    ``escape``.
    """
    sched = fibonacci_times(depth)
    tie_tol = params.precision.tol()
    xs, esc = _raw_orbit(params, sched.last())
    fib_set = set(sched.times)
    best = None
    violation = None
    fib_hit = {}
    for i, x in enumerate(xs):
        t = i + 1
        d = abs(x)
        if d <= tie_tol:
            violation = (t, "extra-return")
            break
        is_record = best is None or d < best
        if is_record:
            best = d
            if t not in fib_set:
                violation = (t, "extra-return")
                break
            fib_hit[t] = d
        elif t in fib_set:
            violation = (t, "missing-return")
            break
    if violation is None and esc is not None:
        violation = (esc, "escape")
    certified = -1
    for n, t in enumerate(sched.times):
        if violation is not None and t >= violation[0]:
            break
        if t in fib_hit:
            certified = n
        else:
            break
    return FibVerdict(
        ok=violation is None and certified == depth,
        depth_requested=depth,
        depth_certified=certified,
        first_violation=violation,
        distances=[fib_hit[t] for t in sched.times[: certified + 1]],
    )


_KNEADING_CACHE = ["L", "LR"]


def target_kneading(depth: int) -> str:
    """Itinerary of the critical orbit of the Fibonacci model, times 1..S_depth.

    Block recursion: B_0 = "L", B_1 = "LR", and B_k is B_{k-1} followed by
    B_{k-2} with its final symbol flipped.  The symbol at each Fibonacci time
    S_n is then the side of the n-th closest return, which runs through the
    period-four pattern R,R,L,L.  The sequence is aperiodic and independent
    of the degree.
    """
    while len(_KNEADING_CACHE) <= depth:
        prev, prev2 = _KNEADING_CACHE[-1], _KNEADING_CACHE[-2]
        flipped = prev2[:-1] + ("L" if prev2[-1] == "R" else "R")
        _KNEADING_CACHE.append(prev + flipped)
    return _KNEADING_CACHE[depth]


def itinerary(params: MapParams, up_to: int, bits: int | None = None) -> str:
    """Observed itinerary of the critical orbit, L/C/R relative to 0.

    After escape the tail is padded with 'R': an escaping orbit is eventually
    positive and increasing, and padding keeps comparisons well-defined.
    """
    tie_tol = params.precision.tol()
    xs, esc = _raw_orbit(params, up_to, bits)
    syms = []
    for x in xs:
        if abs(x) <= tie_tol:
            syms.append("C")
        elif x < 0:
            syms.append("L")
        else:
            syms.append("R")
    if len(syms) < up_to:
        syms.extend("R" * (up_to - len(syms)))
    return "".join(syms)


_ORDER = {"L": 0, "C": 1, "R": 2}


def parity_lex_compare(a: str, b: str) -> int:
    """Signed lexicographic itinerary order: -1, 0, +1.

    At the first index where the strings differ, symbols compare in the
    spatial order L < C < R, reversed when the common prefix contains an odd
    number of visits to the orientation-reversing branch (symbol L).  Equal
    prefixes compare as 0.
    """
    n = min(len(a), len(b))
    if a[:n] == b[:n]:
        return 0
    # locate the first mismatch with O(log n) slice comparisons
    lo_i, hi_i = 0, n
    while lo_i < hi_i:
        m = (lo_i + hi_i) // 2
        if a[: m + 1] == b[: m + 1]:
            lo_i = m + 1
        else:
            hi_i = m
    i = lo_i
    sign = -1 if a.count("L", 0, i) % 2 else 1
    return sign * (1 if _ORDER[a[i]] > _ORDER[b[i]] else -1)


class _SymbolWalker:
    """Incremental itinerary generator for one candidate parameter.

    Extending an itinerary to a deeper comparison time reuses the orbit
    computed so far instead of starting over.  Uses gmpy2 floats at the same
    working precision when available (the bisection predicate is by far the
    hottest loop in the package); the authoritative certification of the
    result always goes through :func:`check_fibonacci` on mpmath values.
    """

    def __init__(self, degree: int, c1_mpf, bits: int, tie_tol):
        self.degree = degree
        self.bits = bits
        self.syms: list = []
        self.escaped = False
        if _gmpy2 is not None:
            self._ctx = _gmpy2.context(precision=bits)
            with mp.workprec(bits):
                ser = mp.nstr(c1_mpf, int(bits * 0.30103) + 3, strip_zeros=True)
            self.c1 = _gmpy2.mpfr(ser, precision=bits)
            self.x = _gmpy2.mpfr(0, precision=bits)
            self.tie = _gmpy2.mpfr(str(tie_tol), precision=bits)
            r = abs(self.c1)
            if r < 1:
                r = _gmpy2.mpfr(1, precision=bits)
            self.radius = 2 * r ** (1 / _gmpy2.mpfr(degree - 1, precision=bits)) + 1
        else:
            self._ctx = None
            self.c1 = c1_mpf
            with mp.workprec(bits):
                self.x = mpf(0)
                self.tie = mpf(str(tie_tol))
                self.radius = 2 * max(mpf(1), abs(c1_mpf)) ** (mpf(1) / (degree - 1)) + 1

    def advance(self, up_to: int) -> str:
        if len(self.syms) >= up_to:
            return "".join(self.syms[:up_to])
        if self.escaped:
            self.syms.extend("R" * (up_to - len(self.syms)))
            return "".join(self.syms)
        if self._ctx is not None:
            with _gmpy2.local_context(self._ctx):
                self._walk(up_to)
        else:
            with mp.workprec(self.bits):
                self._walk(up_to)
        return "".join(self.syms[:up_to])

    def _walk(self, up_to: int):
        x, c1, l = self.x, self.c1, self.degree
        syms = self.syms
        for _ in range(up_to - len(syms)):
            x = x ** l + c1
            ax = abs(x)
            if ax <= self.tie:
                syms.append("C")
            elif x < 0:
                syms.append("L")
            else:
                syms.append("R")
            if ax > self.radius:
                self.escaped = True
                syms.extend("R" * (up_to - len(syms)))
                break
        self.x = x


def bisect_parameter(
    degree: int,
    bracket: tuple,
    depth: int,
    *,
    abs_tol: str = "1e-12",
    bits: int | None = None,
    extend_levels: int = 4,
    max_steps: int = 400,
) -> tuple[tuple, FibVerdict, MapParams]:
    """Locate a parameter with Fibonacci combinatorics to `depth` by bisection.

    The bracket endpoints must have itineraries on opposite sides of the
    model itinerary in parity-lexicographic order.  The comparison depth is
    staged: the bracket is first shrunk using cheap shallow itineraries, and
    orbits of the full length S_depth are only computed for the final few
    halvings.  At full depth the comparison is deepened further (up to
    `extend_levels` levels) when a midpoint matches the model exactly; once
    even the deepened comparison cannot distinguish, the larger half of the
    bracket is cut so the interval keeps shrinking inside the combinatorial
    window.

    Returns ((lo, hi) as decimal strings, verdict for the midpoint, midpoint
    MapParams).  Raises BracketError for an invalid bracket and
    DynamicsError if max_steps is exhausted before the width target.
    """
    if bits is None:
        bits = default_bits_for_depth(depth + extend_levels)
    prec = Precision(bits=bits)
    tie_tol = prec.tol()

    def compare(c1_mpf, at_depth: int, extend: int) -> int:
        walker = _SymbolWalker(degree, c1_mpf, bits, tie_tol)
        lvl = at_depth
        obs = walker.advance(fibonacci_times(lvl).last())
        cmp = parity_lex_compare(obs, target_kneading(lvl))
        while cmp == 0 and lvl < at_depth + extend:
            lvl = min(lvl + 2, at_depth + extend)
            obs = walker.advance(fibonacci_times(lvl).last())
            cmp = parity_lex_compare(obs, target_kneading(lvl))
        return cmp

    # comparison-depth stages with width targets; windows shrink so fast that
    # each stage leaves the bracket well inside the previous stage's window
    stages = [(d, t) for d, t in ((8, "1e-8"), (12, "1e-16"), (16, "1e-24"), (20, "1e-32")) if d < depth]
    stages.append((depth, abs_tol))

    with mp.workprec(bits):
        lo, hi = mpf(str(bracket[0])), mpf(str(bracket[1]))
        if not lo < hi:
            raise BracketError("bracket must satisfy lo < hi")
        final_tol = mpf(abs_tol)
        c_lo = compare(lo, stages[0][0], 0)
        c_hi = compare(hi, stages[0][0], 0)
        if c_lo == 0 or c_hi == 0 or c_lo == c_hi:
            raise BracketError(
                f"bracket itineraries do not straddle the target (cmp {c_lo}, {c_hi})"
            )
        steps = [0]
        verdict = None

        def bump():
            steps[0] += 1
            if steps[0] > max_steps:
                raise DynamicsError(
                    f"bisection did not certify depth {depth} within {max_steps} steps"
                    + (f" (last verdict: {verdict.first_violation})" if verdict else "")
                )

        for stage_depth, stage_tol in stages:
            final_stage = stage_depth == depth
            tol = final_tol if final_stage else max(mpf(stage_tol), final_tol)
            extend = extend_levels if final_stage else 0
            # Re-orient at this comparison depth.  The target window is an
            # interval in the parameter (kneading is monotone along the
            # family), so an endpoint comparing equal is inside the window
            # and acts as being on the opposite side of the other endpoint.
            c_lo = compare(lo, stage_depth, extend)
            c_hi = compare(hi, stage_depth, extend)
            if c_lo == 0 and c_hi == 0:
                if not final_stage:
                    continue  # whole bracket inside this stage's window
            elif c_lo == 0:
                c_lo = -c_hi
            elif c_hi == 0:
                c_hi = -c_lo
            if c_lo == c_hi:
                raise DynamicsError(
                    f"lost the target window at comparison depth {stage_depth}"
                )
            if c_lo > 0:
                lo, hi = hi, lo  # orient: negative-comparison side first
            saturated = c_lo == 0 and c_hi == 0
            while abs(hi - lo) > tol:
                bump()
                mid = (lo + hi) / 2
                c_mid = 0 if saturated else compare(mid, stage_depth, extend)
                if c_mid < 0:
                    lo = mid
                elif c_mid > 0:
                    hi = mid
                elif not final_stage:
                    break  # indistinguishable here: go to a deeper stage
                elif abs(hi - mid) >= abs(mid - lo):
                    hi = mid  # inside the deepest visible window: cut larger half
                else:
                    lo = mid
        while True:
            mid = (lo + hi) / 2
            mp_params = MapParams(degree, to_decimal_string(mid, bits), prec)
            verdict = check_fibonacci(mp_params, depth)
            if verdict.ok:
                a, b = (lo, hi) if lo < hi else (hi, lo)
                return (
                    (to_decimal_string(a, bits), to_decimal_string(b, bits)),
                    verdict,
                    mp_params,
                )
            # width target met but the midpoint fails: keep halving toward
            # the certified window using full-depth comparisons
            bump()
            c_mid = compare(mid, depth, extend_levels)
            if c_mid < 0:
                lo = mid
            elif c_mid > 0:
                hi = mid
            elif abs(hi - mid) >= abs(mid - lo):
                hi = mid
            else:
                lo = mid
