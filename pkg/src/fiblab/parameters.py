"""Certified parameters for the standard working degrees.

Locating a parameter whose closest returns follow the Fibonacci schedule is
the expensive part of any experiment (staged kneading bisection at several
hundred bits), so the values used by the test-suite and the command-line
examples are frozen here.  Each literal came out of `bisect_parameter`, was
re-derived in an independent run, and re-checked at doubled precision; the
recorded depth is the deepest one certified, and the literal carries more
digits than the width of the certified kneading window at that depth.
"""

from __future__ import annotations

from .combinatorics import check_fibonacci
from .core import DynamicsError, MapParams, Precision, default_bits_for_depth

__all__ = ["CERTIFIED_DEPTH", "certified_c1", "certified_params"]

# degree -> (certified depth, c1 literal)
_CERTIFIED = {
    2: (16, "-1.87052863216464488889061741926981585637682161485644"),
    8: (14, "-1.102742387199464798085418403304445825922"),
    16: (23, "-1.0471085100360035534323370937531265130171424602010118"),
}

CERTIFIED_DEPTH = {deg: depth for deg, (depth, _) in _CERTIFIED.items()}


def certified_c1(degree: int) -> str:
    try:
        return _CERTIFIED[degree][1]
    except KeyError:
        raise DynamicsError(
            f"no certified parameter for degree {degree}; run the parameter "
            f"search (certified degrees: {sorted(_CERTIFIED)})"
        ) from None


def certified_params(degree: int, *, bits: int | None = None, verify_depth: int | None = None) -> MapParams:
    """A `MapParams` carrying the frozen parameter for `degree`.

    `bits` defaults to enough precision for the certified depth.  Passing
    `verify_depth` re-runs the closest-return check before returning (slow
    for deep schedules; the certificates themselves were produced offline).
    """
    depth, literal = _CERTIFIED.get(degree, (None, None))
    if literal is None:
        certified_c1(degree)  # raises with the explanatory message
    if bits is None:
        bits = max(256, default_bits_for_depth(depth))
    params = MapParams(degree=degree, c1=literal, precision=Precision(bits=bits))
    if verify_depth is not None:
        if verify_depth > depth:
            raise DynamicsError(
                f"degree {degree} is certified to depth {depth}, not {verify_depth}"
            )
        verdict = check_fibonacci(params, verify_depth)
        if not verdict.ok:
            raise DynamicsError(
                f"frozen parameter for degree {degree} failed re-verification "
                f"at depth {verify_depth}: {verdict}"
            )
    return params
