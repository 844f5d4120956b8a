"""Nested topological discs around the critical point, built by pulling
back boundary curves along inverse branches of the iterates.

The ladder starts from two round discs and alternates two moves: pull a
disc boundary back along a certified real branch of an iterate (complex
boundary continuation seeded at a known real preimage), and lift through
the even power at the origin (which turns one boundary loop into a
rotationally symmetric loop with the characteristic spikes).

Numerical shape of the problem: the pre-lift disc at level n clusters
exponentially close to the critical value — its real trace shrinks below
double-precision spacing around c1 by level ~10 — so the lift is never
materialized on its own at depth.  Instead `lifted_pullback` continues the
preimage directly in the lifted variable, where the geometry lives at the
scale of the branch edges and stays conditioned: one trip around the
target loop advances the lifted boundary by one sector, and the even
symmetry plus conjugation assemble the full loop from a single trip.

The regions themselves live at benign scales and are stored as ordinary
complex samples, but the orbit evaluations inside the continuation cannot
run in double: every branch here squeezes through the power map, where
the geometric signal sits at |z|^ell — many orders below |c1| — and the
later expansion amplifies rounding committed there right back to region
scale (already ~1e-11 absolute at level 5, hopeless by level 9).  The
Newton kernels therefore evaluate orbits in extended precision (gmpy2
complex arithmetic when available, mpmath otherwise) and hand back double
samples; the inverse branch is well-conditioned, so double-precision
targets and seeds lose nothing.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from mpmath import mp

try:
    import gmpy2 as _gmpy2
except ImportError:  # pragma: no cover - present in the supported environment
    _gmpy2 = None

from .branches import _mpf_to_mpfr
from .combinatorics import fibonacci_times
from .core import BracketError, DynamicsError, MapParams
from .levels import LevelPoints
from .regions import (
    ContainmentVerdict,
    Region,
    distances_to_boundary,
    region_area,
    region_contains,
    round_disc,
    star_fits,
    star_region,
    winding_numbers,
)

__all__ = [
    "pullback_diffeo",
    "root_lift",
    "lifted_pullback",
    "select_k0",
    "build_nested_discs",
    "DiscLadder",
    "LevelVerdict",
    "annulus_report",
    "AnnulusReport",
    "contains_star_check",
    "StarFitReport",
]

# -- extended-precision orbit kernels -------------------------------------


class _Workspace:
    """Arithmetic context for orbit evaluation inside the continuation.

    Carries the degree, the parameter, and the working precision, and
    activates the matching gmpy2 (or mpmath) context while entered.  All
    kernel functions below expect an entered workspace and work-typed
    complex values; `lift` converts ordinary complex numbers in.
    """

    def __init__(self, params: MapParams, bits: int):
        self.ell = int(params.degree)
        self.bits = int(bits)
        with mp.workprec(max(self.bits, params.precision.bits)):
            c1 = params.param()
        if _gmpy2 is not None:
            ctx = _gmpy2.context()
            ctx.precision = self.bits
            self._ctx = ctx
            with _gmpy2.local_context(ctx):
                self.c1 = _mpf_to_mpfr(c1)
        else:
            self._ctx = None
            self.c1 = c1

    def __enter__(self):
        if self._ctx is not None:
            self._cm = _gmpy2.local_context(self._ctx)
        else:
            self._cm = mp.workprec(self.bits)
        self._cm.__enter__()
        return self

    def __exit__(self, *exc):
        return self._cm.__exit__(*exc)

    def lift(self, z):
        if self._ctx is not None:
            return _gmpy2.mpc(complex(z))
        return mp.mpc(complex(z))

    def lift_exact(self, x):
        """Embed a real mpf without the round trip through double."""
        if self._ctx is not None:
            return _gmpy2.mpc(_mpf_to_mpfr(x))
        return mp.mpc(x)

    def norm2(self, z):
        if self._ctx is not None:
            return _gmpy2.norm(z)
        return z.real * z.real + z.imag * z.imag


def _orbit_value(ws: _Workspace, z, T: int) -> tuple:
    """(f^T(z), min |orbit point|) in the workspace arithmetic."""
    ell, c1, n2 = ws.ell, ws.c1, ws.norm2
    low2 = n2(z)
    for _ in range(T):
        z = z ** ell + c1
        a = n2(z)
        if a < low2:
            low2 = a
    return z, math.sqrt(float(low2))


def _orbit_with_deriv(ws: _Workspace, z, T: int) -> tuple:
    ell, c1, n2 = ws.ell, ws.c1, ws.norm2
    v = z
    d = ws.lift(1.0)
    low2 = n2(v)
    for _ in range(T):
        if low2 == 0:
            return v, ws.lift(0.0), 0.0
        zp = v ** ell
        d *= ell * zp / v
        v = zp + c1
        a = n2(v)
        if a < low2:
            low2 = a
    return v, d, math.sqrt(float(low2))


def _refine_preimage(ws, T, w, z0, *, floor, tol, max_iter=24):
    """Damped Newton for f^T(z) = w.  Returns (z, Df^T(z)) or None.

    None means the iteration left its basin (caller subdivides the target
    segment); an orbit passing under `floor` raises instead, because that
    is a structural failure — the branch is not actually safe to invert.
    Each candidate is evaluated with its derivative so accepted steps need
    no second orbit pass.
    """
    z = z0
    v, d, low = _orbit_with_deriv(ws, z, T)
    r_start = None
    for it in range(max_iter):
        r = v - w
        ra = abs(r)
        if ra <= tol:
            if low < floor:
                # a point certified to lie on the curve collides: structural
                raise DynamicsError(
                    f"preimage orbit passed within {floor:g} of the critical "
                    f"point (time {T}); branch is not invertible here"
                )
            return z, d
        if low < floor:
            return None
        if r_start is None:
            r_start = ra
        elif it >= 8 and ra > 0.5 * r_start:
            return None  # creeping, not converging: subdivide instead
        if d == 0:
            return None
        step = -r / d
        lam = 1.0
        while True:
            zn = z + lam * step
            vn, dn, lown = _orbit_with_deriv(ws, zn, T)
            if lown >= floor and abs(vn - w) < ra:
                z, v, d, low = zn, vn, dn, lown
                break
            lam *= 0.5
            if lam < 1.0 / 256.0:
                return None
    return None


def _advance(ws, T, w_from, w_to, z_from, d_from, *, floor, tol, depth):
    """One continuation step along the segment w_from -> w_to."""
    pred = (w_to - w_from) / d_from if d_from != 0 else ws.lift(0.0)
    got = _refine_preimage(ws, T, w_to, z_from + pred, floor=floor, tol=tol)
    if got is None and pred != 0:
        got = _refine_preimage(ws, T, w_to, z_from, floor=floor, tol=tol)
    if got is not None:
        z_new = got[0]
        # sheet-jump guard: a legitimate step tracks the predicted one
        if abs(z_new - z_from) <= 8.0 * abs(pred) + 64.0 * tol / max(float(abs(d_from)), 1e-12):
            return got
        got = None
    if depth <= 0:
        raise DynamicsError(
            f"preimage continuation diverged near target {complex(w_to):.6g} "
            f"(segment subdivision exhausted)"
        )
    mid = (w_from + w_to) / 2
    zm, dm = _advance(ws, T, w_from, mid, z_from, d_from, floor=floor, tol=tol, depth=depth - 1)
    return _advance(ws, T, mid, w_to, zm, dm, floor=floor, tol=tol, depth=depth - 1)


def _continue_chain(ws, T, targets, z0, *, floor, tol, depth=16):
    """Preimages of a target polyline, seeded at z0 over targets[0].

    Targets and seed are work-typed; the caller lifts them.
    """
    got = _refine_preimage(ws, T, targets[0], z0, floor=floor, tol=tol)
    if got is None:
        raise BracketError(
            f"seed {complex(z0)} does not converge onto the first boundary "
            f"target (time {T}); check the real anchor"
        )
    zs = [got[0]]
    ds = [got[1]]
    for j in range(1, len(targets)):
        z, d = _advance(
            ws, T, targets[j - 1], targets[j], zs[-1], ds[-1],
            floor=floor, tol=tol, depth=depth,
        )
        zs.append(z)
        ds.append(d)
    return zs, ds


def _refine_chain(ws, T, targets, zs, ds, *, floor, tol, max_turn, gap_factor, max_samples, passes=5):
    """Insert preimages where the traced curve is under-resolved.

    Refinement targets live on the segments of the original polyline, so
    the sampled target region is never altered, only traced more finely.
    """
    targets, zs, ds = list(targets), list(zs), list(ds)
    for _ in range(passes):
        fz = [complex(z) for z in zs]
        gaps = [abs(fz[i + 1] - fz[i]) for i in range(len(fz) - 1)]
        if not gaps:
            break
        cap = gap_factor * float(np.median([g for g in gaps if g > 0.0] or [0.0]))
        marks = []
        for i in range(len(fz) - 1):
            rough = cap > 0.0 and gaps[i] > cap
            if not rough and 0 < i:
                a, b = fz[i] - fz[i - 1], fz[i + 1] - fz[i]
                if a != 0.0 and b != 0.0:
                    turn = abs(cmath.phase(b / a))
                    rough = turn > max_turn and max(gaps[i], gaps[i - 1]) > 8.0 * tol
            if rough:
                marks.append(i)
        if not marks or len(zs) + len(marks) > max_samples:
            break
        for i in reversed(marks):
            wm = (targets[i] + targets[i + 1]) / 2
            zm, dm = _advance(
                ws, T, targets[i], wm, zs[i], ds[i],
                floor=floor, tol=tol, depth=12,
            )
            targets.insert(i + 1, wm)
            zs.insert(i + 1, zm)
            ds.insert(i + 1, dm)
    return targets, zs, ds


def _close_symmetric(upper: list) -> tuple:
    lower = [complex(p.real, -p.imag) for p in upper[-2:0:-1]]
    return tuple(upper + lower + [upper[0]])


def _arc_thin(pts: list, cap: int) -> list:
    """At most `cap` of the given curve samples, spread evenly in arclength.

    Keeps both endpoints and only ever drops points (never interpolates),
    so the result stays on the solved curve.  Refinement during
    continuation oversamples wherever the trace bends; this brings the
    stored boundary back to a budget downstream geometry can afford.
    """
    if len(pts) <= cap:
        return pts
    arr = np.asarray(pts, dtype=complex)
    cum = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(arr)))])
    want = np.linspace(0.0, float(cum[-1]), cap)
    idx = np.minimum(np.searchsorted(cum, want), len(arr) - 1)
    idx[0] = 0
    idx[-1] = len(arr) - 1
    return [pts[i] for i in np.unique(idx)]


def _c1_float(params: MapParams) -> float:
    with mp.workprec(params.precision.bits):
        return float(params.param())


# -- single-branch pullback ----------------------------------------------


def pullback_diffeo(
    params: MapParams,
    T: int,
    target: Region,
    real_seed,
    *,
    tol_rel: float = 1e-11,
    floor: float = 1e-9,
    work_bits: int = 192,
    max_turn: float = 0.45,
    gap_factor: float = 4.0,
    max_samples: int = 20000,
    keep: int = 1800,
) -> Region:
    """Connected preimage of `target` under f^T through a real seed.

    `real_seed` must be a real preimage of one of the target's two real
    crossings (the solver that produced it knows which); continuation then
    walks the upper target chain, and the lower half is closed by
    conjugation.  Orbits straying under `floor` in modulus raise — the
    branch would pass a critical point and stop being a diffeomorphism.
    """
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    if T == 0:
        return Region("pullback", target.boundary, dict(target.meta, time=0))
    half = len(target) // 2
    chain_targets = list(target.boundary[: half + 1])
    for endpoint in (chain_targets[0], chain_targets[-1]):
        if abs(endpoint.imag) > 1e-9 * max(1.0, abs(endpoint)):
            raise BracketError("target loop does not follow the symmetric sampling convention")
    seed = float(real_seed)
    scale = max(abs(p) for p in chain_targets)
    tol = tol_rel * max(scale, 1e-30)

    with _Workspace(params, work_bits) as ws:
        v0, _ = _orbit_value(ws, ws.lift(seed), T)
        if abs(complex(v0) - chain_targets[-1]) < abs(complex(v0) - chain_targets[0]):
            chain_targets.reverse()
        gts = [ws.lift(w) for w in chain_targets]
        zs, ds = _continue_chain(ws, T, gts, ws.lift(seed), floor=floor, tol=tol)
        _, zs, _ = _refine_chain(
            ws, T, gts, zs, ds,
            floor=floor, tol=tol, max_turn=max_turn,
            gap_factor=gap_factor, max_samples=max_samples,
        )
        zs = _arc_thin([complex(z) for z in zs], keep)

    z_scale = max(abs(z) for z in zs)
    for endpoint in (zs[0], zs[-1]):
        if abs(endpoint.imag) > 1e-6 * z_scale:
            raise DynamicsError(
                f"preimage of a real crossing came out complex ({endpoint:.3g}); "
                "the branch is not real here"
            )
    zs[0] = complex(zs[0].real, 0.0)
    zs[-1] = complex(zs[-1].real, 0.0)
    interior = np.asarray(zs[1:-1], dtype=complex)
    if interior.size and float(np.mean(interior.imag)) < 0.0:
        zs = [z.conjugate() for z in zs]
    if zs[0].real < zs[-1].real:
        zs.reverse()
    lo, hi = zs[-1].real, zs[0].real
    return Region(
        "pullback",
        _close_symmetric(zs),
        {"time": T, "trace": (lo, hi), "seed": seed, "solve_tol": tol},
    )


# -- lift through the even power ------------------------------------------


def root_lift(region_f: Region, params: MapParams) -> Region:
    """The component through 0 of {z : z^ell + c1 in region_f}.

    Requires the region to enclose the critical value c1; the boundary then
    winds once around it, and the continuous ell-th root of (w - c1) closes
    after ell trips.  Later trips are earlier ones times a fixed root of
    unity, so the lifted loop carries its rotational symmetry to rounding
    accuracy by construction.
    """
    ell, c1 = params.degree, _c1_float(params)
    w = region_f.loop()
    delta = w - c1
    margin = np.abs(delta).min()
    if margin == 0.0:
        raise DynamicsError("boundary passes through the critical value; lift is singular")
    wind = int(winding_numbers(w, np.asarray([complex(c1)]))[0])
    if wind not in (1, -1):
        raise DynamicsError(
            f"region does not enclose the critical value (winding {wind}); "
            "its lift through the power map would disconnect"
        )
    theta = np.unwrap(np.angle(delta))
    base = np.abs(delta) ** (1.0 / ell) * np.exp(1j * theta / ell)
    rot = cmath.exp(2j * math.pi * wind / ell)
    turns = [base]
    for _ in range(ell - 1):
        turns.append(turns[-1] * rot)
    loop = np.concatenate(turns)
    boundary = tuple(loop) + (loop[0],)
    return Region("pullback", boundary, {"lift": ell, "of": region_f.kind})


def lifted_pullback(
    params: MapParams,
    T: int,
    target: Region,
    seed_abs,
    anchor_value,
    *,
    tol_rel: float = 1e-11,
    floor: float = 1e-9,
    work_bits: int = 192,
    max_turn: float = 0.45,
    gap_factor: float = 4.0,
    max_trip_samples: int = 4000,
    keep_trip: int = 1200,
) -> Region:
    """Preimage of `target` under f^T in the lifted chart (f^T = power map
    followed by a diffeomorphic branch).

    `seed_abs` > 0 is the real preimage of the real crossing `anchor_value`
    of the target.  One continuation trip around the target loop advances
    the preimage by one sector of angle 2*pi/degree; half the turns plus
    the conjugate mirror close the loop.  The result crosses the real axis
    exactly at +-seed_abs.
    """
    ell = params.degree
    if ell % 2:
        raise ValueError("lift needs an even degree")
    seed = float(seed_abs)
    if seed <= 0:
        raise ValueError("seed_abs must be positive (magnitude of the real crossing)")
    loop = list(target.loop())
    half = len(target) // 2
    anchor = float(anchor_value)
    idx = 0 if abs(loop[0] - anchor) <= abs(loop[half] - anchor) else half
    if abs(loop[idx] - anchor) > 1e-7 * max(1.0, abs(anchor)):
        raise BracketError(
            f"anchor value {anchor:.6g} is not a real crossing of the target loop"
        )
    trip_targets = loop[idx:] + loop[: idx + 1]  # closed trip, anchor to anchor
    scale = max(abs(p) for p in trip_targets)
    tol = tol_rel * max(scale, 1e-30)

    with _Workspace(params, work_bits) as ws:
        gts = [ws.lift(w) for w in trip_targets]
        zs, ds = _continue_chain(ws, T, gts, ws.lift(seed), floor=floor, tol=tol)
        _, zs, _ = _refine_chain(
            ws, T, gts, zs, ds,
            floor=floor, tol=tol, max_turn=max_turn,
            gap_factor=gap_factor, max_samples=max_trip_samples,
        )
        zs = _arc_thin([complex(z) for z in zs], keep_trip)

    omega = cmath.exp(2j * math.pi / ell)
    z0, z_end = zs[0], zs[-1]
    fwd, bwd = abs(z_end - z0 * omega), abs(z_end - z0 * omega.conjugate())
    junction = min(fwd, bwd)
    trip_gap = max(abs(zs[i + 1] - zs[i]) for i in range(len(zs) - 1))
    if junction > max(0.25 * trip_gap, 1e-6 * seed):
        raise DynamicsError(
            f"trip around the target loop did not advance by one sector "
            f"(junction defect {junction:.3g})"
        )
    trip = np.asarray(zs, dtype=complex)
    if bwd < fwd:
        trip = np.conj(trip)  # traverse the mirror branch so turns go counterclockwise
    trip[0] = complex(seed, 0.0)

    upper: list = []
    rotk = complex(1.0)
    for _ in range(ell // 2):
        upper.extend(trip[:-1] * rotk)
        rotk *= omega
    upper.append(complex(-seed, 0.0))
    upper = [complex(p) for p in upper]
    dip = min(p.imag for p in upper[1:-1])
    if dip < -1e-6 * seed:
        raise DynamicsError(
            f"lifted boundary dipped {dip:.3g} below the axis; trace would "
            "cross the real line more than twice"
        )
    return Region(
        "pullback",
        _close_symmetric(upper),
        {"time": T, "trace": (-seed, seed), "lift": ell,
         "trip_samples": len(trip), "solve_tol": tol},
    )


# -- the ladder ------------------------------------------------------------


def select_k0(points: LevelPoints, *, floor_level: int = 5) -> int:
    """Smallest level from which the pullback stays trapped near the
    critical value: |r^f - c1| < |u^f - c1| at every deeper computed level.

    `floor_level` keeps the two round starter discs inside the computed
    edge range (the construction reaches three levels above the start).
    """
    with mp.workprec(points.bits):
        c1 = points.params.param()
        cond = {}
        for n in sorted(points.img_prev_edge_pull):
            if n - 2 not in points.branch_edge:
                continue
            r = points.img_prev_edge_pull[n]
            unf = points.image_of(points.branch_edge[n])
            cond[n] = bool(abs(r - c1) < abs(unf - c1))
    levels = sorted(cond)
    for n in levels:
        if all(cond[m] for m in levels if m >= n):
            return max(n, floor_level)
    raise DynamicsError("trapping condition fails at the deepest computed level")


def _k0_margin(points: LevelPoints, n: int) -> float:
    with mp.workprec(points.bits):
        c1 = points.params.param()
        r = points.img_prev_edge_pull[n]
        unf = points.image_of(points.branch_edge[n])
        return float(abs(unf - c1) - abs(r - c1))


@dataclass
class LevelVerdict:
    """Per-level outcome of the ladder checks (None = not applicable).

    `forward` maps a named landing check to (worst residual, allowed
    bound); the bound folds in the target sampling resolution and the
    measured amplification of double-storage rounding along the orbit, so
    a failure means the landing is genuinely off, not that the branch is
    too expanding to re-evaluate from stored samples.
    """

    level: int
    trace_residual: float
    inside_diameter_disc: bool
    nested: ContainmentVerdict | None
    rotation_defect: float
    rotation_ok: bool
    k0_margin: float | None
    d1_trace_residual: float | None = None
    d1_inside_slot_disc: bool | None = None
    d1_inside_annulus: bool | None = None
    forward: dict = field(default_factory=dict)

    def ok(self) -> bool:
        if not (self.inside_diameter_disc and self.rotation_ok):
            return False
        if self.nested is not None and self.nested.contained is not True:
            return False
        if self.k0_margin is not None and self.k0_margin <= 0:
            return False
        for flag in (self.d1_inside_slot_disc, self.d1_inside_annulus):
            if flag is False:
                return False
        return all(res <= bound for res, bound in self.forward.values())


@dataclass
class DiscLadder:
    params: MapParams
    k0: int
    discs: dict = field(default_factory=dict)   # level -> Region
    slots: dict = field(default_factory=dict)   # level -> Region (the D^1 companion)
    verdicts: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def levels(self):
        return sorted(self.discs)

    def top(self) -> int:
        return max(self.discs)

    def all_ok(self) -> bool:
        return all(v.ok() for v in self.verdicts)


def _subsample(arr: np.ndarray, cap: int) -> np.ndarray:
    if len(arr) <= cap:
        return arr
    idx = np.unique(np.round(np.linspace(0, len(arr) - 1, cap)).astype(int))
    return arr[idx]


_EPS = 2.3e-16


def _probe_indices(n: int, probes: int) -> np.ndarray:
    return np.unique(np.linspace(0, n - 1, min(probes, n)).astype(int))


def _landing_direct(
    ws: _Workspace, region: Region, T: int, target: Region, probes: int = 96
) -> tuple[float, float]:
    """Worst forward-landing residual of `region` probes on `target`, with
    its noise allowance.

    Probes are re-evaluated at working precision, so the unavoidable error
    is the double rounding of the stored probe amplified by the measured
    orbit derivative, plus polyline geometry on both sides.  Returns
    (residual, allowance) for the probe with the least headroom; a genuine
    landing defect shows up as residual far above the allowance.
    """
    arr = region.loop()
    idx = _probe_indices(len(arr), probes)
    tol = float(region.meta.get("solve_tol", 0.0))
    pts = arr[idx]
    land = []
    amp = []
    for p in pts:
        v, d, _ = _orbit_with_deriv(ws, ws.lift(complex(p)), T)
        land.append(complex(v))
        amp.append(abs(complex(d)))
    dist = distances_to_boundary(target.loop(), np.asarray(land))
    base = 4.0 * target.resolution + 2.0 * tol
    bounds = base + 8.0 * _EPS * np.asarray(amp) * np.abs(pts)
    worst = int(np.argmax(dist - bounds))
    return float(dist[worst]), float(bounds[worst])


def _landing_composed(
    ws: _Workspace,
    region: Region,
    T1: int,
    mid: Region,
    T2: int,
    target: Region,
    probes: int = 96,
) -> tuple[float, float]:
    """Landing residual for the composite time T1+T2 checked through `mid`.

    The relation being tested only holds as a composition of two solved
    pullbacks, so the honest allowance transports the first leg's measured
    miss of `mid` (plus the chord sag of `mid`'s polyline) through the
    second leg's derivative before adding the storage-rounding term.
    """
    arr = region.loop()
    idx = _probe_indices(len(arr), probes)
    pts = arr[idx]
    lo, hi = mid.meta.get("trace", (0.0, 0.0))
    span = max(abs(hi - lo), 8.0 * mid.resolution)
    sag = mid.resolution**2 / span
    mid_loop = mid.loop()
    tgt_loop = target.loop()
    worst = (-math.inf, 0.0, 0.0)
    for p in pts:
        v1, d1, _ = _orbit_with_deriv(ws, ws.lift(complex(p)), T1)
        delta1 = float(distances_to_boundary(mid_loop, np.asarray([complex(v1)]))[0])
        v2, d2, _ = _orbit_with_deriv(ws, v1, T2)
        dist = float(distances_to_boundary(tgt_loop, np.asarray([complex(v2)]))[0])
        a2 = abs(complex(d2))
        bound = (
            4.0 * target.resolution
            + a2 * (delta1 + sag)
            + 8.0 * _EPS * a2 * abs(complex(d1)) * abs(p)
        )
        if dist - bound > worst[0]:
            worst = (dist - bound, dist, bound)
    return worst[1], worst[2]


def build_nested_discs(
    params: MapParams,
    points: LevelPoints,
    k0: int | None = None,
    levels: int = 8,
    *,
    base_samples: int = 512,
    slot_max_upper: int = 900,
    tol_rel: float = 1e-11,
    floor: float = 1e-9,
    work_bits: int = 192,
    probes: int = 96,
) -> DiscLadder:
    """The nested-disc ladder from level k0-2 up to k0+levels.

    Starts from round discs through the branch edges three and two levels
    below k0, then alternates the lifted pullback (new disc) with the
    single-branch pullback (its companion trapped between consecutive
    discs).  The trapping precondition is re-verified at every level in
    high precision before the level is built; every constructed level gets
    the full set of shape checks, recorded in `verdicts`.
    """
    ell = params.degree
    if k0 is None:
        k0 = select_k0(points)
    top = k0 + levels
    S = fibonacci_times(top + 1)
    need_r = range(k0 - 1, top)
    missing = [n for n in need_r if n not in points.img_prev_edge_pull]
    if missing or top - 1 not in points.branch_edge:
        raise BracketError(
            f"ladder to level {top} needs image-side pullback markers up to "
            f"level {top - 2} and branch edges to {top - 1} "
            f"(missing {missing or 'edges'}); recompute the level points deeper"
        )

    ladder = DiscLadder(
        params=params,
        k0=k0,
        settings={
            "levels": levels,
            "base_samples": base_samples,
            "slot_max_upper": slot_max_upper,
            "tol_rel": tol_rel,
            "floor": floor,
            "work_bits": work_bits,
        },
    )
    u_abs = {n: float(abs(v)) for n, v in points.branch_edge.items()}
    u_sgn = {n: float(v) for n, v in points.branch_edge.items()}
    x_sgn = {n: float(v) for n, v in points.branch_far_edge.items()}

    for m in (k0 - 2, k0 - 1):
        ladder.discs[m] = round_disc(0.0, u_abs[m - 1], samples=base_samples)

    def build_slot(m: int) -> None:
        """Companion of level m: the f^{S_{m-1}} branch preimage with real
        trace (u_m, x_m)."""
        if m in ladder.slots or m not in points.branch_far_edge:
            return
        disc = _decimate_symmetric(ladder.discs[m], slot_max_upper)
        # boundary[0] is the rightmost crossing; pick the real preimage
        # that lands on it (u_m -> u_{m-1}, x_m -> mirror of u_{m-1})
        hi_is_edge = u_sgn[m - 1] > 0
        seed = u_sgn[m] if hi_is_edge else x_sgn[m]
        region = pullback_diffeo(
            params, S[m - 1], disc, seed,
            tol_rel=tol_rel, floor=floor, work_bits=work_bits,
        )
        region.meta["level"] = m
        ladder.slots[m] = region

    build_slot(k0 - 2)
    build_slot(k0 - 1)

    for m in range(k0, top + 1):
        n = m - 1  # marker level of the trapping condition
        margin = _k0_margin(points, n)
        if margin <= 0:
            raise BracketError(
                f"trapping precondition fails at level {n} "
                f"(margin {margin:.3g}); ladder stops before level {m}"
            )
        target = ladder.slots.get(m - 2)
        if target is None:
            raise BracketError(f"companion region at level {m - 2} unavailable")
        region = lifted_pullback(
            params, S[m - 2], target, u_abs[m - 1], u_sgn[m - 2],
            tol_rel=tol_rel, floor=floor, work_bits=work_bits,
        )
        region.meta["level"] = m
        region.meta["k0_margin"] = margin
        ladder.discs[m] = region
        if m <= top - 2:
            build_slot(m)

    _verify_ladder(ladder, points, probes=probes)
    return ladder


def _decimate_symmetric(region: Region, max_upper: int) -> Region:
    half = len(region) // 2
    if half <= max_upper:
        return region
    idx = np.unique(np.round(np.linspace(0, half, max_upper + 1)).astype(int))
    upper = [region.boundary[i] for i in idx]
    return Region(region.kind, _close_symmetric(upper), dict(region.meta, decimated=True))


def _verify_ladder(ladder: DiscLadder, points: LevelPoints, *, probes: int) -> None:
    params = ladder.params
    ell = params.degree
    S = fibonacci_times(ladder.top() + 1)
    u_abs = {n: float(abs(v)) for n, v in points.branch_edge.items()}
    ws = _Workspace(params, ladder.settings.get("work_bits", 192))

    for m in ladder.levels():
        disc = ladder.discs[m]
        lo, hi = disc.real_crossings()
        trace_res = max(abs(hi - u_abs[m - 1]), abs(lo + u_abs[m - 1])) / u_abs[m - 1]
        radius = float(np.abs(disc.loop()).max())
        inside_diam = radius <= u_abs[m - 1] * (1.0 + 1e-9) + 1e-12
        nested = None
        if m - 1 in ladder.discs:
            nested = region_contains(ladder.discs[m - 1], _subsample(disc.loop(), 2500))
        rot = disc.rotation_defect(ell) if m >= ladder.k0 else 0.0
        rot_ok = rot <= max(2.0 * disc.resolution, 1e-9 * radius)
        verdict = LevelVerdict(
            level=m,
            trace_residual=float(trace_res),
            inside_diameter_disc=bool(inside_diam),
            nested=nested,
            rotation_defect=float(rot),
            rotation_ok=bool(rot_ok),
            k0_margin=disc.meta.get("k0_margin"),
        )

        slot = ladder.slots.get(m)
        if slot is not None and m in points.branch_far_edge:
            u_m = float(points.branch_edge[m])
            x_m = float(points.branch_far_edge[m])
            s_lo, s_hi = slot.real_crossings()
            want_lo, want_hi = min(u_m, x_m), max(u_m, x_m)
            span = want_hi - want_lo
            verdict.d1_trace_residual = float(
                max(abs(s_lo - want_lo), abs(s_hi - want_hi)) / span
            )
            center = 0.5 * (u_m + x_m)
            rad = 0.5 * span
            verdict.d1_inside_slot_disc = bool(
                float(np.abs(slot.loop() - center).max()) <= rad * (1.0 + 1e-9) + 1e-12
            )
            inside = region_contains(disc, slot)
            outside = True
            if m + 1 in ladder.discs:
                # The companion's trace endpoint sits exactly on the next
                # disc's boundary, so samples inside a small collar around
                # that touch point are excluded from the winding test.
                nxt = ladder.discs[m + 1]
                touch = float(points.branch_edge[m])
                collar = 8.0 * max(slot.resolution, nxt.resolution)
                pts = slot.loop()
                keep = np.abs(pts - touch) > collar
                if keep.any():
                    wn = winding_numbers(nxt.loop(), pts[keep])
                    outside = bool((wn == 0).all())
            verdict.d1_inside_annulus = bool(inside.contained is not False) and outside

        # forward landing checks: disc onto the companion and disc two
        # levels down (the latter only via the intermediate companion,
        # because that is how the relation was built), companion onto its
        # own disc
        with ws:
            if m - 2 in ladder.slots and m >= ladder.k0:
                verdict.forward["onto_prev_slot"] = _landing_direct(
                    ws, disc, S[m - 2], ladder.slots[m - 2], probes
                )
                if m - 2 in ladder.discs:
                    verdict.forward["onto_prev_disc"] = _landing_composed(
                        ws,
                        disc,
                        S[m - 2],
                        ladder.slots[m - 2],
                        S[m - 3],
                        ladder.discs[m - 2],
                        probes,
                    )
            if slot is not None:
                verdict.forward["slot_onto_disc"] = _landing_direct(
                    ws, slot, S[m - 1], disc, probes
                )
        ladder.verdicts.append(verdict)


# -- area decay ------------------------------------------------------------


@dataclass
class AnnulusReport:
    ell: int
    base_level: int
    areas: dict
    annuli: dict
    tau: dict
    rate_per_level: float
    r_squared: float
    coefficients: dict

    @property
    def tau_min(self) -> float:
        return min(self.tau.values())

    @property
    def tau_spread(self) -> float:
        vals = sorted(self.tau.values())
        return vals[-1] / vals[0] if vals[0] > 0 else math.inf

    def as_dict(self) -> dict:
        return {
            "ell": self.ell,
            "base_level": self.base_level,
            "areas": {k: float(v) for k, v in sorted(self.areas.items())},
            "annuli": {k: float(v) for k, v in sorted(self.annuli.items())},
            "tau": {k: float(v) for k, v in sorted(self.tau.items())},
            "tau_min": float(self.tau_min),
            "rate_per_level": float(self.rate_per_level),
            "r_squared": float(self.r_squared),
            "coefficients": {k: float(v) for k, v in sorted(self.coefficients.items())},
        }


def annulus_report(ladder: DiscLadder) -> AnnulusReport:
    """Areas of the annuli between consecutive discs and their decay.

    The annulus area is the difference of the two shoelace areas, which is
    only meaningful because nesting was verified when the ladder was
    built.  The decay across levels is fitted log-linearly; the reported
    coefficients divide out the idealized slow profile exp(-i/ell)/ell so
    drift in them measures how far the desk-scale degree still is from the
    large-degree regime.
    """
    ell = ladder.params.degree
    levels = ladder.levels()
    areas = {m: region_area(ladder.discs[m]) for m in levels}
    annuli = {}
    tau = {}
    for m in levels[:-1]:
        a = areas[m] - areas[m + 1]
        if a <= 0:
            raise DynamicsError(f"annulus at level {m} has nonpositive area {a:.3g}")
        annuli[m] = a
        tau[m] = ell * a / areas[m]
    base = levels[0]
    idx = np.asarray([m - base for m in sorted(annuli)], dtype=float)
    rel = np.asarray([annuli[m] / areas[base] for m in sorted(annuli)])
    slope, intercept = np.polyfit(idx, np.log(rel), 1)
    fitted = slope * idx + intercept
    ss_res = float(np.sum((np.log(rel) - fitted) ** 2))
    ss_tot = float(np.sum((np.log(rel) - np.log(rel).mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    coeff = {
        m: float(annuli[m] / areas[base] * ell * math.exp((m - base) / ell))
        for m in sorted(annuli)
    }
    return AnnulusReport(
        ell=ell,
        base_level=base,
        areas=areas,
        annuli=annuli,
        tau=tau,
        rate_per_level=float(math.exp(slope)),
        r_squared=float(r2),
        coefficients=coeff,
    )


# -- star shapes inside the discs -----------------------------------------


@dataclass
class StarFitReport:
    ell: int
    kappa: dict          # level -> largest fitting angle (0.0 = none fits)
    tip_clearance: dict  # level -> |u_{n-1}| - |y_n|, the room left for spikes

    @property
    def kappa_floor(self) -> float:
        return min(self.kappa.values())

    @property
    def kappa_spread(self) -> float:
        vals = sorted(self.kappa.values())
        return vals[-1] / vals[0] if vals[0] > 0 else math.inf

    def as_dict(self) -> dict:
        return {
            "ell": self.ell,
            "kappa": {k: float(v) for k, v in sorted(self.kappa.items())},
            "tip_clearance": {k: float(v) for k, v in sorted(self.tip_clearance.items())},
            "kappa_floor": float(self.kappa_floor),
        }


def contains_star_check(
    ladder: DiscLadder,
    points: LevelPoints,
    *,
    kappa: float | None = None,
    steps: int = 14,
) -> StarFitReport:
    """Largest cutting angle whose star still fits in each disc.

    With `kappa` given, reports that single angle where it fits and 0.0
    where it does not; otherwise bisects per level.  Star radii are the
    magnitudes of the level's nearest zero-preimage and outer return.
    """
    ell = ladder.params.degree
    fitted = {}
    clearance = {}
    for m in ladder.levels():
        if m not in points.precritical or m not in points.outer_return:
            continue
        z_m = float(abs(points.precritical[m]))
        y_m = float(abs(points.outer_return[m]))
        disc = _decimate_symmetric(ladder.discs[m], 1500)
        clearance[m] = float(abs(points.branch_edge[m - 1])) - y_m

        def fits(k: float) -> bool:
            return star_fits(disc, star_region(k, z_m, y_m, ell))

        if kappa is not None:
            fitted[m] = float(kappa) if fits(kappa) else 0.0
            continue
        lo, hi = 0.0, 1.45
        if not fits(0.02):
            fitted[m] = 0.0
            continue
        lo = 0.02
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if fits(mid):
                lo = mid
            else:
                hi = mid
        fitted[m] = lo
    if not fitted:
        raise DynamicsError("no ladder level has the marked points for a star fit")
    return StarFitReport(ell=ell, kappa=fitted, tip_clearance=clearance)
