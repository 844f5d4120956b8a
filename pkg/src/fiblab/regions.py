"""Sampled plane regions: lenses over real intervals, sector stars, areas,
and containment tests.

Every region is a closed curve stored as an explicit loop of complex
samples (first sample repeated at the end).  Regions built here follow one
sampling convention throughout: index 0 sits on the real axis at the
rightmost crossing, the first half of the loop runs through the closed
upper half plane, and the lower half is the conjugate mirror of the upper
half in reverse.  That makes conjugation symmetry a property of the
construction rather than something to test for approximately, and it
survives pointwise transformation by any map with real coefficients.

Containment is decided at sampling resolution: a verdict is only issued
when the measured boundary separation clears a safety multiple of the
local sample spacing; otherwise the test reports "inconclusive" so the
caller can resample and retry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely

from .core import DynamicsError

__all__ = [
    "Region",
    "StarRegion",
    "ContainmentVerdict",
    "round_disc",
    "poincare_lens",
    "symmetric_disc",
    "star_region",
    "region_area",
    "region_contains",
    "winding_numbers",
    "boundary_separation",
    "distances_to_boundary",
    "star_fits",
]

_TWO_PI = 2.0 * math.pi


@dataclass
class Region:
    """A closed sampled curve.

    `kind` is a short tag ("euclid-disc", "poincare-lens", "star",
    "pullback"); `meta` carries the defining data (interval, angle, level,
    iterate time) so reports can reconstruct where a boundary came from.
    """

    kind: str
    boundary: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = tuple(complex(p) for p in self.boundary)
        if len(pts) < 3:
            raise ValueError(f"boundary needs at least 3 samples, got {len(pts)}")
        if pts[0] != pts[-1]:
            raise ValueError("boundary must be closed: repeat the first sample at the end")
        if not np.isfinite(np.asarray(pts, dtype=complex)).all():
            raise ValueError("boundary contains non-finite samples")
        object.__setattr__(self, "boundary", pts)

    # -- sample access ----------------------------------------------------

    def loop(self) -> np.ndarray:
        """Open loop as a complex array (closing duplicate dropped)."""
        return np.asarray(self.boundary[:-1], dtype=complex)

    def __len__(self) -> int:
        return len(self.boundary) - 1

    @property
    def resolution(self) -> float:
        """Largest gap between adjacent samples."""
        arr = np.asarray(self.boundary, dtype=complex)
        return float(np.abs(np.diff(arr)).max())

    # -- geometric self-checks -------------------------------------------

    def real_crossings(self, *, rel_tol: float = 1e-7) -> tuple:
        """(lo, hi) real-axis crossings, read off the near-real samples."""
        arr = self.loop()
        scale = float(np.abs(arr).max())
        mask = np.abs(arr.imag) <= rel_tol * max(scale, 1e-300)
        if not mask.any():
            raise DynamicsError("boundary has no sample on the real axis")
        reals = arr.real[mask]
        return float(reals.min()), float(reals.max())

    def conjugation_defect(self) -> float:
        """Deviation from the mirror convention conj(b[k]) == b[-1-k].

        Exactly 0.0 for every boundary built by this module.
        """
        arr = np.asarray(self.boundary, dtype=complex)
        return float(np.abs(np.conj(arr) - arr[::-1]).max())

    def rotation_defect(self, ell: int, *, probe: int = 512) -> float:
        """How far rotating by 2*pi/ell moves the boundary off itself.

        Measured as the worst distance from `probe` rotated samples to the
        original boundary polyline, so sampling density does not inflate
        the defect; regions without the symmetry report something on the
        order of their diameter.
        """
        arr = self.loop()
        idx = np.linspace(0, len(arr) - 1, min(probe, len(arr))).astype(int)
        rot = arr[idx] * complex(math.cos(_TWO_PI / ell), math.sin(_TWO_PI / ell))
        return float(distances_to_boundary(arr, rot).max())


# -- elementary constructions --------------------------------------------


def _close_symmetric(upper: list) -> tuple:
    """Close a loop from its upper-half path (real endpoints included)."""
    lower = [complex(p.real, -p.imag) for p in upper[-2:0:-1]]
    return tuple(upper + lower + [upper[0]])


def round_disc(center: float, radius: float, *, samples: int = 256) -> Region:
    """Euclidean disc with a real center, sampled symmetrically."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    thetas = np.linspace(0.0, math.pi, samples)
    upper = [complex(center + radius, 0.0)]
    upper += [center + radius * complex(math.cos(t), math.sin(t)) for t in thetas[1:-1]]
    upper.append(complex(center - radius, 0.0))
    return Region(
        "euclid-disc",
        _close_symmetric(upper),
        {"center": float(center), "radius": float(radius)},
    )


def poincare_lens(interval, alpha: float, *, samples: int = 256) -> Region:
    """The lens over a real interval whose arcs meet the axis at angle `alpha`.

    Each of the two boundary arcs is the locus where the interval subtends
    the constant angle `alpha`; alpha = pi/2 gives the round disc on the
    interval as diameter, alpha -> pi collapses onto the interval, and
    alpha -> 0 blows up.  Arc geometry: for half-width h the arc lies on the
    circle of radius h/sin(alpha) centered at height h/tan(alpha) above the
    midpoint, and its apex is the topmost point of that circle.
    """
    a, b = float(min(interval)), float(max(interval))
    if not b > a:
        raise ValueError(f"interval must be nondegenerate, got ({a}, {b})")
    if not 0.0 < alpha < math.pi:
        raise ValueError(f"alpha must lie in (0, pi), got {alpha}")
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    k = half / math.tan(alpha) if abs(alpha - 0.5 * math.pi) > 1e-15 else 0.0
    radius = half / math.sin(alpha)
    center = complex(mid, k)
    psi_b = math.atan2(-k, half)
    psi_a = math.atan2(-k, -half)
    if psi_a <= psi_b:  # sweep counterclockwise through the apex
        psi_a += _TWO_PI
    upper = [complex(b, 0.0)]
    for t in np.linspace(psi_b, psi_a, samples)[1:-1]:
        p = center + radius * complex(math.cos(t), math.sin(t))
        upper.append(complex(p.real, max(p.imag, 0.0)))
    upper.append(complex(a, 0.0))
    return Region(
        "poincare-lens",
        _close_symmetric(upper),
        {"interval": (a, b), "alpha": float(alpha)},
    )


def symmetric_disc(interval, *, samples: int = 256) -> Region:
    """The round disc meeting the real axis exactly in `interval`."""
    return poincare_lens(interval, 0.5 * math.pi, samples=samples)


# -- sector stars ---------------------------------------------------------


@dataclass
class StarRegion:
    """Rotationally repeated star: `pieces` are simple closed polygons.

    The region is the union of the pieces: per sector an inner piece next
    to the origin and a spike piece reaching out to radius `y` along the
    sector axis, rotated to all `ell` sectors.  A single Region cannot hold
    it because the pieces only touch at isolated pinch points.
    """

    kappa: float
    z: float
    y: float
    ell: int
    pieces: tuple

    def vertices(self) -> np.ndarray:
        return np.concatenate([p.loop() for p in self.pieces])

    def max_radius(self) -> float:
        return float(np.abs(self.vertices()).max())


def _clip_halfplane(poly: list, anchor: complex, direction: complex, keep: float) -> list:
    """Sutherland-Hodgman clip of a closed polygon against one half plane.

    Keeps the side where cross(direction, p - anchor) has the sign of
    `keep`; points on the line stay.
    """
    if not poly:
        return []
    scale = max(abs(p) for p in poly) + abs(anchor)
    eps = 1e-14 * scale

    def side(p: complex) -> float:
        v = p - anchor
        return direction.real * v.imag - direction.imag * v.real

    out: list = []
    for i, p in enumerate(poly):
        q = poly[(i + 1) % len(poly)]
        sp, sq = side(p) * keep, side(q) * keep
        if sp >= -eps:
            out.append(p)
            if sq < -eps and sp > eps:
                out.append(p + (q - p) * (sp / (sp - sq)))
        elif sq > eps:
            out.append(p + (q - p) * (sp / (sp - sq)))
    # drop consecutive duplicates introduced by on-line vertices
    dedup: list = []
    for p in out:
        if not dedup or abs(p - dedup[-1]) > eps:
            dedup.append(p)
    if dedup and abs(dedup[0] - dedup[-1]) <= eps:
        dedup.pop()
    return dedup


def _sector_polygon(ell: int, r_out: float, arc_samples: int) -> list:
    half = _TWO_PI / ell
    apex: list = [0j]
    for t in np.linspace(-half, half, max(arc_samples, 8)):
        apex.append(r_out * complex(math.cos(t), math.sin(t)))
    return apex


def _component_polygon(sector: list, lines, probe: complex) -> list:
    poly = list(sector)
    for anchor, direction in lines:
        v = probe - anchor
        keep = direction.real * v.imag - direction.imag * v.real
        if keep == 0.0:
            raise DynamicsError("component probe sits on a cutting line")
        poly = _clip_halfplane(poly, anchor, direction, keep)
        if len(poly) < 3:
            return []
    return poly


def star_region(kappa: float, z: float, y: float, ell: int, *, arc_samples: int = 48) -> StarRegion:
    """The spiked region S over radii (z, y): per sector, the two pieces of
    the sector cut by lines through z and through y at angles +-kappa that
    meet the real segment (0, y), repeated over all ell rotations.

    kappa = 0 degenerates to the radial segments [0,z] and [z,y] (the
    cutting lines collapse onto the axis); those come back as zero-area
    two-point loops so containment checks still work.
    """
    if not 0.0 < z < y:
        raise ValueError(f"need 0 < z < y, got z={z}, y={y}")
    if not 0.0 <= kappa < 0.5 * math.pi:
        raise ValueError(f"kappa must lie in [0, pi/2), got {kappa}")
    if ell < 4 or ell % 2:
        raise ValueError(f"ell must be even and >= 4, got {ell}")

    if kappa == 0.0:
        base = [
            Region("star", (0j, complex(z), 0j), {"piece": "inner", "degenerate": True}),
            Region("star", (complex(z), complex(y), complex(z)), {"piece": "spike", "degenerate": True}),
        ]
    else:
        c, s = math.cos(kappa), math.sin(kappa)
        lines = [
            (complex(z), complex(c, s)),
            (complex(z), complex(c, -s)),
            (complex(y), complex(c, s)),
            (complex(y), complex(c, -s)),
        ]
        r_out = 2.0 * y / max(c, 0.05) + 2.0 * y
        sector = _sector_polygon(ell, r_out, arc_samples)
        inner = _component_polygon(sector, lines, complex(0.5 * z))
        spike = _component_polygon(sector, lines, complex(0.5 * (z + y)))
        if not inner or not spike:
            raise DynamicsError(
                f"star component vanished for kappa={kappa}, ell={ell} "
                "(cutting lines leave the sector no room)"
            )
        base = [
            Region("star", tuple(inner) + (inner[0],), {"piece": "inner"}),
            Region("star", tuple(spike) + (spike[0],), {"piece": "spike"}),
        ]

    pieces = []
    for i in range(ell):
        w = complex(math.cos(_TWO_PI * i / ell), math.sin(_TWO_PI * i / ell))
        for piece in base:
            rotated = tuple(p * w for p in piece.boundary) if i else piece.boundary
            pieces.append(Region("star", rotated, dict(piece.meta, sector=i)))
    return StarRegion(kappa=float(kappa), z=float(z), y=float(y), ell=ell, pieces=tuple(pieces))


# -- area and containment -------------------------------------------------


def region_area(region: Region, *, check_simple: bool = True) -> float:
    """Shoelace area of the sampled boundary.

    With `check_simple` the boundary is first screened for self-crossings
    at sampling resolution; shoelace silently cancels area on a figure
    eight, so that screen is what makes the number trustworthy.
    """
    arr = np.asarray(region.boundary, dtype=complex)
    if check_simple:
        ring = shapely.LineString(np.column_stack([arr.real, arr.imag]))
        if not ring.is_simple:
            raise DynamicsError(
                f"{region.kind} boundary self-intersects at sampling resolution "
                f"({len(region)} samples)"
            )
    return float(0.5 * abs(np.sum(np.conj(arr[:-1]) * arr[1:]).imag))


def winding_numbers(loop: np.ndarray, points: np.ndarray, *, block: int = 256) -> np.ndarray:
    """Signed winding number of the closed `loop` around each point.

    Horizontal-ray crossing count with orientation; points closer to the
    loop than its own resolution get whatever the ray test says, so callers
    should pair this with a separation measurement.
    """
    a = np.asarray(loop, dtype=complex)
    b = np.roll(a, -1)
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    out = np.empty(len(pts), dtype=np.int64)
    for lo in range(0, len(pts), block):
        p = pts[lo : lo + block][:, None]
        upward = (a.imag[None, :] <= p.imag) & (b.imag[None, :] > p.imag)
        downward = (b.imag[None, :] <= p.imag) & (a.imag[None, :] > p.imag)
        dy = b.imag[None, :] - a.imag[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dy != 0.0, (p.imag - a.imag[None, :]) / dy, 0.0)
        x_cross = a.real[None, :] + t * (b.real[None, :] - a.real[None, :])
        right = x_cross > p.real
        out[lo : lo + block] = (upward & right).sum(axis=1) - (downward & right).sum(axis=1)
    return out


def distances_to_boundary(loop: np.ndarray, points: np.ndarray, *, block: int = 128) -> np.ndarray:
    """Distance from each point to the closed polyline through `loop`."""
    a = np.asarray(loop, dtype=complex)
    b = np.roll(a, -1)
    seg = b - a
    seg_len2 = np.maximum(np.abs(seg) ** 2, 1e-300)
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    out = np.empty(len(pts))
    for lo in range(0, len(pts), block):
        p = pts[lo : lo + block][:, None]
        w = p - a[None, :]
        t = np.clip((w.real * seg.real + w.imag * seg.imag) / seg_len2, 0.0, 1.0)
        out[lo : lo + block] = np.abs(w - t * seg[None, :]).min(axis=1)
    return out


def boundary_separation(loop: np.ndarray, points: np.ndarray, *, block: int = 128) -> tuple:
    """(min distance, length of the nearest loop segment) over all points."""
    a = np.asarray(loop, dtype=complex)
    b = np.roll(a, -1)
    seg = b - a
    seg_len2 = np.maximum(np.abs(seg) ** 2, 1e-300)
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    best = math.inf
    best_seg = 0.0
    for lo in range(0, len(pts), block):
        p = pts[lo : lo + block][:, None]
        w = p - a[None, :]
        t = np.clip((w.real * seg.real + w.imag * seg.imag) / seg_len2, 0.0, 1.0)
        d = np.abs(w - t * seg[None, :])
        flat = d.argmin()
        val = float(d.flat[flat])
        if val < best:
            best = val
            best_seg = float(np.abs(seg)[flat % len(a)])
    return best, best_seg


@dataclass
class ContainmentVerdict:
    """Outcome of a sampled containment test.

    `contained` is None when the winding test succeeded but the measured
    separation did not clear `margin_factor` times the local sampling
    resolution — resample and rerun rather than trusting the verdict.
    """

    contained: bool | None
    winding_ok: bool
    separation: float
    resolution: float
    margin_factor: float

    def __bool__(self) -> bool:
        return self.contained is True


def region_contains(outer: Region, inner, *, margin_factor: float = 10.0) -> ContainmentVerdict:
    """Does `outer` strictly contain `inner` (a Region or sample array)?

    Every inner sample must see the same winding number +-1 from the outer
    loop, and the closest approach must clear `margin_factor` times the
    length of the nearest outer segment (the local sampling resolution).
    """
    loop = outer.loop()
    pts = inner.loop() if isinstance(inner, Region) else np.atleast_1d(np.asarray(inner, dtype=complex))
    wn = winding_numbers(loop, pts)
    winding_ok = bool((wn == 1).all() or (wn == -1).all())
    separation, local_res = boundary_separation(loop, pts)
    if not winding_ok:
        return ContainmentVerdict(False, False, separation, local_res, margin_factor)
    if separation > margin_factor * local_res:
        return ContainmentVerdict(True, True, separation, local_res, margin_factor)
    return ContainmentVerdict(None, True, separation, local_res, margin_factor)


def star_fits(outer: Region, star: StarRegion, *, margin_factor: float = 2.0) -> bool:
    """All star pieces strictly inside `outer` (winding + modest margin).

    Star spikes by construction run extremely close to the boundary they
    probe, so the full `region_contains` margin would always be
    inconclusive; a reduced margin is the honest compromise for the fitted
    kappa search.
    """
    loop = outer.loop()
    pts = star.vertices()
    wn = winding_numbers(loop, pts)
    if not ((wn == 1).all() or (wn == -1).all()):
        return False
    separation, local_res = boundary_separation(loop, pts)
    return separation > margin_factor * local_res
