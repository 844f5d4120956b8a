"""Dynamically marked points of every return level, their ordering and bounds.

For a parameter whose closest-return structure is certified, the first-return
map to a shrinking chain of symmetric critical neighbourhoods has exactly two
kinds of branches per level n: a central one (the full return, time S_n) and
an off-center one (time S_{n-1}).  Each level is pinned down by a handful of
points:

* ``closest_return[n]``   -- the orbit point c_{S_n}, written d_n below;
* ``precritical[n]``      -- the point of order S_n nearest 0 (z_n);
* ``branch_edge[n]``      -- inner endpoint u_n of the off-center branch
  domain, mapping onto the previous edge after S_{n-1} steps;
* ``branch_far_edge[n]``  -- its outer endpoint x_n (image is the mirrored
  previous edge);
* ``central_edge[n]``     -- endpoint v_n of the central domain; the full
  return sends it to the boundary of the level window;
* ``outer_return[n]``     -- y_n, the orbit point S_n steps past the return
  two levels deeper, which lands between u_n and the nearest precritical;
* on the image side of the critical value c_1: the left endpoint of the
  maximal interval around c_1 on which f^{S_n - 1} is injective
  (``img_mono_end``), and the two marked preimages inside it of the previous
  and twice-previous branch edges (``img_edge_pull``, ``img_prev_edge_pull``).

Every point is produced by a certified monotone-branch solve
(:mod:`fiblab.branches`) and carries its measured residual.  Because the map
is even, all solves run on the positive half-axis and signs are applied
afterwards; the sign of each level is read off the orbit itself (the
closest-return sides repeat with period four: -, +, +, -).

``verify_ordering`` checks the complete metric ladder of these points, the
statement all later distortion/renormalization/complex-disc work leans on.
``real_bounds_report`` measures the contraction ratios between consecutive
levels.  ``covering_Fn`` builds the canonical interval covers of the critical
omega-limit set and ``bounded_geometry_stats`` summarizes how their geometry
scales from one generation to the next.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from mpmath import mp, mpf

from .branches import (
    apply_iterate,
    fixed_point_q,
    solve_on_branch,
    verify_branch,
)
from .combinatorics import check_fibonacci, fibonacci_times
from .core import BracketError, DynamicsError, MapParams, to_decimal_string

__all__ = [
    "SIDE_PATTERN",
    "return_side",
    "LevelPoints",
    "compute_level_points",
    "PassageResult",
    "first_passage",
    "OrderingCheck",
    "OrderingReport",
    "verify_ordering",
    "IdentityReport",
    "verify_identities",
    "BoundsReport",
    "real_bounds_report",
    "CoveringFn",
    "covering_Fn",
    "covering_orbit_check",
    "GeometryStats",
    "bounded_geometry_stats",
]

# Sign of the n-th closest return, indexed by n mod 4.  Two consecutive
# returns share a side, then the side flips: -, +, +, -, -, +, +, ...
SIDE_PATTERN = (-1, 1, 1, -1)


def return_side(n: int) -> int:
    """Predicted sign of the n-th closest return."""
    return SIDE_PATTERN[n % 4]


# --------------------------------------------------------------------------
# point families


@dataclass
class LevelPoints:
    """All marked points of levels 2..depth (edges continued to edge_depth).

    Signed values; magnitudes are `abs()` of the entries.  `residuals` holds
    the worst solve residual seen per family, measured in pure mpmath at the
    working precision.
    """

    params: MapParams
    depth: int
    edge_depth: int
    bits: int
    fixed_point: mpf
    outer_fixed: mpf
    closest_return: dict = field(default_factory=dict)
    outer_return: dict = field(default_factory=dict)
    precritical: dict = field(default_factory=dict)
    branch_edge: dict = field(default_factory=dict)
    branch_far_edge: dict = field(default_factory=dict)
    central_edge: dict = field(default_factory=dict)
    img_mono_end: dict = field(default_factory=dict)
    img_edge_pull: dict = field(default_factory=dict)
    img_prev_edge_pull: dict = field(default_factory=dict)
    passage_orders: dict = field(default_factory=dict)
    sides: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    def side(self, n: int) -> int:
        return self.sides[n]

    def image_of(self, x):
        """One application of the map (everything 'f' lives on the image side)."""
        with mp.workprec(self.bits):
            return x ** self.params.degree + self.params.param()

    @staticmethod
    def hat(x):
        """The symmetric partner (same image, other side of 0)."""
        return -x

    def level_domain(self, n: int):
        """The symmetric level-n window, bounded by the previous branch edges."""
        m = abs(self.branch_edge[n - 1])
        return (-m, m)

    def central_domain(self, n: int):
        m = abs(self.central_edge[n])
        return (-m, m)

    def branch_domain(self, n: int):
        a, b = self.branch_edge[n], self.branch_far_edge[n]
        return (a, b) if a <= b else (b, a)

    def injectivity_interval(self, n: int):
        """Maximal interval around c_1 on which f^{S_n - 1} is injective."""
        return (self.img_mono_end[n], self.image_of(self.precritical[n - 1]))

    def full_levels(self):
        return range(2, self.depth + 1)

    def edge_levels(self):
        return range(2, self.edge_depth + 1)

    def image_levels(self):
        return sorted(self.img_edge_pull)

    def as_rows(self) -> dict:
        """Decimal-string tables keyed by family then level (for reporting)."""
        fams = {
            "closest_return": self.closest_return,
            "outer_return": self.outer_return,
            "precritical": self.precritical,
            "branch_edge": self.branch_edge,
            "branch_far_edge": self.branch_far_edge,
            "central_edge": self.central_edge,
            "img_mono_end": self.img_mono_end,
            "img_edge_pull": self.img_edge_pull,
            "img_prev_edge_pull": self.img_prev_edge_pull,
        }
        out = {
            name: {n: to_decimal_string(v, self.bits) for n, v in sorted(d.items())}
            for name, d in fams.items()
        }
        out["fixed_point"] = to_decimal_string(self.fixed_point, self.bits)
        out["outer_fixed"] = to_decimal_string(self.outer_fixed, self.bits)
        out["sides"] = dict(sorted(self.sides.items()))
        out["passage_orders"] = dict(sorted(self.passage_orders.items()))
        return out


def _outer_fixed_point(params: MapParams, bits: int) -> mpf:
    """The positive orientation-preserving fixed point (right edge of the core)."""
    with mp.workprec(bits):
        c1 = params.param()
        l = params.degree
        lo = mpf(1)
        hi = 1 + max(mpf(1), abs(c1))
        x = hi
        tol = mpf(2) ** (8 - bits)
        for _ in range(bits + 64):
            g = x ** l + c1 - x
            if g > 0:
                hi = x
            elif g < 0:
                lo = x
            else:
                break
            dg = l * x ** (l - 1) - 1
            xn = x - g / dg
            if not (lo < xn < hi):
                xn = (lo + hi) / 2
            if abs(xn - x) <= tol * max(1, abs(x)):
                x = xn
                break
            x = xn
        return x


def _track_residual(residuals: dict, family: str, value) -> None:
    cur = residuals.get(family)
    mag = abs(value)
    if cur is None or mag > cur:
        residuals[family] = mag


def compute_level_points(
    params: MapParams,
    depth: int,
    *,
    edge_depth: int | None = None,
    bits: int | None = None,
    check_certified: bool = True,
) -> LevelPoints:
    """Solve for every marked point of levels 2..depth.

    `edge_depth` optionally continues just the branch-edge / precritical
    chains (the two used as brackets and in the deepest ratio tables) past
    `depth`.  The parameter must have certified closest returns to
    max(depth + 2, edge_depth); this is rechecked unless `check_certified`
    is disabled.
    """
    if depth < 3:
        raise ValueError("need depth >= 3")
    edge_depth = max(depth, edge_depth or depth)
    bits = bits or params.precision.bits
    need = max(depth + 2, edge_depth)
    if check_certified:
        verdict = check_fibonacci(params, need)
        if not verdict.ok:
            raise DynamicsError(
                f"parameter not certified to level {need}: {verdict.reason}"
            )
    S = fibonacci_times(edge_depth + 3)
    with mp.workprec(bits):
        c1 = params.param()
        l = params.degree
        tol = params.precision.tol()
        touch = tol * mpf("1e12")
        q = fixed_point_q(params, bits)
        beta = _outer_fixed_point(params, bits)

        # one orbit pass covers all closest returns and the outer returns
        t_orbit = max(S[depth + 2] + S[depth], S[edge_depth])
        orbit = [mpf(0), c1]
        x = c1
        for _ in range(t_orbit - 1):
            x = x ** l + c1
            orbit.append(x)

        d = {n: orbit[S[n]] for n in range(edge_depth + 1)}
        y = {n: orbit[S[n + 2] + S[n]] for n in range(1, depth + 1)}
        sides = {n: (1 if d[n] > 0 else -1) for n in d}
        for n in range(edge_depth + 1, edge_depth + 3):
            sides[n] = -sides[n - 2]

        u = {0: q, 1: -q}
        z = {0: abs(c1) ** (mpf(1) / l)}
        z[0] *= sides[2]
        xfar: dict = {}
        v: dict = {}
        residuals: dict = {}

        # chain of positive-side branches: on (0, |z_{k-1}|) the time-S_k map
        # is monotone with image spanning (d_k, d_{k-2}); its roots for the
        # targets 0 / u_k / -u_k are |z_k| / |u_{k+1}| / |x_{k+1}|.
        for k in range(1, edge_depth + 1):
            bracket = (mpf(0), abs(z[k - 1]))
            cert = verify_branch(params, S[k], bracket, bits, touch_tol=touch)
            if not cert.ok:
                raise DynamicsError(
                    f"level-{k} solve bracket lost monotonicity at time {cert.failure_time}"
                )
            seed = None
            if k >= 3:
                seed = abs(z[k - 1]) ** 2 / abs(z[k - 2])
            rz = solve_on_branch(
                params, S[k], bracket, mpf(0), certificate=cert, x0=seed, bits=bits
            )
            z[k] = sides[k + 2] * rz.x
            _track_residual(residuals, "precritical", rz.residual)
            if k + 1 <= edge_depth:
                seed = None
                if k >= 3:
                    seed = abs(u[k]) ** 2 / abs(u[k - 1])
                ru = solve_on_branch(
                    params, S[k], bracket, u[k], certificate=cert, x0=seed, bits=bits
                )
                u[k + 1] = sides[k + 1] * ru.x
                _track_residual(residuals, "branch_edge", ru.residual)
            if 2 <= k + 1 <= depth + 1:
                rx = solve_on_branch(
                    params, S[k], bracket, -u[k], certificate=cert, bits=bits
                )
                xfar[k + 1] = sides[k + 1] * rx.x
                _track_residual(residuals, "branch_far_edge", rx.residual)

        # central-domain edges: the full return sends v_n to the boundary of
        # the level window, on the side opposite the level's own side.  At
        # the base level the central and off-center domains share an edge.
        v[2] = u[2]
        for n in range(3, depth + 1):
            bracket = (mpf(0), abs(u[n]))
            cert = verify_branch(params, S[n], bracket, bits, touch_tol=touch)
            if not cert.ok:
                raise DynamicsError(
                    f"central-edge bracket at level {n} lost monotonicity"
                )
            target = -sides[n] * abs(u[n - 1])
            rv = solve_on_branch(params, S[n], bracket, target, certificate=cert, bits=bits)
            v[n] = sides[n] * rv.x
            _track_residual(residuals, "central_edge", rv.residual)

        points = LevelPoints(
            params=params,
            depth=depth,
            edge_depth=edge_depth,
            bits=bits,
            fixed_point=q,
            outer_fixed=beta,
            closest_return=d,
            outer_return=y,
            precritical=z,
            branch_edge=u,
            branch_far_edge=xfar,
            central_edge=v,
            sides=sides,
            residuals=residuals,
        )

        # image side: left end of the maximal injectivity interval of
        # f^{S_n - 1} around c_1, then the two marked preimages inside it.
        crit_signs = [0] + [(1 if w > 0 else (-1 if w < 0 else 0)) for w in orbit[1:]]
        for n in range(3, depth + 1):
            pas = first_passage(
                params,
                S[n] - 2,
                side=-1,
                outer=-beta,
                bits=bits,
                _orbit_signs=crit_signs,
            )
            if not pas.proper:  # pragma: no cover - levels start past this
                continue
            points.img_mono_end[n] = pas.x
            points.passage_orders[n] = pas.order
            _track_residual(residuals, "img_mono_end", pas.residual)
            bracket = (pas.x, c1)
            cert = verify_branch(params, S[n] - 1, bracket, bits, touch_tol=touch)
            if not cert.ok:
                raise DynamicsError(
                    f"image-side interval at level {n} is not monotone "
                    f"(failure at {cert.failure_time})"
                )
            # The bracket hugs c_1, so the branch derivative is roughly
            # (image span)/(bracket width) -- astronomically large at deep
            # levels.  A fixed domain tolerance would leave the image
            # residual at derivative * tol, so scale the domain tolerance
            # down by the width/span ratio (with generous slack for the
            # distortion of the branch).
            lo_v, hi_v = cert.image_interval()
            atol = tol * (abs(c1 - pas.x) / abs(hi_v - lo_v)) * mpf("1e-6")
            tw = sides[n] * abs(u[n - 1])
            rw = solve_on_branch(
                params, S[n] - 1, bracket, tw, certificate=cert, bits=bits, abs_tol=atol
            )
            points.img_edge_pull[n] = rw.x
            _track_residual(residuals, "img_edge_pull", rw.residual)
            tr = sides[n] * abs(u[n - 2])
            rr = solve_on_branch(
                params, S[n] - 1, bracket, tr, certificate=cert, bits=bits, abs_tol=atol
            )
            points.img_prev_edge_pull[n] = rr.x
            _track_residual(residuals, "img_prev_edge_pull", rr.residual)

        return points


# --------------------------------------------------------------------------
# first passage: where does injectivity of an iterate break


@dataclass
class PassageResult:
    x: mpf
    order: int | None
    proper: bool
    residual: mpf


def first_passage(
    params: MapParams,
    limit: int,
    *,
    side: int = -1,
    outer,
    bits: int | None = None,
    _orbit_signs=None,
) -> PassageResult:
    """Nearest point p on the given side of c_1 such that the interval from
    p to c_1 contains a point of some order <= `limit` over the critical
    point; equivalently the endpoint of the maximal interval around c_1 on
    which f^t stays injective for every t <= limit + 1.

    Detection is by endpoint orbits: the interval contains an order-t point
    exactly when f^t of its endpoints straddle 0.  A boolean bisection on
    the endpoint localizes the passage, then the root of the order-t*
    iterate is polished on a certified bracket.  Returns ``proper=False``
    (with x = `outer`) when even the full interval develops no passage.
    """
    bits = bits or params.precision.bits
    with mp.workprec(bits):
        c1 = params.param()
        l = params.degree
        outer = outer if isinstance(outer, mpf) else mpf(str(outer))
        if side not in (-1, 1):
            raise ValueError("side must be -1 or +1")
        if side * (outer - c1) <= 0:
            raise BracketError("outer point is on the wrong side of c1")

        if _orbit_signs is None:
            signs = [0, (1 if c1 > 0 else -1)]
            w = c1
            for _ in range(limit):
                w = w ** l + c1
                signs.append(1 if w > 0 else (-1 if w < 0 else 0))
        else:
            signs = _orbit_signs

        def crossing(x0):
            """First t <= limit at which the endpoint orbits straddle 0."""
            w = x0
            for t in range(1, limit + 1):
                w = w ** l + c1
                s = 1 if w > 0 else (-1 if w < 0 else 0)
                if s == 0 or s * signs[t + 1] < 0:
                    return t
            return None

        if crossing(outer) is None:
            return PassageResult(x=outer, order=None, proper=False, residual=mpf(0))

        # bisect the offset from c1 until the passage order stabilizes and
        # the bracket is tight enough for a certified polish
        lo, hi = mpf(0), outer - c1  # lo: no passage, hi: passage
        order = None
        for _ in range(max(80, bits // 3)):
            mid = (lo + hi) / 2
            t = crossing(c1 + mid)
            if t is None:
                lo = mid
            else:
                hi = mid
                order = t
            if abs(hi - lo) <= abs(hi) * mpf(2) ** -60:
                break
        inner, outerx = c1 + lo, c1 + hi
        bracket = (outerx, inner) if side < 0 else (inner, outerx)
        root = solve_on_branch(params, order, bracket, mpf(0), bits=bits)
        return PassageResult(x=root.x, order=order, proper=True, residual=root.residual)


# --------------------------------------------------------------------------
# ordering


@dataclass
class OrderingCheck:
    name: str
    level: int
    ok: bool
    detail: str = ""
    indistinguishable: bool = False


@dataclass
class OrderingReport:
    ok: bool
    checks: list
    gap_tol: mpf

    def failures(self):
        return [c for c in self.checks if not c.ok]

    def indistinguishable(self):
        return [c for c in self.checks if c.indistinguishable]

    def summary(self) -> str:
        bad = self.failures()
        return (
            f"{len(self.checks) - len(bad)}/{len(self.checks)} ordering checks passed"
            + ("" if not bad else f"; first failure: {bad[0].name}@{bad[0].level}")
        )


def verify_ordering(points: LevelPoints, *, gap_tol=None) -> OrderingReport:
    """Check the full metric ladder of the marked points.

    Per level k the magnitudes interleave as

        |z_{k-1}| > |y_k| > |u_k| > |v_k| > |x_{k+1}| > |d_{k+1}| > |z_k|

    and these blocks concatenate over k into one strictly descending chain.
    On the image side the injectivity endpoints and the two pulled-back
    edges interleave as t_k < r_k < w_k < t_{k+1} < c_1.  Signs follow the
    period-four side pattern.  Pairs closer than `gap_tol` (default four
    times the working tolerance) are flagged as order-indistinguishable and
    fail the report: they call for more precision, not for trust.
    """
    with mp.workprec(points.bits):
        gap = mpf(str(gap_tol)) if gap_tol is not None else 4 * points.params.precision.tol()
        checks: list = []

        def add(name, level, ok, detail="", indist=False):
            checks.append(OrderingCheck(name, level, bool(ok), detail, indist))

        def pair(name, level, hi_val, lo_val):
            diff = abs(hi_val) - abs(lo_val)
            if abs(diff) <= gap:
                add(name, level, False, "order-indistinguishable at working precision", True)
            else:
                add(name, level, diff > 0, f"gap {mp.nstr(diff, 8)}")

        p = points
        # sides
        for n in sorted(p.sides):
            if n in p.closest_return:
                add("side-pattern", n, p.sides[n] == return_side(n))
        for fam, data, flip in (
            ("side-branch-edge", p.branch_edge, 1),
            ("side-central-edge", p.central_edge, 1),
            ("side-far-edge", p.branch_far_edge, 1),
            ("side-outer-return", p.outer_return, 1),
            ("side-precritical", p.precritical, -1),
        ):
            for n, val in sorted(data.items()):
                if n < 2:
                    continue
                want = flip * p.sides[n]
                add(fam, n, (1 if val > 0 else -1) == want)

        # magnitude ladder: concatenated per-level blocks
        def item(fam, n):
            data = getattr(p, fam)
            return abs(data[n]) if n in data else None

        seq = []
        for k in range(1, p.edge_depth + 1):
            for fam, n in (
                ("precritical", k - 1),
                ("outer_return", k),
                ("branch_edge", k),
                ("central_edge", k),
                ("branch_far_edge", k + 1),
                ("closest_return", k + 1),
                ("precritical", k),
            ):
                if n == 2 and fam in ("central_edge", "branch_far_edge"):
                    # base-level degeneracies: the central domain shares its
                    # edge with the off-center one, whose far edge in turn
                    # sits on the fixed-point window corner
                    continue
                valm = item(fam, n)
                if valm is None:
                    continue
                tag = (fam, n)
                if seq and seq[-1][0] == tag:
                    continue
                seq.append((tag, valm))
        for (tag_a, a), (tag_b, b) in zip(seq, seq[1:]):
            pair(f"ladder {tag_a[0]}[{tag_a[1]}] > {tag_b[0]}[{tag_b[1]}]", tag_a[1], a, b)

        # closest returns shrink strictly
        for n in range(1, p.edge_depth + 1):
            if n in p.closest_return and n - 1 in p.closest_return:
                pair("return-shrink", n, p.closest_return[n - 1], p.closest_return[n])

        # base window: the first return past the fixed-point level lands
        # between 0 and the mirrored fixed point
        d2 = p.closest_return[2]
        add("base-window", 2, (d2 > 0) and (abs(d2) < abs(p.fixed_point)))

        # base degeneracies hold exactly (up to solve residuals)
        res_scale = 1000 * max(p.residuals.values()) + p.params.precision.tol()
        add("base-shared-edge", 2, abs(abs(p.central_edge[2]) - abs(p.branch_edge[2])) <= res_scale)
        add("base-far-edge", 2, abs(abs(p.branch_far_edge[2]) - abs(p.branch_edge[1])) <= res_scale)

        # window nesting (strict from level 3 on; the base shares an edge)
        for n in range(3, p.depth):
            inner = max(abs(p.branch_far_edge[n + 1]), abs(p.central_edge[n + 1]))
            here = abs(p.central_edge[n])
            outer_w = abs(p.branch_edge[n])
            ok = inner < here < outer_w
            add("window-nesting", n, ok)

        # image side: t_n < r_n < t_{n+1} < w_n < c1.  (Drawn orderings of
        # these points sometimes place w_n outside the next injectivity
        # interval; the certified geometry has it inside, and the branch
        # certificate for f^{S_{n+1}-1} on [w_n, c1] confirms it.)
        c1 = p.params.param()
        img = sorted(p.img_edge_pull)
        for n in img:
            t = p.img_mono_end.get(n)
            r = p.img_prev_edge_pull[n]
            w = p.img_edge_pull[n]
            if t is not None:
                add("img-order t<r", n, r - t > gap, f"gap {mp.nstr(r - t, 8)}")
            add("img-order r<w", n, w - r > gap, f"gap {mp.nstr(w - r, 8)}")
            nxt = p.img_mono_end.get(n + 1)
            if nxt is not None:
                add("img-order r<t'", n, nxt - r > gap, f"gap {mp.nstr(nxt - r, 8)}")
                add("img-order t'<w", n, w - nxt > gap, f"gap {mp.nstr(w - nxt, 8)}")
            add("img-order w<c1", n, c1 - w > gap)

        ok = all(c.ok for c in checks)
        return OrderingReport(ok=ok, checks=checks, gap_tol=gap)


# --------------------------------------------------------------------------
# independent identities (cross-compositions not used as solve targets)


@dataclass
class IdentityReport:
    ok: bool
    checks: list  # (name, level, residual) with residual as mpf
    tol: mpf

    def max_residual(self):
        return max((r for _, _, r in self.checks), default=mpf(0))


def verify_identities(points: LevelPoints, *, tol=None, passage_sample=()) -> IdentityReport:
    """Re-derive the marked points through independent compositions.

    * two applications of the off-center branch send u_n to u_{n-2};
    * the time-S_{n-1} map sends |z_n| to a point of magnitude |z_{n-2}|;
    * the injectivity endpoint maps, after S_n - 1 steps, onto the closest
      return four levels up, and its passage order is S_n - 1 - S_{n-4};
    * iterating a branch edge down through every level lands on the fixed
      point or its mirror;
    * optionally (`passage_sample` levels), the right endpoint of the
      injectivity interval is re-found by a first-passage scan and compared
      against the image of the nearest precritical point.
    """
    p = points
    params = p.params
    bits = p.bits
    S = fibonacci_times(p.edge_depth + 3)
    with mp.workprec(bits):
        tol = mpf(str(tol)) if tol is not None else 1000 * params.precision.tol()
        out: list = []

        for n in range(2, p.edge_depth + 1):
            if n in p.branch_edge and n - 2 in p.branch_edge:
                val = apply_iterate(params, p.branch_edge[n], S[n], bits)
                out.append(("edge-two-step", n, abs(val - p.branch_edge[n - 2])))
            if n in p.precritical and n - 2 in p.precritical:
                val = apply_iterate(params, abs(p.precritical[n]), S[n - 1], bits)
                out.append(
                    ("precritical-two-step", n, abs(abs(val) - abs(p.precritical[n - 2])))
                )

        for n, t in sorted(p.img_mono_end.items()):
            expect = S[n] - 1 - (S[n - 4] if n >= 4 else 1)
            order_ok = p.passage_orders.get(n) == expect
            out.append(("passage-order", n, mpf(0) if order_ok else mpf(1)))
            if n >= 4:
                val = apply_iterate(params, t, S[n] - 1, bits)
                out.append(("passage-image", n, abs(val - p.closest_return[n - 4])))

        q = p.fixed_point
        for n in {3, max(3, p.depth // 2), p.depth}:
            if n in p.branch_edge:
                val = apply_iterate(params, p.branch_edge[n], S[n + 1] - 2, bits)
                out.append(("edge-hits-fixed-point", n, min(abs(val - q), abs(val + q))))

        for n in passage_sample:
            if n - 1 not in p.precritical:
                continue
            zf = p.image_of(p.precritical[n - 1])
            zf2 = p.image_of(p.precritical[n - 2])
            c1 = params.param()
            pas = first_passage(params, S[n] - 2, side=1, outer=zf2 + (zf2 - c1) / 1024, bits=bits)
            if not pas.proper:
                out.append(("right-end-passage", n, mpf(1)))
                continue
            out.append(("right-end-passage", n, abs(pas.x - zf)))
            order_ok = pas.order == S[n - 1] - 1
            out.append(("right-end-order", n, mpf(0) if order_ok else mpf(1)))

        ok = all(r <= tol for _, _, r in out)
        return IdentityReport(ok=ok, checks=out, tol=tol)


# --------------------------------------------------------------------------
# contraction ratios between levels


@dataclass
class BoundsReport:
    degree: int
    n_range: tuple
    image_two_level: dict  # n -> (|d_{n-2}|/|d_n|)^l, image-side two-level expansion
    image_four_level: dict  # n -> (|d_{n-4}|/|d_n|)^l
    plain_two_level: dict  # n -> |d_{n-2}|/|d_n| on the critical side
    consecutive: dict  # n -> three consecutive image-side nesting ratios
    edge_pull_ratio: dict  # n -> |u_{n-1}^f - c1| / |w_n^f - c1|
    double_ratio: dict  # n -> two-level ratio drift (tends to 1 for large degree)
    edge_ratio: dict  # n -> |u_n|/|u_{n+1}|
    scale_drift: dict  # n -> degree * (1 - |d_{n+4}|/|d_{n+2}|)
    lambda_measured: float
    mu_measured: float

    def min_image_two_level(self) -> float:
        return min(self.image_two_level.values())

    def min_image_four_level(self) -> float:
        return min(self.image_four_level.values())

    def min_edge_pull_ratio(self) -> float:
        return min(self.edge_pull_ratio.values()) if self.edge_pull_ratio else float("nan")

    def as_dict(self) -> dict:
        return {
            "degree": self.degree,
            "n_range": list(self.n_range),
            "image_two_level": self.image_two_level,
            "image_four_level": self.image_four_level,
            "plain_two_level": self.plain_two_level,
            "consecutive": {str(k): v for k, v in self.consecutive.items()},
            "edge_pull_ratio": self.edge_pull_ratio,
            "double_ratio": self.double_ratio,
            "edge_ratio": self.edge_ratio,
            "scale_drift": self.scale_drift,
            "lambda_measured": self.lambda_measured,
            "mu_measured": self.mu_measured,
        }


def real_bounds_report(points: LevelPoints, *, n_lo: int = 4, n_hi: int | None = None) -> BoundsReport:
    """Measure the level-to-level expansion and nesting ratios.

    All "image" quantities are distances to the critical value: for a point
    p with image p^f = |p|^degree + c_1 one has |p^f - c_1| = |p|^degree, so
    image-side ratios are the critical-side ratios raised to the degree.
    The headline numbers: the image-side two-level expansion stays >= 3.85
    and the four-level one >= 14; the nested image-interval ratios stay in a
    fixed (lambda, mu) inside (0, 1); the pull-back of the previous branch
    edge keeps at least 4/3 of the distance to c_1.
    """
    if points.depth < 8:
        raise ValueError("bounds report needs depth >= 8")
    p = points
    l = p.params.degree
    if n_hi is None:
        n_hi = p.edge_depth
    with mp.workprec(p.bits):
        c1 = p.params.param()
        d = {n: abs(v) for n, v in p.closest_return.items()}
        u = {n: abs(v) for n, v in p.branch_edge.items()}
        z = {n: abs(v) for n, v in p.precritical.items()}

        img2, img4, plain2, dbl, drift = {}, {}, {}, {}, {}
        consec, pull, edge_ratio = {}, {}, {}
        for n in range(n_lo, n_hi + 1):
            if n in d and n - 2 in d:
                img2[n] = float((d[n - 2] / d[n]) ** l)
                plain2[n] = float(d[n - 2] / d[n])
            if n in d and n - 4 in d:
                img4[n] = float((d[n - 4] / d[n]) ** l)
                dbl[n] = float((d[n] / d[n - 2]) / (d[n - 2] / d[n - 4]))
            if n + 4 in d:
                drift[n] = float(l * (1 - d[n + 4] / d[n + 2]))
            if n + 1 in d and n in u and n - 1 in z and n in d:
                r1 = float((d[n + 1] / u[n]) ** l)
                r2 = float((u[n] / z[n - 1]) ** l)
                r3 = float((z[n - 1] / d[n]) ** l)
                consec[n] = (r1, r2, r3)
            if n in p.img_edge_pull and n - 1 in u:
                pull[n] = float(u[n - 1] ** l / (c1 - p.img_edge_pull[n]))
            if n in u and n + 1 in u:
                edge_ratio[n] = float(u[n] / u[n + 1])

        flat = [r for triple in consec.values() for r in triple]
        lam = min(flat) if flat else float("nan")
        mu = max(flat) if flat else float("nan")
        return BoundsReport(
            degree=l,
            n_range=(n_lo, n_hi),
            image_two_level=img2,
            image_four_level=img4,
            plain_two_level=plain2,
            consecutive=consec,
            edge_pull_ratio=pull,
            double_ratio=dbl,
            edge_ratio=edge_ratio,
            scale_drift=drift,
            lambda_measured=lam,
            mu_measured=mu,
        )


# --------------------------------------------------------------------------
# interval covers of the critical omega-limit set


@dataclass
class CoveringFn:
    n: int
    intervals: list  # sorted disjoint (lo, hi) pairs
    disjoint: bool
    min_gap: mpf
    bits: int
    window: mpf = None  # radius of the level-n return window

    def __len__(self):
        return len(self.intervals)

    def locate(self, x) -> int | None:
        """Index of the component containing x, or None."""
        lo_i, hi_i = 0, len(self.intervals) - 1
        while lo_i <= hi_i:
            mid = (lo_i + hi_i) // 2
            a, b = self.intervals[mid]
            if x < a:
                hi_i = mid - 1
            elif x > b:
                lo_i = mid + 1
            else:
                return mid
        return None

    def contains(self, x) -> bool:
        return self.locate(x) is not None


def covering_Fn(params: MapParams, points: LevelPoints, n: int, *, bits: int | None = None) -> CoveringFn:
    """The canonical 2^n-component interval cover of the critical limit set.

    Start from the two return domains of level n.  Repeatedly adjoin the
    pull-back of the current collection through the off-center branch one
    level up (a certified monotone solve per endpoint), then finish with the
    preimage under f itself restricted to the interval left of the fixed
    point that maps onto the base window (that preimage is in closed form:
    x = -(y - c_1)^(1/degree)).
    """
    if not (3 <= n <= points.depth):
        raise ValueError(f"need 3 <= n <= {points.depth}")
    bits = bits or points.bits
    p = points
    S = fibonacci_times(n + 1)
    with mp.workprec(bits):
        c1 = params.param()
        l = params.degree

        def norm(a, b):
            return (a, b) if a <= b else (b, a)

        current = [norm(-abs(p.central_edge[n]), abs(p.central_edge[n])),
                   norm(p.branch_edge[n], p.branch_far_edge[n])]
        for i in range(2, n):
            lev = n - i + 1  # pull back through the off-center branch of this level
            dom = norm(p.branch_edge[lev], p.branch_far_edge[lev])
            T = S[lev - 1]
            cert = verify_branch(params, T, dom, bits, touch_tol=params.precision.tol() * mpf("1e12"))
            if not cert.ok:
                raise DynamicsError(f"covering pull-back branch at level {lev} not monotone")
            pulled = []
            for (a, b) in current:
                ra = solve_on_branch(params, T, dom, a, certificate=cert, bits=bits)
                rb = solve_on_branch(params, T, dom, b, certificate=cert, bits=bits)
                pulled.append(norm(ra.x, rb.x))
            current = current + pulled

        # final doubling: preimage under f on the negative side of the
        # fixed-point window
        exp = mpf(1) / l
        pulled = []
        for (a, b) in current:
            xa = -((a - c1) ** exp)
            xb = -((b - c1) ** exp)
            pulled.append(norm(xa, xb))
        current = current + pulled

        current.sort()
        disjoint = True
        min_gap = mpf("inf")
        for (a1, b1), (a2, b2) in zip(current, current[1:]):
            gapv = a2 - b1
            if gapv <= 0:
                disjoint = False
            if gapv < min_gap:
                min_gap = gapv
        return CoveringFn(n=n, intervals=current, disjoint=disjoint, min_gap=min_gap,
                          bits=bits, window=abs(p.branch_edge[n - 1]))


def covering_orbit_check(params: MapParams, cover: CoveringFn, *, k_max: int | None = None, bits: int | None = None) -> list:
    """Indices k <= k_max where f^k(0) re-enters the level window but
    escapes the cover (expected: none).

    The cover lives inside the base window plus one monotone preimage of it,
    so orbit points on an excursion outside the level-n window are skipped;
    the claim being checked is that every return to the window is trapped.
    """
    bits = bits or cover.bits
    S = fibonacci_times(cover.n + 4)
    k_max = k_max or S[cover.n + 4]
    with mp.workprec(bits):
        c1 = params.param()
        l = params.degree
        misses = []
        x = mpf(0)
        for k in range(1, k_max + 1):
            x = x ** l + c1
            if abs(x) < cover.window and not cover.contains(x):
                misses.append(k)
        return misses


@dataclass
class GeometryStats:
    generations: list  # n of each consecutive pair (parent cover)
    child_ratio_min: list  # per pair: min |child|/|parent|
    child_ratio_max: list
    gap_ratio_min: list  # per pair: min (gap between siblings)/|parent|
    orphans: int  # children not inside any parent
    bad_parents: int  # parents without exactly two children
    vacuous: bool

    def ok(self) -> bool:
        return self.orphans == 0 and self.bad_parents == 0

    def floor(self) -> float:
        return min(self.child_ratio_min) if self.child_ratio_min else float("nan")


def bounded_geometry_stats(covers: list) -> GeometryStats:
    """Scaling of consecutive covers: each component of one generation holds
    exactly two of the next; measure the children/parent length ratios and
    the relative gap between siblings.  Fewer than two covers is vacuous."""
    if len(covers) < 2:
        return GeometryStats([], [], [], [], 0, 0, vacuous=True)
    gens, rmin, rmax, gmin = [], [], [], []
    orphans = 0
    bad_parents = 0
    for parent, child in zip(covers, covers[1:]):
        ratios = []
        gaps = []
        buckets = {i: [] for i in range(len(parent.intervals))}
        for (a, b) in child.intervals:
            i = parent.locate(a)
            j = parent.locate(b)
            if i is None or i != j:
                orphans += 1
                continue
            buckets[i].append((a, b))
        for i, kids in buckets.items():
            pa, pb = parent.intervals[i]
            plen = pb - pa
            if len(kids) != 2:
                bad_parents += 1
                continue
            (a1, b1), (a2, b2) = sorted(kids)
            ratios.append(float((b1 - a1) / plen))
            ratios.append(float((b2 - a2) / plen))
            gaps.append(float((a2 - b1) / plen))
        gens.append(parent.n)
        rmin.append(min(ratios) if ratios else float("nan"))
        rmax.append(max(ratios) if ratios else float("nan"))
        gmin.append(min(gaps) if gaps else float("nan"))
    return GeometryStats(gens, rmin, rmax, gmin, orphans, bad_parents, vacuous=False)
