"""Dubins-path planning in the horizontal plane with linear depth interpolation.

Poses are (n, e, psi) with psi measured from north toward east. A "left" turn
increases psi. Words are built geometrically from turning-circle tangents and
every candidate is validated by rolling its segments forward, so malformed
constructions are dropped rather than returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


def mod2pi(x: float) -> float:
    return x - TWO_PI * math.floor(x / TWO_PI)


def bearing(p, q) -> float:
    return math.atan2(q[1] - p[1], q[0] - p[0])


@dataclass(frozen=True)
class Segment:
    """One straight or constant-curvature piece, parameterized by arclength."""

    start: tuple          # (n, e, psi)
    length: float
    curvature: float      # 0 for straight, +1/r left, -1/r right

    def point_at(self, s: float) -> tuple:
        n0, e0, psi0 = self.start
        if self.curvature == 0.0:
            return n0 + s * math.cos(psi0), e0 + s * math.sin(psi0)
        k = self.curvature
        return (
            n0 + (math.sin(psi0 + k * s) - math.sin(psi0)) / k,
            e0 - (math.cos(psi0 + k * s) - math.cos(psi0)) / k,
        )

    def heading_at(self, s: float) -> float:
        return self.start[2] + self.curvature * s

    def end_pose(self) -> tuple:
        n, e = self.point_at(self.length)
        return n, e, self.heading_at(self.length)

    def center(self) -> tuple:
        """Turning-circle center (arcs only)."""
        n0, e0, psi0 = self.start
        k = self.curvature
        return n0 - math.sin(psi0) / k, e0 + math.cos(psi0) / k


def _left_center(pose, r):
    n, e, psi = pose
    return (n - r * math.sin(psi), e + r * math.cos(psi))


def _right_center(pose, r):
    n, e, psi = pose
    return (n + r * math.sin(psi), e - r * math.cos(psi))


def _heading_on_circle(point, center, left: bool) -> float:
    dn, de = point[0] - center[0], point[1] - center[1]
    if left:
        return math.atan2(dn, -de)
    return math.atan2(-dn, de)


def _word_csc(start, goal, r, first_left: bool, last_left: bool):
    c0 = _left_center(start, r) if first_left else _right_center(start, r)
    c1 = _left_center(goal, r) if last_left else _right_center(goal, r)
    vn, ve = c1[0] - c0[0], c1[1] - c0[1]
    dist = math.hypot(vn, ve)
    phi = math.atan2(ve, vn)
    if first_left == last_left:
        # outer tangent parallel to the center line
        theta_s = phi
        p = dist
    else:
        # inner tangent crossing between the circles
        if dist < 2.0 * r:
            return None
        p = math.sqrt(max(dist * dist - 4.0 * r * r, 0.0))
        theta_s = phi + math.atan2(2.0 * r, p) if first_left else phi - math.atan2(2.0 * r, p)
    t = mod2pi(theta_s - start[2]) if first_left else mod2pi(start[2] - theta_s)
    q = mod2pi(goal[2] - theta_s) if last_left else mod2pi(theta_s - goal[2])
    k1 = 1.0 / r if first_left else -1.0 / r
    k2 = 1.0 / r if last_left else -1.0 / r
    return [(t * r, k1), (p, 0.0), (q * r, k2)]


def _word_ccc(start, goal, r, outer_left: bool):
    """CCC words (LRL / RLR); both middle-circle placements are candidates."""
    c0 = _left_center(start, r) if outer_left else _right_center(start, r)
    c1 = _left_center(goal, r) if outer_left else _right_center(goal, r)
    vn, ve = c1[0] - c0[0], c1[1] - c0[1]
    dist = math.hypot(vn, ve)
    if dist > 4.0 * r or dist < 1e-12:
        return []
    phi = math.atan2(ve, vn)
    gamma = math.acos(dist / (4.0 * r))
    words = []
    for sign in (+1.0, -1.0):
        cm = (
            c0[0] + 2.0 * r * math.cos(phi + sign * gamma),
            c0[1] + 2.0 * r * math.sin(phi + sign * gamma),
        )
        t1 = ((c0[0] + cm[0]) / 2.0, (c0[1] + cm[1]) / 2.0)
        t2 = ((cm[0] + c1[0]) / 2.0, (cm[1] + c1[1]) / 2.0)
        h1 = _heading_on_circle(t1, c0, outer_left)
        h2 = _heading_on_circle(t2, cm, not outer_left)
        if outer_left:
            t = mod2pi(h1 - start[2])
            p = mod2pi(h1 - h2)  # middle arc turns right
            q = mod2pi(goal[2] - h2)
        else:
            t = mod2pi(start[2] - h1)
            p = mod2pi(h2 - h1)  # middle arc turns left
            q = mod2pi(h2 - goal[2])
        ko = 1.0 / r if outer_left else -1.0 / r
        km = -ko
        words.append([(t * r, ko), (p * r, km), (q * r, ko)])
    return words


def _assemble(start, pieces) -> list[Segment]:
    segs = []
    pose = start
    for length, curvature in pieces:
        seg = Segment(pose, length, curvature)
        segs.append(seg)
        pose = seg.end_pose()
    return segs


def _endpoint_error(segs: list[Segment], goal) -> float:
    n, e, psi = segs[-1].end_pose() if segs else (None, None, None)
    dpos = math.hypot(n - goal[0], e - goal[1])
    dpsi = abs(mod2pi(psi - goal[2] + math.pi) - math.pi)
    return dpos + dpsi


def dubins_words(start, goal, radius: float) -> dict:
    """All feasible Dubins words as validated segment lists, keyed by name."""
    if radius <= 0:
        raise ConfigError("radius must be positive")
    candidates = {
        "LSL": _word_csc(start, goal, radius, True, True),
        "RSR": _word_csc(start, goal, radius, False, False),
        "LSR": _word_csc(start, goal, radius, True, False),
        "RSL": _word_csc(start, goal, radius, False, True),
    }
    for name, variants in (("LRL", _word_ccc(start, goal, radius, True)),
                           ("RLR", _word_ccc(start, goal, radius, False))):
        best = None
        for pieces in variants:
            segs = _assemble(start, pieces)
            if _endpoint_error(segs, goal) < 1e-6 * (1.0 + radius):
                total = sum(p[0] for p in pieces)
                if best is None or total < best[0]:
                    best = (total, pieces)
        candidates[name] = best[1] if best else None

    out = {}
    for name, pieces in candidates.items():
        if pieces is None:
            continue
        segs = _assemble(start, pieces)
        if _endpoint_error(segs, goal) < 1e-6 * (1.0 + radius):
            out[name] = segs
    return out


def dubins_shortest(start, goal, radius: float) -> list[Segment]:
    """Minimum-length path among the six Dubins words.

    Near-coincident poses return a zero-length path.
    """
    dpos = math.hypot(goal[0] - start[0], goal[1] - start[1])
    dpsi = abs(mod2pi(goal[2] - start[2] + math.pi) - math.pi)
    if dpos < 1e-6 and dpsi < 1e-9:
        return []
    words = dubins_words(start, goal, radius)
    if not words:
        return []
    best = min(words.values(), key=lambda segs: sum(s.length for s in segs))
    # zero-length pieces carry no geometry
    return [s for s in best if s.length > 1e-12]


def path_length(segs: list[Segment]) -> float:
    return sum(s.length for s in segs)


class ReferencePath:
    """Chained Dubins legs with a piecewise-linear depth profile and a
    constant surge reference."""

    def __init__(self, segments, leg_breaks, depths, u_ref, r_plan):
        self.segments = segments
        self.seg_start = np.zeros(len(segments))
        s = 0.0
        for i, seg in enumerate(segments):
            self.seg_start[i] = s
            s += seg.length
        self.length = s
        self.leg_breaks = np.asarray(leg_breaks)   # arclength at each waypoint
        self.depths = np.asarray(depths)
        self.u_ref = u_ref
        self.r_plan = r_plan

    def _locate(self, s: float):
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.seg_start, s, side="right") - 1)
        i = max(0, min(i, len(self.segments) - 1))
        return i, s - self.seg_start[i]

    def point_at(self, s: float):
        i, ds = self._locate(s)
        return self.segments[i].point_at(ds)

    def heading_at(self, s: float) -> float:
        i, ds = self._locate(s)
        return self.segments[i].heading_at(ds)

    def depth_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        return float(np.interp(s, self.leg_breaks, self.depths))

    def depth_slope_at(self, s: float) -> float:
        """d(depth)/d(arclength) of the active leg."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.leg_breaks, s, side="right") - 1)
        i = max(0, min(i, len(self.leg_breaks) - 2))
        ds = self.leg_breaks[i + 1] - self.leg_breaks[i]
        if ds <= 0:
            return 0.0
        return float((self.depths[i + 1] - self.depths[i]) / ds)

    def goal(self):
        n, e = self.point_at(self.length)
        return np.array([n, e, self.depths[-1]])


def build_reference(waypoints, r_plan: float, u_ref: float, glide_max: float) -> ReferencePath:
    """Chain Dubins legs through the waypoints.

    Heading at each interior waypoint is the bearing to the next waypoint;
    depth interpolates linearly in arclength within each leg. Raises
    ConfigError naming the first leg whose glide-path angle exceeds the limit.
    """
    wps = [np.asarray(w, dtype=float) for w in waypoints]
    if len(wps) < 2:
        raise ConfigError("need at least two waypoints")
    if r_plan <= 0:
        raise ConfigError("r_plan must be positive")

    headings = []
    for i in range(len(wps) - 1):
        headings.append(bearing(wps[i], wps[i + 1]))
    headings.append(headings[-1])

    segments = []
    leg_breaks = [0.0]
    depths = [wps[0][2]]
    s = 0.0
    for i in range(len(wps) - 1):
        start = (wps[i][0], wps[i][1], headings[i])
        goal = (wps[i + 1][0], wps[i + 1][1], headings[i + 1])
        legs = dubins_shortest(start, goal, r_plan)
        leg_len = path_length(legs)
        dd = wps[i + 1][2] - wps[i][2]
        if leg_len < 1e-9:
            if abs(dd) > 1e-12:
                raise ConfigError(f"leg {i}: depth change over zero-length leg")
        elif abs(math.atan2(abs(dd), leg_len)) > glide_max + 1e-12:
            raise ConfigError(
                f"leg {i}: glide angle {math.degrees(math.atan2(abs(dd), leg_len)):.1f} deg "
                f"exceeds limit"
            )
        segments.extend(legs)
        s += leg_len
        leg_breaks.append(s)
        depths.append(wps[i + 1][2])
    return ReferencePath(segments, leg_breaks, depths, u_ref, r_plan)


class PathCursor:
    """Monotone projection onto the path within a forward-looking window.

    The window [s_prev, s_prev + 4 r_plan] prevents capture by distant path
    sections when the path folds back near itself; s* never decreases.
    """

    def __init__(self, path: ReferencePath, window_mult: float = 4.0):
        self.path = path
        self.s = 0.0
        self.window = window_mult * path.r_plan

    def project(self, position) -> tuple:
        """Return (s*, h_e, gamma_p) for a horizontal position (n, e)."""
        n, e = float(position[0]), float(position[1])
        s_lo = self.s
        s_hi = min(self.s + self.window, self.path.length)
        best = None
        for i, seg in enumerate(self.path.segments):
            seg_s0 = self.path.seg_start[i]
            seg_s1 = seg_s0 + seg.length
            if seg_s1 < s_lo or seg_s0 > s_hi:
                continue
            lo = max(s_lo, seg_s0) - seg_s0
            hi = min(s_hi, seg_s1) - seg_s0
            ds = self._nearest_on_segment(seg, n, e, lo, hi)
            pn, pe = seg.point_at(ds)
            d = math.hypot(n - pn, e - pe)
            s_cand = seg_s0 + ds
            if best is None or d < best[0] - 1e-12 or (abs(d - best[0]) <= 1e-12 and s_cand < best[1]):
                best = (d, s_cand)
        s_star = best[1] if best else s_hi
        self.s = max(self.s, s_star)
        gamma = self.path.heading_at(self.s)
        pn, pe = self.path.point_at(self.s)
        h_e = -math.sin(gamma) * (n - pn) + math.cos(gamma) * (e - pe)
        return self.s, h_e, gamma

    @staticmethod
    def _nearest_on_segment(seg: Segment, n, e, lo, hi) -> float:
        if hi <= lo:
            return lo
        if seg.curvature == 0.0:
            n0, e0, psi = seg.start
            t = (n - n0) * math.cos(psi) + (e - e0) * math.sin(psi)
            return min(max(t, lo), hi)
        cn, ce = seg.center()
        ang = math.atan2(e - ce, n - cn)
        # arc angle of the segment start point around the center
        n0, e0 = seg.point_at(0.0)
        ang0 = math.atan2(e0 - ce, n0 - cn)
        sweep = mod2pi((ang - ang0) * math.copysign(1.0, seg.curvature))
        s_cand = sweep / abs(seg.curvature)
        if lo <= s_cand <= hi:
            return s_cand
        # outside the angular span: closer endpoint wins
        dlo = math.hypot(*(np.array(seg.point_at(lo)) - (n, e)))
        dhi = math.hypot(*(np.array(seg.point_at(hi)) - (n, e)))
        return lo if dlo <= dhi else hi
