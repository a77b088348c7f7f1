"""Critical zone, critical turning points and arc-length parametrized paths.

All coordinates are in the zone frame: the ego's turn-start corner is the
origin, the ego approaches along +y and leaves the zone along -x on the
target-road centerline ``y = L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

Point = tuple[float, float]
Pose = tuple[float, float, float]

INTENTIONS = ("left", "straight", "right")


class GeometryError(ValueError):
    """Raised for invalid intersection geometry or path queries."""


@dataclass(frozen=True)
class IntersectionSpec:
    """Raw intersection description.

    ``corner_points`` are the five reference points A-E: A is the turn-start
    corner (ego stop line on the ego lane centerline), B the other end of the
    stop line across the zone, C the goal where the target centerline leaves
    the zone, D the target centerline above the turn-start corner, and E the
    zone centre.
    """

    stop_line_ego: float
    center_start: float
    center_target: float
    corner_points: tuple[Point, Point, Point, Point, Point]

    @classmethod
    def square(cls, side: float, origin: Point = (0.0, 0.0)) -> "IntersectionSpec":
        ox, oy = origin
        pts = (
            (ox, oy),
            (ox - side, oy),
            (ox - side, oy + side),
            (ox, oy + side),
            (ox - side / 2, oy + side / 2),
        )
        return cls(stop_line_ego=oy, center_start=ox, center_target=oy + side, corner_points=pts)


@dataclass(frozen=True)
class CriticalZone:
    origin: Point
    side_length: float

    def contains(self, x: float, y: float, tol: float = 1e-6) -> bool:
        L = self.side_length
        return -L - tol <= x <= tol and -tol <= y <= L + tol


@dataclass(frozen=True)
class CtpSet:
    ratios: tuple[float, ...]
    distances: tuple[float, ...]
    radii: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.ratios)


@dataclass(frozen=True)
class Segment:
    """Constant-curvature piece starting at arc length ``s0``."""

    s0: float
    length: float
    x0: float
    y0: float
    heading0: float
    curvature: float

    def pose(self, u: float) -> Pose:
        h0 = self.heading0
        k = self.curvature
        if k == 0.0:
            return (self.x0 + u * math.cos(h0), self.y0 + u * math.sin(h0), h0)
        h = h0 + k * u
        x = self.x0 + (math.sin(h) - math.sin(h0)) / k
        y = self.y0 - (math.cos(h) - math.cos(h0)) / k
        return (x, y, h)


@dataclass(frozen=True)
class CandidatePath:
    """Piecewise straight/arc path parametrized by arc length.

    ``index`` is the CTP number for ego candidate paths (0 for paths that do
    not belong to a CTP set, e.g. the geometry-only baseline); ``name`` tags
    oncoming routes with their intention.
    """

    index: int
    segments: tuple[Segment, ...]
    name: str = ""

    @property
    def total_length(self) -> float:
        last = self.segments[-1]
        return last.s0 + last.length

    @property
    def goal_s(self) -> float:
        return self.total_length

    def segment_at(self, s: float) -> Segment:
        for seg in self.segments:
            if s <= seg.s0 + seg.length:
                return seg
        return self.segments[-1]

    def curvature_at(self, s: float) -> float:
        return self.segment_at(s).curvature


def build_path(start: Pose, pieces: Iterable[tuple[float, float]], index: int = 0, name: str = "") -> CandidatePath:
    """Chain ``(length, curvature)`` pieces from a start pose.

    Zero-length pieces are dropped.
    """
    x, y, h = start
    s = 0.0
    segs = []
    for length, k in pieces:
        if length < 0:
            raise GeometryError(f"negative segment length {length}")
        if length == 0:
            continue
        seg = Segment(s, length, x, y, h, k)
        segs.append(seg)
        x, y, h = seg.pose(length)
        s += length
    if not segs:
        raise GeometryError("path has no segments")
    return CandidatePath(index=index, segments=tuple(segs), name=name)


def extract_critical_zone(spec: IntersectionSpec, tol: float = 1e-9) -> CriticalZone:
    pts = spec.corner_points
    if len(pts) != 5:
        raise GeometryError("expected five corner points A-E")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    width = max(xs) - min(xs)
    height = max(ys) - min(ys)
    if width <= tol or height <= tol:
        raise GeometryError("degenerate critical zone: corner points are collinear")
    if abs(width - height) > tol * max(1.0, width):
        raise GeometryError(f"degenerate critical zone: corner set is not square ({width} x {height})")
    a = pts[0]
    if abs(a[1] - spec.stop_line_ego) > tol or abs(min(ys) - spec.stop_line_ego) > tol:
        raise GeometryError("degenerate critical zone: stop line is not on the zone boundary")
    if abs(a[0] - spec.center_start) > tol or abs(max(xs) - spec.center_start) > tol:
        raise GeometryError("degenerate critical zone: turn-start corner is off the start-road centerline")
    side = spec.center_target - spec.stop_line_ego
    if side <= 0:
        raise GeometryError("degenerate critical zone: L <= 0")
    if abs(side - height) > tol * max(1.0, side):
        raise GeometryError("degenerate critical zone: target centerline does not bound the zone")
    return CriticalZone(origin=(a[0], a[1]), side_length=side)


def compute_ctps(zone: CriticalZone, ratios: Sequence[float]) -> CtpSet:
    ratios = tuple(float(c) for c in ratios)
    if not ratios:
        raise GeometryError("at least one critical ratio is required")
    for c in ratios:
        if not 0.0 < c < 1.0:
            raise GeometryError(f"critical ratio {c} outside (0, 1)")
    for a, b in zip(ratios, ratios[1:]):
        if not b > a:
            raise GeometryError(f"critical ratios must be strictly increasing, got {list(ratios)}")
    L = zone.side_length
    return CtpSet(
        ratios=ratios,
        distances=tuple(c * L for c in ratios),
        radii=tuple((1.0 - c) * L for c in ratios),
    )


def generate_candidate_paths(zone: CriticalZone, ctps: CtpSet) -> list[CandidatePath]:
    """Straight to the CTP, left quarter circle, straight to ``(-L, L)``."""
    L = zone.side_length
    paths = []
    for i, (l, r) in enumerate(zip(ctps.distances, ctps.radii), start=1):
        # final straight has length c_i * L == l_i
        pieces = [(l, 0.0), (0.5 * math.pi * r, 1.0 / r), (L - r, 0.0)]
        paths.append(build_path((0.0, 0.0, 0.5 * math.pi), pieces, index=i))
    return paths


def baseline_path(zone: CriticalZone) -> CandidatePath:
    """Single quarter circle of radius L from the turn-start corner to the goal."""
    L = zone.side_length
    return build_path((0.0, 0.0, 0.5 * math.pi), [(0.5 * math.pi * L, 1.0 / L)], index=1, name="baseline")


def frenet_to_cartesian(path: CandidatePath, s: float, mode: str = "error") -> Pose:
    """Pose at arc length ``s``.

    ``mode`` handles ``s`` outside ``[0, total_length]``: ``"error"`` raises,
    ``"clamp"`` pins to the nearest end, ``"extend"`` continues along the
    tangent of the nearest end (the approach lane behind the stop line and the
    target lane beyond the goal).
    """
    total = path.total_length
    if s < 0.0 or s > total:
        if mode == "error":
            raise GeometryError(f"s={s} outside [0, {total}]")
        if mode == "clamp":
            s = min(max(s, 0.0), total)
        elif mode == "extend":
            if s < 0.0:
                first = path.segments[0]
                h = first.heading0
                return (first.x0 + s * math.cos(h), first.y0 + s * math.sin(h), h)
            x, y, h = path.segments[-1].pose(path.segments[-1].length)
            d = s - total
            return (x + d * math.cos(h), y + d * math.sin(h), h)
        else:
            raise GeometryError(f"unknown out-of-range mode {mode!r}")
    seg = path.segment_at(s)
    return seg.pose(s - seg.s0)


def sample_path(path: CandidatePath, ds: float) -> list[tuple[float, float, float, float]]:
    """``(s, x, y, heading)`` samples every ``ds`` metres, endpoint included."""
    if ds <= 0:
        raise GeometryError("ds must be positive")
    total = path.total_length
    n = int(math.floor(total / ds + 1e-9))
    out = [(k * ds, *frenet_to_cartesian(path, k * ds)) for k in range(n + 1)]
    if out[-1][0] < total - 1e-9:
        out.append((total, *frenet_to_cartesian(path, total)))
    return out


@dataclass(frozen=True)
class OncomingLayout:
    """Placement of the opposing approach in the zone frame.

    The opposing lane runs at ``x = -lane_offset`` towards -y; routes start
    ``approach_length`` metres before the zone entrance ``y = L``. Both turns
    are quarter circles of ``turn_radius`` that peel off the straight route
    at the same point and end in the cross lane ``y = L + lane_offset``: the
    right turn heads -x, the left turn is its mirror image heading +x. Only
    the straight route passes through the zone.
    """

    lane_offset: float = 3.5
    approach_length: float = 40.0
    turn_radius: float | None = None
    exit_length: float = 60.0


def oncoming_route(zone: CriticalZone, intention: str, layout: OncomingLayout = OncomingLayout()) -> CandidatePath:
    if intention not in INTENTIONS:
        raise GeometryError(f"unknown intention {intention!r}")
    L = zone.side_length
    r = layout.turn_radius if layout.turn_radius is not None else 0.5 * L
    if r <= 0:
        raise GeometryError("oncoming turn radius must be positive")
    start = (-layout.lane_offset, L + layout.approach_length, -0.5 * math.pi)
    exit_len = layout.exit_length
    if intention == "straight":
        return build_path(start, [(layout.approach_length + L + exit_len, 0.0)], name=intention)
    prefix = layout.approach_length - layout.lane_offset - r
    if prefix < 0:
        raise GeometryError("approach too short for the oncoming turn radius")
    k = 1.0 / r if intention == "left" else -1.0 / r
    pieces = [(prefix, 0.0), (0.5 * math.pi * r, k), (exit_len, 0.0)]
    return build_path(start, pieces, name=intention)


def divergence_s(routes: Sequence[CandidatePath]) -> float:
    """Arc length of the common straight prefix shared by all routes."""
    return min(r.segments[0].length for r in routes)
