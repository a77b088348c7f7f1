"""CTP validation against trajectory data.

Left-turn trajectories are scanned for the onset of sharp steering, the onset
points are clustered with k-means, and the cluster spacing along the approach
axis is tested for an equally spaced (isometric) pattern.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import CriticalZone, IntersectionSpec, compute_ctps, extract_critical_zone, frenet_to_cartesian, generate_candidate_paths

HEADER = ("id", "t", "x", "y", "speed", "heading")


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray
    heading: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class TurnPoint:
    vehicle_id: str
    x: float
    y: float
    onset_time: float
    arc_distance: float


@dataclass(frozen=True)
class ClusterReport:
    k: int
    centroids: tuple[tuple[float, float], ...]
    counts: tuple[int, ...]
    projected: tuple[float, ...]
    gaps: tuple[float, ...]
    deviations: tuple[float, ...]
    isometry_score: float | None
    inertia: float
    iterations: int
    feature_space: str = "2d-position"
    projection_axis: str = "approach (+y)"

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "centroids": [list(c) for c in self.centroids],
            "counts": list(self.counts),
            "projected_distances_m": list(self.projected),
            "gaps_m": list(self.gaps),
            "gap_deviations_m": list(self.deviations),
            "isometry_score": self.isometry_score,
            "inertia": self.inertia,
            "iterations": self.iterations,
            "feature_space": self.feature_space,
            "projection_axis": self.projection_axis,
        }


def ingest_trajectories(path: str | Path) -> list[TrajectoryRecord]:
    """Parse a ``id,t,x,y,speed,heading`` CSV (m, s, rad).

    A heading column left empty for every row of a vehicle is derived from
    positions by finite differences.
    """
    groups: dict[str, list[tuple[int, list[str]]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise ValidationError(f"malformed header {header!r}; expected {','.join(HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise ValidationError(f"row {row_no}: expected {len(HEADER)} fields, got {len(row)}")
            groups.setdefault(row[0].strip(), []).append((row_no, row))
    records = []
    for vid, rows in groups.items():
        vals = []
        derive = all(r[5].strip() == "" for _, r in rows)
        for row_no, row in rows:
            try:
                nums = [float(v) for v in row[1:5]] + [math.nan if derive else float(row[5])]
            except ValueError as exc:
                raise ValidationError(f"row {row_no}: {exc}") from None
            if not all(math.isfinite(v) for v in (nums[:4] if derive else nums)):
                raise ValidationError(f"row {row_no}: non-finite value")
            if vals and nums[0] <= vals[-1][0]:
                raise ValidationError(f"id {vid!r}, row {row_no}: timestamps must be strictly increasing")
            vals.append(nums)
        arr = np.array(vals, dtype=float)
        heading = arr[:, 4]
        if derive:
            if len(arr) < 2:
                raise ValidationError(f"id {vid!r}: cannot derive heading from a single sample")
            heading = np.arctan2(np.gradient(arr[:, 2]), np.gradient(arr[:, 1]))
        records.append(TrajectoryRecord(vid, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], heading))
    return records


def write_trajectories(records: Sequence[TrajectoryRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for rec in records:
            for row in zip(rec.t, rec.x, rec.y, rec.speed, rec.heading):
                w.writerow([rec.vehicle_id, *(repr(float(v)) for v in row)])


def smoothed_curvature(rec: TrajectoryRecord, window: int) -> np.ndarray:
    """Heading change per arc length over a centred window (NaN near the ends)."""
    half = max(window // 2, 1)
    steps = np.hypot(np.diff(rec.x), np.diff(rec.y))
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    heading = np.unwrap(rec.heading)
    n = len(rec)
    kappa = np.full(n, np.nan)
    lo, hi = np.arange(0, n - 2 * half), np.arange(2 * half, n)
    ds = arc[hi] - arc[lo]
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa[half:n - half] = np.where(ds > 0, np.abs(heading[hi] - heading[lo]) / ds, 0.0)
    return kappa


def detect_turn_points(rec: TrajectoryRecord, curvature_threshold: float = 0.05, window: int = 5,
                       region: CriticalZone | None = None) -> TurnPoint | None:
    """First sample whose smoothed curvature exceeds the threshold and stays
    above it for at least ``window // 2`` further samples.

    The arc distance is measured from the first sample inside ``region`` (or
    from the first sample when no region is given); an onset outside the
    region yields ``None``.
    """
    if window < 1:
        raise ValidationError("window must be >= 1")
    if len(rec) < window + 2:
        raise ValidationError(f"trajectory {rec.vehicle_id!r} has {len(rec)} samples, need >= {window + 2}")
    kappa = smoothed_curvature(rec, window)
    above = np.nan_to_num(kappa, nan=0.0) > curvature_threshold
    hold = window // 2
    onset = None
    for i in np.flatnonzero(above):
        if i + hold < len(rec) and above[i:i + hold + 1].all():
            onset = int(i)
            break
    if onset is None:
        return None
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(rec.x), np.diff(rec.y)))])
    entry = 0
    if region is not None:
        if not region.contains(float(rec.x[onset]), float(rec.y[onset])):
            return None
        inside = [i for i in range(len(rec)) if region.contains(float(rec.x[i]), float(rec.y[i]))]
        entry = inside[0]
    return TurnPoint(rec.vehicle_id, float(rec.x[onset]), float(rec.y[onset]), float(rec.t[onset]),
                     float(arc[onset] - arc[entry]))


def _kmeans_pp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [data[rng.integers(len(data))]]
    for _ in range(1, k):
        d2 = np.min(((data[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(data))
        else:
            idx = rng.choice(len(data), p=d2 / total)
        centers.append(data[idx])
    return np.array(centers, dtype=float)


def kmeans(data: np.ndarray, k: int, seed: int = 0, tol: float = 1e-6,
           max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centroids, labels, inertia, iterations)``. Inertia is checked to
    be non-increasing on every iteration.
    """
    data = np.asarray(data, dtype=float)
    if len(data) < k or k < 1:
        raise ValidationError(f"need at least k={k} points, got {len(data)}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(data, k, rng)
    prev = math.inf
    labels = np.zeros(len(data), dtype=int)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((data[:, None, :] - centers[None]) ** 2).sum(-1)
        labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(len(data)), labels].sum())
        assert inertia <= prev * (1 + 1e-12) + 1e-12, "k-means inertia increased"
        for j in range(k):
            members = data[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        converged = prev < math.inf and (prev - inertia) <= tol * max(prev, 1e-300)
        prev = inertia
        if converged:
            break
    d2 = ((data[:, None, :] - centers[None]) ** 2).sum(-1)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(data)), labels].sum())
    return centers, labels, inertia, it


def isometry_score(gaps: Sequence[float]) -> float | None:
    if not gaps:
        return None
    mean = sum(gaps) / len(gaps)
    if mean <= 0:
        return math.inf
    return max(abs(g - mean) for g in gaps) / mean


def cluster_turn_points(points: Sequence[TurnPoint], k: int = 3, seed: int = 0,
                        origin: tuple[float, float] = (0.0, 0.0)) -> ClusterReport:
    """Cluster 2-D onset positions; report the projection on the approach axis."""
    if len(points) < k:
        raise ValidationError(f"fewer points ({len(points)}) than clusters ({k})")
    data = np.array([[p.x, p.y] for p in points], dtype=float)
    centers, labels, inertia, iters = kmeans(data, k, seed)
    order = np.argsort(centers[:, 1] - origin[1], kind="stable")
    centers = centers[order]
    counts = [int((labels == j).sum()) for j in order]
    projected = [float(c[1] - origin[1]) for c in centers]
    gaps = [b - a for a, b in zip(projected, projected[1:])]
    mean = sum(gaps) / len(gaps) if gaps else 0.0
    return ClusterReport(
        k=k,
        centroids=tuple((float(c[0]), float(c[1])) for c in centers),
        counts=tuple(counts),
        projected=tuple(projected),
        gaps=tuple(gaps),
        deviations=tuple(g - mean for g in gaps),
        isometry_score=isometry_score(gaps),
        inertia=inertia,
        iterations=iters,
    )


def validate_isometry(report: ClusterReport, tolerance: float = 0.2) -> bool:
    if report.k < 3:
        raise ValidationError("need >= 3 clusters for spacing test")
    return report.isometry_score is not None and report.isometry_score <= tolerance + 1e-12


def synthetic_corpus(n: int = 200, sigma: float = 0.3, zone_length: float = 20.0,
                     ratios: Sequence[float] = (0.25, 0.5, 0.75), seed: int = 0,
                     speed: float = 2.5, dt: float = 0.1, approach: float = 5.0) -> list[TrajectoryRecord]:
    """Left turns that follow the candidate paths with Gaussian jitter.

    Each trajectory picks a path uniformly, shifts its turning point along the
    approach by N(0, sigma) and the whole trajectory sideways by N(0, sigma),
    and starts ``approach`` metres behind the stop line.
    """
    rng = np.random.default_rng(seed)
    zone = extract_critical_zone(IntersectionSpec.square(zone_length))
    ctps = compute_ctps(zone, ratios)
    paths = generate_candidate_paths(zone, ctps)
    out = []
    ds = speed * dt
    for i in range(n):
        k = int(rng.integers(len(paths)))
        shift = float(rng.normal(0.0, sigma))
        lateral = float(rng.normal(0.0, sigma))
        path = paths[k]
        ss = np.arange(-approach - shift, path.total_length + 1e-9, ds)
        poses = [frenet_to_cartesian(path, float(s), mode="extend") for s in ss]
        xs = np.array([p[0] for p in poses]) + lateral
        ys = np.array([p[1] for p in poses]) + shift
        hs = np.array([p[2] for p in poses])
        t = np.arange(len(ss)) * dt
        out.append(TrajectoryRecord(f"v{i:04d}", t, xs, ys, np.full(len(ss), speed), hs))
    return out
