"""Static SVG figures rebuilt from persisted step logs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .geometry import CandidatePath, sample_path  # noqa: E402
from .metrics import belief_action_trace, marching_ratio, safety_trace  # noqa: E402
from .simulator import StepLog  # noqa: E402

FIGURES = ("trajectory", "belief", "marching", "safety", "speed")

# fixed ids and no date stamp keep the SVG bytes reproducible
plt.rcParams["svg.hashsalt"] = "ctp-planner"
plt.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": "ctp-planner"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_trajectory(logs: Sequence[StepLog], ego_paths: Sequence[CandidatePath],
                    routes: Sequence[CandidatePath], zone_length: float, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6))
    for p in ego_paths:
        pts = sample_path(p, 0.5)
        ax.plot([q[1] for q in pts], [q[2] for q in pts], "--", lw=0.8, color="0.5")
    for r in routes:
        pts = sample_path(r, 0.5)
        ax.plot([q[1] for q in pts], [q[2] for q in pts], ":", lw=0.8, color="0.3")
    L = zone_length
    ax.plot([0, -L, -L, 0, 0], [0, 0, L, L, 0], color="k", lw=0.6)
    sc = ax.scatter([l.ego_x for l in logs], [l.ego_y for l in logs], c=[l.ego_v for l in logs],
                    cmap="viridis", s=18, zorder=3)
    for i in range(len(logs[0].oncoming) if logs else 0):
        ax.scatter([l.oncoming[i]["x"] for l in logs], [l.oncoming[i]["y"] for l in logs],
                   c=[l.oncoming[i]["v"] for l in logs], cmap="viridis", marker="s", s=14, zorder=3)
    fig.colorbar(sc, ax=ax, label="speed [m/s]")
    ax.set_aspect("equal")
    ax.set_xlim(-1.6 * L, 0.6 * L)
    ax.set_ylim(-0.4 * L, 1.8 * L)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    return _save(fig, path)


def plot_belief(logs: Sequence[StepLog], path: Path) -> Path:
    trace = belief_action_trace(logs)
    t = [r.t for r in trace.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, [r.p_left for r in trace.rows], label="P(left)")
    ax.plot(t, [r.p_straight for r in trace.rows], label="P(straight)")
    ax.plot(t, [r.p_right for r in trace.rows], label="P(right)")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("belief")
    ax2 = ax.twinx()
    acts = [(r.t, r.a_v) for r in trace.rows if r.a_v is not None]
    ax2.step([a[0] for a in acts], [a[1] for a in acts], where="post", color="k", lw=1.0, label="a_v")
    ax2.set_ylabel("a_v [m/s²]")
    ax2.set_ylim(-4.5, 4.5)
    if trace.certainty_step is not None:
        tc = next(r.t for r in trace.rows if r.step == trace.certainty_step)
        ax.axvline(tc, color="r", ls="--", lw=0.8)
        ax.annotate(f"{trace.certain_intention} certain", (tc, 1.0), fontsize=8)
    ax.legend(loc="center left", fontsize=8)
    return _save(fig, path)


def plot_marching(runs: Sequence[tuple[str, Sequence[StepLog], float]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, logs, length in runs:
        tr = marching_ratio(logs, length)
        ax.plot(tr.times, tr.ratios, marker=".", label=label)
    ax.axhline(0.0, ls="--", lw=0.8)
    ax.axhline(1.0, ls="--", lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("marching ratio")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_safety(logs: Sequence[StepLog], dist_safe: float, path: Path) -> Path:
    tr = safety_trace(logs, dist_safe)
    t = [l.t for l in logs]
    fig, ax = plt.subplots(figsize=(7, 4))
    pts = [(ti, d) for ti, d in zip(t, tr.distances) if d is not None]
    ax.plot([p[0] for p in pts], [p[1] for p in pts], label="distance")
    ax.axhline(dist_safe, color="r", lw=0.8, label="dist_safe")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("distance [m]")
    ax2 = ax.twinx()
    ax2.plot(t, tr.speeds, "--", color="k", label="ego speed")
    ax2.set_ylabel("speed [m/s]")
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)


def plot_speed(runs: Sequence[tuple[str, Sequence[StepLog]]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, logs in runs:
        ax.plot([l.t for l in logs], [l.ego_v for l in logs], marker=".", label=label)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("ego speed [m/s]")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_turn_points(points, report, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 6))
    ax.scatter([p.x for p in points], [p.y for p in points], s=6, alpha=0.5)
    ax.scatter([c[0] for c in report.centroids], [c[1] for c in report.centroids], marker="x", s=80, color="r")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"k={report.k}, isometry score={report.isometry_score:.3f}"
                 if report.isometry_score is not None else f"k={report.k}")
    return _save(fig, path)
