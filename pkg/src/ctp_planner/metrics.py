"""Evaluation quantities computed from step logs.

Everything here is a pure function of :class:`StepLog` lists, so values
recomputed from a persisted ``steps.jsonl`` equal the in-memory ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .geometry import INTENTIONS
from .simulator import EpisodeResult, StepLog

FULL_STOP_SPEED = 0.1
CERTAINTY = 0.9


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MarchingTrace:
    times: tuple[float, ...]
    ratios: tuple[float, ...]
    path_length: float
    clear_time: float | None
    clear_step: int | None


@dataclass(frozen=True)
class ComparisonReport:
    ctp_clear_time: float
    baseline_clear_time: float
    advantage: float
    ctp_full_stop: bool
    baseline_full_stop: bool
    ctp_mean_speed: float
    baseline_mean_speed: float
    ctp_min_speed: float
    baseline_min_speed: float

    def as_dict(self) -> dict[str, float | bool]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class BeliefActionRow:
    t: float
    step: int
    p_left: float
    p_straight: float
    p_right: float
    a_v: int | None
    a_l: bool | None
    route: int


@dataclass(frozen=True)
class BeliefActionTrace:
    rows: tuple[BeliefActionRow, ...]
    certainty_step: int | None
    certain_intention: str | None

    def mean_av(self, before: bool) -> float | None:
        """Mean a_v decided strictly before / at-or-after the certainty step."""
        if self.certainty_step is None:
            return None
        vals = [r.a_v for r in self.rows if r.a_v is not None
                and ((r.step < self.certainty_step) if before else (r.step >= self.certainty_step))]
        return sum(vals) / len(vals) if vals else None

    def braked_near_certainty(self, window: int = 2) -> bool:
        if self.certainty_step is None:
            return False
        return any(r.a_v is not None and r.a_v < 0 and abs(r.step - self.certainty_step) <= window
                   for r in self.rows)


@dataclass(frozen=True)
class SafetyTrace:
    distances: tuple[float | None, ...]
    speeds: tuple[float, ...]
    passed: bool
    violation_steps: tuple[int, ...]


def marching_ratio(logs: Sequence[StepLog], path_length: float) -> MarchingTrace:
    if not logs:
        raise MetricsError("empty log")
    if path_length <= 0:
        raise MetricsError("path_length must be > 0")
    times = tuple(l.t for l in logs)
    ratios = tuple(l.ego_s / path_length for l in logs)
    clear, clear_step = None, None
    for i, r in enumerate(ratios):
        if r >= 1.0:
            clear_step = logs[i].step
            if i == 0:
                clear = times[0]
            else:
                r0, t0 = ratios[i - 1], times[i - 1]
                clear = t0 + (1.0 - r0) / (r - r0) * (times[i] - t0)
            break
    return MarchingTrace(times, ratios, path_length, clear, clear_step)


def _inside(log: StepLog) -> bool:
    return log.ego_s >= 0.0


def _speed_stats(logs: Sequence[StepLog]) -> tuple[bool, float, float]:
    moving = logs[1:] if len(logs) > 1 else logs
    speeds = [l.ego_v for l in moving]
    stop = any(l.ego_v <= FULL_STOP_SPEED and _inside(l) for l in moving)
    return stop, sum(speeds) / len(speeds), min(speeds)


def compare_commute(ctp: EpisodeResult, baseline: EpisodeResult) -> ComparisonReport:
    """Clear-time comparison; ``advantage = baseline - ctp`` (positive favours CTP)."""
    for side, res in (("ctp", ctp), ("baseline", baseline)):
        if res.outcome != "goal":
            raise MetricsError(f"{side} did not reach goal (outcome: {res.outcome})")
    mc = marching_ratio(ctp.logs, ctp.path_length)
    mb = marching_ratio(baseline.logs, baseline.path_length)
    if mc.clear_time is None or mb.clear_time is None:
        raise MetricsError("goal episode without a clear time")
    cs, cm, cmin = _speed_stats(ctp.logs)
    bs, bm, bmin = _speed_stats(baseline.logs)
    return ComparisonReport(
        ctp_clear_time=mc.clear_time, baseline_clear_time=mb.clear_time,
        advantage=mb.clear_time - mc.clear_time,
        ctp_full_stop=cs, baseline_full_stop=bs,
        ctp_mean_speed=cm, baseline_mean_speed=bm,
        ctp_min_speed=cmin, baseline_min_speed=bmin,
    )


def belief_action_trace(logs: Sequence[StepLog], vehicle: int = 0) -> BeliefActionTrace:
    """Pair each step's belief with the action chosen from it.

    A log row stores the action that produced its state, so the decision made
    at step k is read from row k + 1; the final row has no decision.
    """
    rows = []
    certainty_step, certain = None, None
    for i, l in enumerate(logs):
        probs = l.belief[vehicle] if len(l.belief) > vehicle else {}
        p = {n: probs.get(n, 1.0 / 3.0) for n in INTENTIONS}
        act = logs[i + 1].action if i + 1 < len(logs) else None
        rows.append(BeliefActionRow(
            t=l.t, step=l.step, p_left=p["left"], p_straight=p["straight"], p_right=p["right"],
            a_v=None if act is None else act["a_v"],
            a_l=None if act is None else bool(act["a_l"]),
            route=l.route,
        ))
        if certainty_step is None and probs:
            best = max(INTENTIONS, key=lambda n: p[n])
            if p[best] > CERTAINTY:
                certainty_step, certain = l.step, best
    return BeliefActionTrace(tuple(rows), certainty_step, certain)


def safety_trace(logs: Sequence[StepLog], dist_safe: float) -> SafetyTrace:
    """Per-step minimum distance; ``None`` stands for +inf (nobody around)."""
    dists = tuple(l.min_dist for l in logs)
    bad = tuple(l.step for l in logs if l.min_dist is not None and l.min_dist < dist_safe)
    return SafetyTrace(dists, tuple(l.ego_v for l in logs), not bad, bad)


def discounted_return(logs: Sequence[StepLog], gamma: float) -> float:
    """Sum of gamma^(k-1) r_k over executed steps: the quantity the search maximises."""
    return sum(gamma ** (k - 1) * l.reward["total"] for k, l in enumerate(logs) if l.reward is not None)


def write_jsonl(logs: Iterable[StepLog], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for l in logs:
            fh.write(json.dumps(l.to_record(), sort_keys=True, allow_nan=False) + "\n")


def read_jsonl(path: str | Path) -> list[StepLog]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("schema") != "step_log.v1":
                raise MetricsError(f"line {n}: unsupported schema {rec.get('schema')!r}")
            out.append(StepLog.from_record(rec))
    return out
