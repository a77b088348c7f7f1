"""Closed-loop episodes: plan, act on the ground truth, observe, update."""

from __future__ import annotations

import math
import random
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

from .config import ScenarioConfig
from .geometry import (
    CtpSet,
    IntersectionSpec,
    baseline_path,
    compute_ctps,
    extract_critical_zone,
    generate_candidate_paths,
    oncoming_route,
    INTENTIONS,
)
from .model import UNCOMMITTED, Action, JointState, LeftTurnModel, RewardBreakdown, VehicleState
from .solver import BeliefCollapse, Planner, condition_belief, initial_belief, update_belief

OUTCOMES = ("goal", "collision", "timeout", "failed")


@dataclass
class StepLog:
    t: float
    step: int
    ego_x: float
    ego_y: float
    ego_heading: float
    ego_s: float
    ego_v: float
    route: int
    oncoming: list[dict[str, float]]
    action: dict[str, Any] | None
    belief: list[dict[str, float]]
    reward: dict[str, float] | None
    min_dist: float | None
    sims: int = 0
    latency_ms: float = field(default=0.0, compare=False)

    def to_record(self) -> dict[str, Any]:
        """Deterministic JSON payload (latency goes to the timing log)."""
        d = asdict(self)
        d.pop("latency_ms")
        d["schema"] = "step_log.v1"
        return d

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "StepLog":
        rec = {k: v for k, v in rec.items() if k != "schema"}
        return cls(**rec)


@dataclass
class EpisodeResult:
    outcome: str
    steps: int
    total_return: float
    ctp: int
    clear_time: float | None
    path_length: float
    logs: list[StepLog]
    planner: str = "ctp"
    error: str | None = None

    def summary(self) -> dict[str, Any]:
        return {
            "outcome": self.outcome,
            "steps": self.steps,
            "total_return": self.total_return,
            "ctp": self.ctp,
            "clear_time_s": self.clear_time,
            "path_length_m": self.path_length,
            "planner": self.planner,
            "error": self.error,
        }

    @property
    def min_distance(self) -> float | None:
        ds = [l.min_dist for l in self.logs if l.min_dist is not None]
        return min(ds) if ds else None

    @property
    def mean_latency_ms(self) -> float:
        lat = [l.latency_ms for l in self.logs if l.action is not None]
        return sum(lat) / len(lat) if lat else 0.0


def build_world(cfg: ScenarioConfig, baseline: bool = False) -> LeftTurnModel:
    zone = extract_critical_zone(IntersectionSpec.square(cfg.zone_length))
    routes = {i: oncoming_route(zone, i, cfg.layout) for i in INTENTIONS}
    if baseline:
        path = baseline_path(zone)
        ctps = CtpSet(ratios=(0.0,), distances=(0.0,), radii=(zone.side_length,))
        return LeftTurnModel([path], ctps, routes, cfg.model).precompute()
    ctps = compute_ctps(zone, cfg.ctp_ratios)
    # conflict windows are geometry, not planning: build them before the clock starts
    return LeftTurnModel(generate_candidate_paths(zone, ctps), ctps, routes, cfg.model).precompute()


def _clean(x: float) -> float | None:
    return None if x is None or math.isinf(x) else x


def _log(model: LeftTurnModel, state: JointState, step: int, action: Action | None,
         probs: list[dict[str, float]], reward: RewardBreakdown | None, dist: float | None,
         sims: int, latency: float) -> StepLog:
    ex, ey, eh = model.ego_pose(state.ego)
    onc = []
    for o in state.oncoming:
        x, y, h = model.vehicle_pose(o)
        onc.append({"x": x, "y": y, "heading": h, "s": o.s, "v": o.v})
    return StepLog(
        t=step * model.cfg.dt, step=step, ego_x=ex, ego_y=ey, ego_heading=eh,
        ego_s=state.ego.s, ego_v=state.ego.v, route=state.ego.route, oncoming=onc,
        action=None if action is None else {"a_v": action.a_v, "a_l": bool(action.a_l)},
        belief=probs, reward=None if reward is None else reward.as_dict(),
        min_dist=_clean(dist), sims=sims, latency_ms=latency,
    )


def clear_time(logs: Sequence[StepLog], path_length: float) -> float | None:
    """Time at which the marching ratio first reaches 1 (linear interpolation)."""
    prev = None
    for log in logs:
        r = log.ego_s / path_length
        if r >= 1.0:
            if prev is None:
                return log.t
            pt, pr = prev
            return pt + (1.0 - pr) / (r - pr) * (log.t - pt)
        prev = (log.t, r)
    return None


def run_episode(cfg: ScenarioConfig, baseline: bool = False) -> EpisodeResult:
    model = build_world(cfg, baseline=baseline)
    planner = Planner(model, cfg.solver)
    ego = VehicleState(cfg.ego_start_s, cfg.ego_start_v, 1 if baseline else UNCOMMITTED)
    truth = JointState(ego, tuple(VehicleState(o.start_s, o.speed, o.intention) for o in cfg.oncoming), 0)
    belief = initial_belief(ego, [(o.s, o.v) for o in truth.oncoming], cfg.solver.particles)
    belief = condition_belief(belief, model.observe(truth), model)
    probs = [belief.intention_probabilities(i) for i in range(len(truth.oncoming))]
    logs = [_log(model, truth, 0, None, probs, None, model.min_distance(truth), 0, 0.0)]
    total = 0.0
    outcome, error = "timeout", None
    seed = cfg.solver.rng_seed
    for step in range(1, cfg.max_steps + 1):
        rng = random.Random(f"{seed}:{step}")
        t0 = time.perf_counter()
        try:
            action = planner.plan(belief, rng)
        except BeliefCollapse as exc:
            outcome, error = "failed", str(exc)
            break
        latency = (time.perf_counter() - t0) * 1000.0
        nxt = model.transition(truth, action)
        reward = model.reward(truth, nxt)
        dist = model.min_distance(truth, nxt)
        status = model.is_terminal(nxt, truth)
        obs = model.observe(nxt)
        total += reward.total
        try:
            belief = update_belief(belief, action, obs, model, cfg.solver, rng)
        except BeliefCollapse as exc:
            truth = nxt
            outcome, error = "failed", str(exc)
            break
        truth = nxt
        probs = [belief.intention_probabilities(i) for i in range(len(truth.oncoming))]
        logs.append(_log(model, truth, step, action, probs, reward, dist, planner.last_sims, latency))
        if status != "none":
            outcome = status
            break
    route = truth.ego.route
    length = model.ego_path(route).total_length
    return EpisodeResult(
        outcome=outcome, steps=len(logs) - 1, total_return=total, ctp=route,
        clear_time=clear_time(logs, length), path_length=length, logs=logs,
        planner="baseline" if baseline else "ctp", error=error,
    )


def run_baseline_episode(cfg: ScenarioConfig) -> EpisodeResult:
    return run_episode(cfg, baseline=True)


@dataclass
class BatchRow:
    variant: str
    seed: int
    planner: str
    outcome: str
    steps: int
    ctp: int
    clear_time: float | None
    min_dist: float | None
    mean_latency_ms: float
    error: str | None = None
    result: EpisodeResult | None = field(default=None, repr=False, compare=False)


def _run_one(job):
    cfg, variant, seed, baseline = job
    try:
        res = run_episode(cfg, baseline=baseline)
    except Exception as exc:  # recorded per row, the batch continues
        return BatchRow(variant, seed, "baseline" if baseline else "ctp", "failed", 0, 0, None, None, 0.0,
                        error=f"{type(exc).__name__}: {exc}")
    return BatchRow(variant, seed, res.planner, res.outcome, res.steps, res.ctp, res.clear_time,
                    res.min_distance, res.mean_latency_ms, res.error, res)


def run_batch(template: ScenarioConfig, seeds: Iterable[int],
              variants: Sequence[tuple[str, dict[str, Any]]] | None = None,
              baseline: bool = False, workers: int = 1, keep_results: bool = True) -> list[BatchRow]:
    """Run every (variant, seed) pair; rows ordered by variant then seed."""
    seeds = sorted(set(int(s) for s in seeds))
    if not seeds:
        raise ValueError("run_batch needs at least one seed")
    variants = list(variants) if variants else [(template.name, {})]
    jobs = []
    for name, override in variants:
        base = template.with_overrides(override)
        for seed in seeds:
            jobs.append((base.with_overrides({"seed": seed}), name, seed, baseline))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    if not keep_results:
        for r in rows:
            r.result = None
    return rows


def aggregate(rows: Sequence[BatchRow]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for r in rows:
        agg = out.setdefault(r.variant, {"episodes": 0, "outcomes": {o: 0 for o in OUTCOMES},
                                         "clear_times": [], "min_dist": None})
        agg["episodes"] += 1
        agg["outcomes"][r.outcome] = agg["outcomes"].get(r.outcome, 0) + 1
        if r.clear_time is not None:
            agg["clear_times"].append(r.clear_time)
        if r.min_dist is not None:
            agg["min_dist"] = r.min_dist if agg["min_dist"] is None else min(agg["min_dist"], r.min_dist)
    for agg in out.values():
        ct = agg.pop("clear_times")
        agg["mean_clear_time_s"] = sum(ct) / len(ct) if ct else None
    return out
