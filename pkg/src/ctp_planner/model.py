"""Left-turn POMDP: states, actions, transition, reward and observations."""

from __future__ import annotations

import math

import numpy as np
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .geometry import CandidatePath, CtpSet, frenet_to_cartesian

UNCOMMITTED = 0

COLLISION_PENALTY = -4_000_000.0
GOAL_REWARD = 4_000_000.0
REVERSE_PENALTY = -30_000.0
MARCH_Y_GAIN = 300.0
MARCH_X_GAIN = -10.0

ACCELERATIONS = tuple(range(-4, 5))


class VehicleState(NamedTuple):
    s: float
    v: float
    route: int | str


class JointState(NamedTuple):
    ego: VehicleState
    oncoming: tuple[VehicleState, ...]
    t: int = 0


class Action(NamedTuple):
    a_v: int
    a_l: bool

    @property
    def index(self) -> int:
        return (self.a_v - ACCELERATIONS[0]) + len(ACCELERATIONS) * int(self.a_l)


ALL_ACTIONS = tuple(Action(a, bool(l)) for l in (0, 1) for a in ACCELERATIONS)
STRAIGHT_ACTIONS = ALL_ACTIONS[: len(ACCELERATIONS)]

# one (x, y, v) triple per oncoming vehicle
Observation = tuple[tuple[float, float, float], ...]


class RewardBreakdown(NamedTuple):
    r_c: float
    r_g: float
    r_v: float
    r_m: float
    r_r: float

    @property
    def total(self) -> float:
        return self.r_c + self.r_g + self.r_v + self.r_m + self.r_r

    def as_dict(self) -> dict[str, float]:
        d = self._asdict()
        d["total"] = self.total
        return d


@dataclass(frozen=True)
class ModelConfig:
    dt: float = 1.0
    gamma: float = 0.95
    v_ref: float = 5.0
    dist_safe: float = 2.5
    v_min: float = -1.0
    v_max: float = 15.0
    obs_sigma: float = 0.5
    likelihood: str = "kernel"
    reject_tol: float = 1e-6
    collision_substeps: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.dist_safe > 0:
            raise ValueError("dist_safe must be > 0")
        if not self.obs_sigma > 0:
            raise ValueError("obs_sigma must be > 0")
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")
        if self.likelihood not in ("kernel", "reject"):
            raise ValueError(f"unknown likelihood mode {self.likelihood!r}")
        if self.collision_substeps < 1:
            raise ValueError("collision_substeps must be >= 1")


def step_kinematics(s: float, v: float, a: float, dt: float,
                    v_min: float = -math.inf, v_max: float = math.inf) -> tuple[float, float]:
    """Constant-acceleration step; the speed saturates at the bounds and the
    remainder of the interval is integrated at the saturated speed."""
    v_new = v + a * dt
    if v_min <= v_new <= v_max:
        return s + v * dt + 0.5 * a * dt * dt, v_new
    bound = v_max if v_new > v_max else v_min
    if (bound - v) * a <= 0:
        # already beyond the bound and pushing further out
        t_hit = 0.0
    else:
        t_hit = (bound - v) / a
    s_hit = s + v * t_hit + 0.5 * a * t_hit * t_hit
    return s_hit + bound * (dt - t_hit), bound


def apply_path_lock(ego: VehicleState, action: Action, ctps: CtpSet, s_next: float | None = None) -> VehicleState:
    """Commit the ego to a CTP path.

    A left-turn flag picks the next CTP ahead; crossing the last CTP forces
    the last path. Committed egos ignore the flag.
    """
    if ego.route != UNCOMMITTED:
        return ego
    distances = ctps.distances
    if action.a_l:
        for i, l in enumerate(distances, start=1):
            if l >= ego.s:
                return ego._replace(route=i)
        return ego._replace(route=len(distances))
    if s_next is not None and s_next > distances[-1]:
        return ego._replace(route=len(distances))
    return ego


class LeftTurnModel:
    """Generative model over a fixed set of ego paths and oncoming routes.

    ``ego_paths[i - 1]`` is the path for route ``i``. While uncommitted the ego
    rides the shared straight prefix, which is the first part of the last path.
    """

    def __init__(self, ego_paths: Sequence[CandidatePath], ctps: CtpSet,
                 routes: dict[str, CandidatePath], cfg: ModelConfig):
        if len(ego_paths) != len(ctps):
            raise ValueError("one ego path per CTP is required")
        self.ego_paths = tuple(ego_paths)
        self.ctps = ctps
        self.routes = dict(routes)
        self.cfg = cfg
        self._pose_cache: dict[tuple, tuple[float, float, float]] = {}

    # geometry ------------------------------------------------------------

    def ego_path(self, route: int) -> CandidatePath:
        return self.ego_paths[(route if route != UNCOMMITTED else len(self.ego_paths)) - 1]

    def ego_pose(self, ego: VehicleState) -> tuple[float, float, float]:
        key = ("ego", ego.route, ego.s)
        pose = self._pose_cache.get(key)
        if pose is None:
            pose = frenet_to_cartesian(self.ego_path(ego.route), ego.s, mode="extend")
            self._pose_cache[key] = pose
        return pose

    def vehicle_pose(self, veh: VehicleState) -> tuple[float, float, float]:
        key = (veh.route, veh.s)
        pose = self._pose_cache.get(key)
        if pose is None:
            pose = frenet_to_cartesian(self.routes[veh.route], veh.s, mode="extend")
            self._pose_cache[key] = pose
        return pose

    def goal_s(self, route: int) -> float:
        if route == UNCOMMITTED:
            return math.inf
        return self.ego_path(route).goal_s

    # actions ---------------------------------------------------------------

    def legal_actions(self, state: JointState) -> tuple[Action, ...]:
        if state.ego.route == UNCOMMITTED:
            return ALL_ACTIONS
        return STRAIGHT_ACTIONS

    # dynamics --------------------------------------------------------------

    def transition(self, state: JointState, action: Action) -> JointState:
        cfg = self.cfg
        ego = state.ego
        s, v = step_kinematics(ego.s, ego.v, action.a_v, cfg.dt, cfg.v_min, cfg.v_max)
        ego = apply_path_lock(ego, action, self.ctps, s_next=s)
        oncoming = tuple(o._replace(s=o.s + o.v * cfg.dt) for o in state.oncoming)
        return JointState(VehicleState(s, v, ego.route), oncoming, state.t + 1)

    def min_distance(self, state: JointState, next_state: JointState | None = None) -> float:
        """Closest ego/oncoming centre distance.

        With ``next_state`` given, the interval between the two states is
        sampled ``collision_substeps`` times (arc lengths interpolated
        linearly), ending at ``next_state``.
        """
        if not state.oncoming:
            return math.inf
        if next_state is None:
            return self._distance_at(state.ego, state.oncoming)
        n = self.cfg.collision_substeps
        if n == 1:
            return self._distance_at(next_state.ego, next_state.oncoming)
        best = math.inf
        e0, e1 = state.ego.s, next_state.ego.s
        route = next_state.ego.route
        for k in range(1, n + 1):
            f = k / n
            ego = VehicleState(e0 + (e1 - e0) * f, 0.0, route)
            onc = tuple(VehicleState(a.s + (b.s - a.s) * f, b.v, b.route)
                        for a, b in zip(state.oncoming, next_state.oncoming))
            d = self._distance_at(ego, onc)
            if d < best:
                best = d
        return best

    def _distance_at(self, ego: VehicleState, oncoming: Sequence[VehicleState]) -> float:
        ex, ey, _ = self.ego_pose(ego)
        best = math.inf
        for o in oncoming:
            ox, oy, _ = self.vehicle_pose(o)
            d = math.hypot(ex - ox, ey - oy)
            if d < best:
                best = d
        return best

    def reward(self, state: JointState, next_state: JointState) -> RewardBreakdown:
        cfg = self.cfg
        ego = next_state.ego
        x, y, _ = self.ego_pose(ego)
        dist = self.min_distance(state, next_state)
        r_c = COLLISION_PENALTY if dist < cfg.dist_safe else 0.0
        r_g = GOAL_REWARD if ego.s > self.goal_s(ego.route) else 0.0
        r_r = REVERSE_PENALTY if ego.v < 0 else 0.0
        r_v = -(ego.v - cfg.v_ref) ** 2
        r_m = MARCH_Y_GAIN * y + MARCH_X_GAIN * x
        return RewardBreakdown(r_c, r_g, r_v, r_m, r_r)

    def is_terminal(self, state: JointState, prev: JointState | None = None) -> str:
        """``"collision"``, ``"goal"`` or ``"none"``; collision wins ties."""
        dist = self.min_distance(prev, state) if prev is not None else self.min_distance(state)
        if dist < self.cfg.dist_safe:
            return "collision"
        if state.ego.s > self.goal_s(state.ego.route):
            return "goal"
        return "none"

    def conflict_interval(self, ego_route: int, intention: str) -> tuple[float, float, float, float] | None:
        """``(ego_in, ego_out, onc_in, onc_out)`` arc-length windows in which the
        ego path and an oncoming route come within ``dist_safe`` of each other,
        or ``None`` when they never do. Sampled at 0.1 m, cached per pair."""
        path = self.ego_path(ego_route)
        key = ("conflict", path.index, len(path.segments), intention)
        if key in self._pose_cache:
            return self._pose_cache[key]
        route = self.routes[intention]
        ds = 0.1
        ego_s = np.arange(-10.0, path.total_length + 1.0, ds)
        onc_s = np.arange(0.0, route.total_length + ds, ds)
        ego_xy = np.array([frenet_to_cartesian(path, s, mode="extend")[:2] for s in ego_s])
        onc_xy = np.array([frenet_to_cartesian(route, s, mode="extend")[:2] for s in onc_s])
        d = np.hypot(ego_xy[:, None, 0] - onc_xy[None, :, 0], ego_xy[:, None, 1] - onc_xy[None, :, 1])
        close = d < self.cfg.dist_safe + 0.5
        ego_hit = np.flatnonzero(close.any(axis=1))
        if ego_hit.size == 0:
            result = None
        else:
            onc_hit = np.flatnonzero(close.any(axis=0))
            result = (float(ego_s[ego_hit[0]]), float(ego_s[ego_hit[-1]]),
                      float(onc_s[onc_hit[0]]), float(onc_s[onc_hit[-1]]))
        self._pose_cache[key] = result
        return result

    def precompute(self) -> "LeftTurnModel":
        """Fill the conflict-window cache for every ego route and intention."""
        for route in range(len(self.ego_paths) + 1):
            for intention in self.routes:
                self.conflict_interval(route, intention)
        return self

    # observations ----------------------------------------------------------

    def observe(self, state: JointState) -> Observation:
        out = []
        for o in state.oncoming:
            x, y, _ = self.vehicle_pose(o)
            out.append((x, y, o.v))
        return tuple(out)

    def observation_likelihood(self, obs: Observation, hypothesized: JointState) -> float:
        if len(obs) != len(hypothesized.oncoming):
            raise ValueError("observation and state disagree on the number of vehicles")
        cfg = self.cfg
        sq = 0.0
        for (ox, oy, _), veh in zip(obs, hypothesized.oncoming):
            hx, hy, _ = self.vehicle_pose(veh)
            d2 = (ox - hx) ** 2 + (oy - hy) ** 2
            if cfg.likelihood == "reject":
                if d2 > cfg.reject_tol ** 2:
                    return 0.0
                continue
            sq += d2
        if cfg.likelihood == "reject":
            return 1.0
        return math.exp(-sq / (2.0 * cfg.obs_sigma ** 2))

    # solver hot path --------------------------------------------------------

    def generate(self, state: JointState, action: Action, key_res: tuple[float, float]):
        """One simulator call: ``(next_state, obs_key, reward, terminal)``."""
        cfg = self.cfg
        nxt = self.transition(state, action)
        ego = nxt.ego
        x, y, _ = self.ego_pose(ego)
        dist = self.min_distance(state, nxt) if nxt.oncoming else math.inf
        collided = dist < cfg.dist_safe
        reached = ego.s > self.goal_s(ego.route)
        r = -(ego.v - cfg.v_ref) ** 2 + MARCH_Y_GAIN * y + MARCH_X_GAIN * x
        if collided:
            r += COLLISION_PENALTY
        if reached:
            r += GOAL_REWARD
        if ego.v < 0:
            r += REVERSE_PENALTY
        pos_res, vel_res = key_res
        key = []
        for o in nxt.oncoming:
            ox, oy, _ = self.vehicle_pose(o)
            key.append((round(ox / pos_res), round(oy / pos_res), round(o.v / vel_res)))
        return nxt, tuple(key), r, collided or reached


def observation_key(obs: Observation, pos_res: float = 1.0, vel_res: float = 1.0) -> tuple:
    return tuple((round(x / pos_res), round(y / pos_res), round(v / vel_res)) for x, y, v in obs)
