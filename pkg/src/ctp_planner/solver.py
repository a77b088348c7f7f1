"""Online Monte-Carlo belief-tree search (POMCP with subtree retention)."""

from __future__ import annotations

import bisect
import gc
import math
import random
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .model import ACCELERATIONS as ACCELS
from .model import ALL_ACTIONS, Action, JointState, LeftTurnModel, Observation, observation_key, step_kinematics

ROLLOUT_POLICIES = ("yield", "constant-velocity", "random-legal")
COAST = Action(0, False)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class BeliefCollapse(RuntimeError):
    """No particle is consistent with the received observation."""


class Particle(NamedTuple):
    state: JointState
    weight: float


@dataclass
class ActionNode:
    action: Action
    visit_count: int = 0
    value_sum: float = 0.0
    children: dict = field(default_factory=dict)

    @property
    def q_value(self) -> float:
        return self.value_sum / self.visit_count if self.visit_count else 0.0


@dataclass
class BeliefNode:
    particles: list[Particle] = field(default_factory=list)
    children: dict[int, ActionNode] = field(default_factory=dict)
    visit_count: int = 0
    pending: list[Action] | None = field(default=None, repr=False)

    def intention_probabilities(self, vehicle: int = 0) -> dict[str, float]:
        total = sum(p.weight for p in self.particles)
        probs = {"left": 0.0, "straight": 0.0, "right": 0.0}
        for p in self.particles:
            probs[p.state.oncoming[vehicle].route] += p.weight
        return {k: v / total for k, v in probs.items()}


@dataclass(frozen=True)
class SolverConfig:
    num_sims_per_step: int = 300
    ucb_c: float = 0.7
    max_depth: int = 20
    rollout_policy: str = "yield"
    obs_key_resolution: tuple[float, float] = (1.0, 1.0)
    rng_seed: int = 0
    time_budget_ms: float | None = None
    particles: int = 500
    widening_k: float | None = 1.0
    widening_alpha: float = 0.5

    def __post_init__(self):
        if self.num_sims_per_step < 1:
            raise ValueError("num_sims_per_step must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.ucb_c <= 0:
            raise ValueError("ucb_c must be > 0")
        if self.rollout_policy not in ROLLOUT_POLICIES:
            raise ValueError(f"unknown rollout policy {self.rollout_policy!r}")
        if self.particles < 1:
            raise ValueError("particles must be >= 1")
        if self.widening_k is not None and (self.widening_k <= 0 or not 0 <= self.widening_alpha <= 1):
            raise ValueError("widening needs k > 0 and alpha in [0, 1]")


def initial_belief(ego, oncoming_observed: Sequence[tuple[float, float]], n_particles: int) -> BeliefNode:
    """Uniform belief over every intention combination of the oncoming vehicles.

    ``oncoming_observed`` holds ``(s, v)`` per vehicle; each combination gets
    the same total mass regardless of how particles divide.
    """
    combos: list[tuple[str, ...]] = [()]
    for _ in oncoming_observed:
        combos = [c + (i,) for c in combos for i in ("left", "straight", "right")]
    per = max(1, n_particles // len(combos))
    w = 1.0 / (len(combos) * per)
    particles = []
    for combo in combos:
        onc = tuple(type(ego)(s, v, intent) for (s, v), intent in zip(oncoming_observed, combo))
        state = JointState(ego, onc, 0)
        particles.extend(Particle(state, w) for _ in range(per))
    return BeliefNode(particles=particles)


def ucb_select(node: BeliefNode, c: float) -> ActionNode:
    """UCB1 over children with q min-max normalised across visited siblings."""
    children = list(node.children.values())
    if not children:
        raise ValueError("ucb_select on a node without children")
    for child in children:
        if child.visit_count == 0:
            return child
    qs = [ch.q_value for ch in children]
    lo, hi = min(qs), max(qs)
    span = hi - lo
    log_n = math.log(node.visit_count) if node.visit_count > 0 else 0.0
    best, best_score = None, -math.inf
    for ch, q in zip(children, qs):
        q_norm = (q - lo) / span if span > 0 else 0.0
        score = q_norm + c * math.sqrt(log_n / ch.visit_count)
        if score > best_score:
            best, best_score = ch, score
    return best


def best_root_action(node: BeliefNode) -> Action:
    """Most visited child; ties by q, then by lowest action index."""
    best = None
    for ch in node.children.values():
        if best is None or (ch.visit_count, ch.q_value) > (best.visit_count, best.q_value):
            best = ch
    return best.action


def yield_action(model: LeftTurnModel, state: JointState) -> Action:
    """Gap-acceptance controller acting on a fully known state.

    Drives at full acceleration unless an oncoming vehicle will occupy the
    ego's conflict window before the ego can clear it; then it picks the
    strongest acceleration that still allows stopping short of the window.
    """
    cfg = model.cfg
    dt = cfg.dt
    ego = state.ego
    a_max, a_min = ACCELS[-1], ACCELS[0]
    best = a_max
    for o in state.oncoming:
        window = model.conflict_interval(ego.route, o.route)
        if window is None:
            continue
        e_in, e_out, o_in, o_out = window
        if ego.s > e_out or o.s > o_out:
            continue
        if o.v <= 0:
            if o.s < o_in:
                continue
            t_in = 0.0
        else:
            t_in = max(0.0, (o_in - o.s) / o.v)
        # time for the ego to clear the window at full throttle
        s, v, t_clear = ego.s, ego.v, 0.0
        while s <= e_out and t_clear <= t_in + dt:
            s, v = step_kinematics(s, v, a_max, dt, cfg.v_min, cfg.v_max)
            t_clear += dt
        if s > e_out and t_clear + 0.5 * dt < t_in:
            continue
        if ego.s >= e_in:
            # already inside the window: leaving it as fast as possible is all that is left
            continue
        allowed = a_min
        for a in reversed(ACCELS):
            s1, v1 = step_kinematics(ego.s, ego.v, a, dt, 0.0, cfg.v_max)
            if s1 + v1 * v1 / (2.0 * -a_min) <= e_in - 0.5:
                allowed = a
                break
        if ego.v + allowed * dt < 0:
            allowed = max(a_min, math.ceil(-ego.v / dt))
        best = min(best, allowed)
    return Action(best, False)


def rollout(model: LeftTurnModel, state: JointState, depth: int, policy: str,
            rng: random.Random, key_res: tuple[float, float] = (1.0, 1.0)) -> float:
    gamma = model.cfg.gamma
    ret, disc = 0.0, 1.0
    for _ in range(depth):
        if policy == "yield":
            action = yield_action(model, state)
        elif policy == "constant-velocity":
            action = COAST
        else:
            legal = model.legal_actions(state)
            action = legal[int(rng.random() * len(legal))]
        state, _, r, terminal = model.generate(state, action, key_res)
        ret += disc * r
        if terminal:
            break
        disc *= gamma
    return ret


class Planner:
    """POMCP search over a belief tree that is kept between steps."""

    def __init__(self, model: LeftTurnModel, cfg: SolverConfig):
        self.model = model
        self.cfg = cfg
        self.last_sims = 0

    def plan(self, root: BeliefNode, rng: random.Random) -> Action:
        if not root.particles:
            raise BeliefCollapse("belief collapse: root has no particles")
        cfg = self.cfg
        cum = []
        acc = 0.0
        for p in root.particles:
            acc += p.weight
            cum.append(acc)
        if acc <= 0:
            raise BeliefCollapse("belief collapse: zero total weight")
        deadline = None
        if cfg.time_budget_ms is not None:
            deadline = time.perf_counter() + cfg.time_budget_ms / 1000.0
        sims = 0
        # golden-ratio sequence: every prefix of the run samples the root
        # belief nearly in proportion to its weights
        u = rng.random()
        # the tree holds no reference cycles; keep cyclic GC pauses out of the
        # search and let them run between steps instead
        gc_on = gc.isenabled()
        gc.disable()
        try:
            for _ in range(cfg.num_sims_per_step):
                u = (u + _GOLDEN) % 1.0
                i = bisect.bisect_right(cum, u * acc)
                state = root.particles[min(i, len(cum) - 1)].state
                self._simulate(state, root, 0, rng)
                sims += 1
                if deadline is not None and time.perf_counter() > deadline:
                    break
        finally:
            if gc_on:
                gc.enable()
        self.last_sims = sims
        return best_root_action(root)

    def _widen(self, state: JointState, node: BeliefNode, depth: int) -> None:
        """Progressive widening below the root: unlock actions nearest the
        yield heuristic first. The root is always fully expanded."""
        model, cfg = self.model, self.cfg
        if node.pending is None:
            legal = model.legal_actions(state)
            if cfg.widening_k is None:
                node.pending = list(legal)
            else:
                hint = yield_action(model, state).a_v
                node.pending = sorted(legal, key=lambda a: (a.a_l, abs(a.a_v - hint), a.a_v))
        if cfg.widening_k is None or depth == 0:
            allowed = len(node.pending) + len(node.children)
        else:
            allowed = math.ceil(cfg.widening_k * (node.visit_count + 1) ** cfg.widening_alpha)
        while node.pending and len(node.children) < allowed:
            a = node.pending.pop(0)
            node.children[a.index] = ActionNode(a)

    def _simulate(self, state: JointState, node: BeliefNode, depth: int, rng: random.Random) -> float:
        model, cfg = self.model, self.cfg
        self._widen(state, node, depth)
        a_node = ucb_select(node, cfg.ucb_c)
        nxt, key, r, terminal = model.generate(state, a_node.action, cfg.obs_key_resolution)
        if terminal or depth + 1 >= cfg.max_depth:
            ret = r
        else:
            child = a_node.children.get(key)
            if child is None:
                child = BeliefNode()
                a_node.children[key] = child
                child.particles.append(Particle(nxt, 1.0))
                ret = r + model.cfg.gamma * rollout(model, nxt, cfg.max_depth - depth - 1,
                                                    cfg.rollout_policy, rng, cfg.obs_key_resolution)
            else:
                child.particles.append(Particle(nxt, 1.0))
                ret = r + model.cfg.gamma * self._simulate(nxt, child, depth + 1, rng)
        node.visit_count += 1
        a_node.visit_count += 1
        a_node.value_sum += ret
        return ret


def effective_sample_size(weights: Sequence[float]) -> float:
    total = sum(weights)
    return total * total / sum(w * w for w in weights)


def systematic_resample(particles: list[Particle], rng: random.Random) -> list[Particle]:
    """Systematic resampling that keeps the mass of each distinct state.

    Copies are allocated to distinct states by systematic sampling; each
    surviving state keeps its exact pre-resampling mass split over its copies.
    States with mass above ``1e-12`` always keep at least one copy.
    """
    n = len(particles)
    groups: dict[JointState, float] = {}
    for p in particles:
        groups[p.state] = groups.get(p.state, 0.0) + p.weight
    total = sum(groups.values())
    states = list(groups)
    masses = [groups[s] / total for s in states]
    counts = [0] * len(states)
    u = rng.random() / n
    cum, j = masses[0], 0
    for k in range(n):
        pos = u + k / n
        while pos > cum and j < len(states) - 1:
            j += 1
            cum += masses[j]
        counts[j] += 1
    out = []
    for state, mass, c in zip(states, masses, counts):
        if mass <= 1e-12:
            continue
        c = max(c, 1)
        out.extend(Particle(state, mass / c) for _ in range(c))
    total = sum(p.weight for p in out)
    return [Particle(p.state, p.weight / total) for p in out]


def condition_belief(root: BeliefNode, obs: Observation, model: LeftTurnModel) -> BeliefNode:
    """Reweight particles by an observation of their current states."""
    new = [Particle(p.state, p.weight * model.observation_likelihood(obs, p.state)) for p in root.particles]
    total = sum(p.weight for p in new)
    if not total > 0:
        raise BeliefCollapse("belief collapse: every particle contradicts the observation")
    return BeliefNode(particles=[Particle(p.state, p.weight / total) for p in new])


def update_belief(root: BeliefNode, action: Action, obs: Observation, model: LeftTurnModel,
                  cfg: SolverConfig, rng: random.Random | None = None) -> BeliefNode:
    """Bayes filter step plus retention of the matching search subtree."""
    new = []
    cache: dict[JointState, tuple[JointState, float]] = {}
    for p in root.particles:
        hit = cache.get(p.state)
        if hit is None:
            nxt = model.transition(p.state, action)
            hit = (nxt, model.observation_likelihood(obs, nxt))
            cache[p.state] = hit
        nxt, lik = hit
        new.append(Particle(nxt, p.weight * lik))
    total = sum(p.weight for p in new)
    if not total > 0:
        raise BeliefCollapse("belief collapse: every particle contradicts the observation")
    new = [Particle(p.state, p.weight / total) for p in new]
    if effective_sample_size([p.weight for p in new]) < 0.5 * len(new):
        new = systematic_resample(new, rng or random.Random(0))
    key = observation_key(obs, *cfg.obs_key_resolution)
    a_node = root.children.get(action.index)
    subtree = a_node.children.get(key) if a_node is not None else None
    if subtree is None:
        return BeliefNode(particles=new)
    subtree.particles = new
    return subtree


__all__ = [
    "ALL_ACTIONS",
    "ActionNode",
    "BeliefCollapse",
    "BeliefNode",
    "Particle",
    "Planner",
    "SolverConfig",
    "best_root_action",
    "condition_belief",
    "effective_sample_size",
    "initial_belief",
    "rollout",
    "systematic_resample",
    "ucb_select",
    "update_belief",
]
