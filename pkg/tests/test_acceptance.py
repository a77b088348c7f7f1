"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Episode runs are shared through a module-level cache so the safety,
commute, path-choice, coupling and latency criteria all read the same
seeded episodes.
"""

import math
import random
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from ctp_planner.cli import main
from ctp_planner.config import ScenarioConfig, load_config
from ctp_planner.geometry import (
    INTENTIONS,
    IntersectionSpec,
    compute_ctps,
    divergence_s,
    extract_critical_zone,
    frenet_to_cartesian,
    generate_candidate_paths,
)
from ctp_planner.metrics import MetricsError, belief_action_trace, compare_commute, safety_trace
from ctp_planner.model import Action, UNCOMMITTED, VehicleState, step_kinematics
from ctp_planner.simulator import build_world, run_batch
from ctp_planner.solver import initial_belief, update_belief
from ctp_planner.validation import cluster_turn_points, detect_turn_points, synthetic_corpus, validate_isometry

from oracles import exact_intention_posterior
from test_model import REWARD_TABLE
from test_model import test_reward_table as check_reward_row

SCENARIOS = ("straight_blocker", "right_fast", "right_slow")
EXPECTED_CTP = {"straight_blocker": 3, "right_slow": 2, "right_fast": 1}
SAFETY_SEEDS = range(100)
BEHAVIOUR_SEEDS = range(50)
COMMUTE_SEEDS = range(20)

_cache: dict = {}


def episodes(scenarios: Path, name: str) -> list:
    if name not in _cache:
        cfg = load_config(scenarios / f"{name}.yaml")
        _cache[name] = (cfg, run_batch(cfg, SAFETY_SEEDS))
    return _cache[name]


# 1 ---------------------------------------------------------------------------

def test_criterion_01_geometry(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {"ctp": 0.0, "end": 0.0, "c0": 0.0, "fd": 0.0, "len": 0.0}
    h = 1e-4
    for _ in range(1000):
        L = float(rng.uniform(10.0, 40.0))
        c = np.sort(rng.uniform(0.02, 0.98, 3))
        while np.min(np.diff(c)) < 1e-3:
            c = np.sort(rng.uniform(0.02, 0.98, 3))
        zone = extract_critical_zone(IntersectionSpec.square(L))
        ctps = compute_ctps(zone, c.tolist())
        for ci, li, ri in zip(c, ctps.distances, ctps.radii):
            worst["ctp"] = max(worst["ctp"], abs(li - ci * L), abs(ri - (1 - ci) * L))
        for ci, p in zip(c, generate_candidate_paths(zone, ctps)):
            end = frenet_to_cartesian(p, p.total_length)
            worst["end"] = max(worst["end"], math.hypot(end[0] + L, end[1] - L))
            worst["len"] = max(worst["len"], abs(p.total_length - L * (2 * ci + 0.5 * math.pi * (1 - ci))))
            joins = np.cumsum([seg.length for seg in p.segments])[:-1]
            probes = list(joins) + list(rng.uniform(h, p.total_length - h, 4))
            for s in probes:
                a = frenet_to_cartesian(p, float(s) - h)
                b = frenet_to_cartesian(p, float(s) + h)
                mid = frenet_to_cartesian(p, float(s))
                worst["c0"] = max(worst["c0"], math.hypot(b[0] - a[0], b[1] - a[1]) - 2 * h * (1 + 1e-6))
                fd = math.atan2(b[1] - a[1], b[0] - a[0])
                worst["fd"] = max(worst["fd"], abs(math.remainder(fd - mid[2], 2 * math.pi)))
    elapsed = time.perf_counter() - start
    ok = (worst["ctp"] < 1e-9 and worst["end"] < 1e-9 and worst["len"] < 1e-9
          and worst["c0"] <= 1e-9 and worst["fd"] < 1e-3 and elapsed < 5.0)
    verdict(1, ok, f"max errs {', '.join(f'{k}={v:.1e}' for k, v in worst.items())}; {elapsed:.2f} s")
    assert ok


# 2 ---------------------------------------------------------------------------

def euler_reference(s, v, a, dt, v_min, v_max, h=1e-4):
    """Forward stepping at h with per-substep velocity clipping; the
    position uses the substep's mean velocity."""
    n = np.ceil(dt / h).astype(int)
    hh = dt / n
    for k in range(int(n.max())):
        live = k < n
        v_new = np.clip(v + a * hh, v_min, v_max)
        s = np.where(live, s + 0.5 * (v + v_new) * hh, s)
        v = np.where(live, v_new, v)
    return s, v


def test_criterion_02_kinematics(verdict):
    rng = np.random.default_rng(11)
    n = 10_000
    s0 = rng.uniform(-20.0, 40.0, n)
    v0 = rng.uniform(-1.0, 15.0, n)
    a = rng.integers(-4, 5, n).astype(float)
    dt = np.full(n, 1.0)
    start = time.perf_counter()
    got = np.array([step_kinematics(*args, -1.0, 15.0) for args in zip(s0, v0, a, dt)])
    ref_s, ref_v = euler_reference(s0, v0, a, dt, -1.0, 15.0)
    elapsed = time.perf_counter() - start
    clamps = int(np.sum((v0 + a < -1.0) | (v0 + a > 15.0)))
    err = float(np.max(np.abs(got[:, 0] - ref_s)))
    ok = err < 1e-6 and float(np.max(np.abs(got[:, 1] - ref_v))) < 1e-9 and clamps > 500 and elapsed < 10.0
    verdict(2, ok, f"max |ds| {err:.2e} m over {n} cases ({clamps} clamp activations); {elapsed:.2f} s")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_03_reward(verdict):
    failures = []
    for row in range(len(REWARD_TABLE)):
        try:
            check_reward_row(row)
        except AssertionError as exc:
            failures.append((row, str(exc)))
    ok = len(REWARD_TABLE) == 20 and not failures
    verdict(3, ok, f"{len(REWARD_TABLE) - len(failures)}/{len(REWARD_TABLE)} states exact")
    assert ok, failures


# 4 ---------------------------------------------------------------------------

def test_criterion_04_belief(verdict):
    cfg = ScenarioConfig.from_dict({"geometry": {"oncoming_turn_radius_m": 5.0}})
    model = build_world(cfg)
    sigma = model.cfg.obs_sigma
    worst = 0.0
    for case in range(50):
        rng = random.Random(1000 + case)
        truth = INTENTIONS[case % 3]
        v = rng.uniform(4.0, 10.0)
        onc_s = rng.uniform(5.0, 25.0)
        steps = rng.randint(2, 6)
        noise = rng.uniform(0.1, 0.5)
        belief = initial_belief(VehicleState(-5.0, 6.0, UNCOMMITTED), [(onc_s, v)], 300)
        obs, hyp = [], [[] for _ in INTENTIONS]
        for t in range(1, steps + 1):
            s = onc_s + v * t
            for i, name in enumerate(INTENTIONS):
                hyp[i].append(model.vehicle_pose(VehicleState(s, v, name))[:2])
            x, y = hyp[INTENTIONS.index(truth)][-1]
            obs.append((x + rng.gauss(0, noise), y + rng.gauss(0, noise)))
            belief = update_belief(belief, Action(0, False), ((obs[-1][0], obs[-1][1], v),), model, cfg.solver, rng)
            exact = exact_intention_posterior(obs, [hp[:t] for hp in hyp], sigma)
            got = belief.intention_probabilities()
            worst = max(worst, max(abs(got[n] - exact[i]) for i, n in enumerate(INTENTIONS)))
    # pre-divergence: the belief must stay exactly uniform
    div = divergence_s(list(model.routes.values()))
    belief = initial_belief(VehicleState(-5.0, 6.0, UNCOMMITTED), [(0.0, 8.0)], 300)
    rng = random.Random(7)
    uniform = True
    s = 0.0
    while s + 8.0 < div:
        s += 8.0
        x, y, _ = model.vehicle_pose(VehicleState(s, 8.0, "left"))
        belief = update_belief(belief, Action(0, False), ((x + 0.3, y - 0.2, 8.0),), model, cfg.solver, rng)
        p = belief.intention_probabilities()
        uniform &= p["left"] == p["straight"] == p["right"]
    ok = worst < 1e-6 and uniform
    verdict(4, ok, f"max |p - exact| {worst:.2e} over 50 sequences; pre-divergence uniform: {uniform}")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_05_safety(scenarios, verdict):
    start = time.perf_counter()
    bad, outcomes = [], Counter()
    for name in SCENARIOS:
        cfg, rows = episodes(scenarios, name)
        for r in rows:
            outcomes[r.outcome] += 1
            if r.result is None or not safety_trace(r.result.logs, cfg.model.dist_safe).passed:
                bad.append((name, r.seed, r.outcome))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 600.0
    verdict(5, ok, f"{3 * len(SAFETY_SEEDS) - len(bad)}/{3 * len(SAFETY_SEEDS)} episodes safe; "
                   f"outcomes {dict(outcomes)}; {elapsed:.0f} s")
    assert ok, bad[:10]


# 6 ---------------------------------------------------------------------------

def test_criterion_06_commute(scenarios, verdict):
    cfg, rows = episodes(scenarios, "straight_blocker")
    base = run_batch(cfg, COMMUTE_SEEDS, baseline=True)
    reports = []
    for c, b in zip(rows[: len(COMMUTE_SEEDS)], base):
        assert c.seed == b.seed
        try:
            reports.append(compare_commute(c.result, b.result))
        except MetricsError:
            reports.append(None)
    done = [r for r in reports if r is not None]
    n = len(COMMUTE_SEEDS)
    ctp_mean = sum(r.ctp_clear_time for r in done) / max(len(done), 1)
    base_mean = sum(r.baseline_clear_time for r in done) / max(len(done), 1)
    stop_rate = sum(r.baseline_full_stop for r in done) / n
    creep_rate = sum(r.ctp_min_speed > 0 for r in done) / n
    ok = (len(done) == n and ctp_mean < base_mean and base_mean - ctp_mean >= 1.0
          and stop_rate >= 0.8 and creep_rate >= 0.8)
    verdict(6, ok, f"clear time ctp {ctp_mean:.2f} s vs baseline {base_mean:.2f} s "
                   f"(advantage {base_mean - ctp_mean:.2f} s); baseline full stop {stop_rate:.0%}; "
                   f"ctp min speed > 0 {creep_rate:.0%}")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_07_path_choice(scenarios, verdict):
    parts, ok = [], True
    for name in SCENARIOS:
        _, rows = episodes(scenarios, name)
        counts = Counter(r.ctp for r in rows[: len(BEHAVIOUR_SEEDS)])
        modal, hits = counts.most_common(1)[0]
        good = modal == EXPECTED_CTP[name] and hits / len(BEHAVIOUR_SEEDS) >= 0.6
        ok &= good
        parts.append(f"{name} modal {modal} ({hits}/{len(BEHAVIOUR_SEEDS)}, want {EXPECTED_CTP[name]})")
    verdict(7, ok, "; ".join(parts))
    assert ok


# 8 ---------------------------------------------------------------------------

def _coupled(name, logs):
    tr = belief_action_trace(logs)
    if name == "straight_blocker":
        return tr.certain_intention == "straight" and tr.braked_near_certainty(2)
    before, after = tr.mean_av(before=True), tr.mean_av(before=False)
    return tr.certain_intention == "right" and before is not None and after is not None and after > before


def test_criterion_08_belief_action_coupling(scenarios, verdict):
    parts, ok = [], True
    for name in SCENARIOS:
        _, rows = episodes(scenarios, name)
        hits = sum(r.result is not None and _coupled(name, r.result.logs) for r in rows[: len(BEHAVIOUR_SEEDS)])
        good = hits / len(BEHAVIOUR_SEEDS) >= 0.8
        ok &= good
        parts.append(f"{name} {hits}/{len(BEHAVIOUR_SEEDS)}")
    verdict(8, ok, "; ".join(parts))
    assert ok


# 9 ---------------------------------------------------------------------------

def test_criterion_09_latency(scenarios, verdict):
    lat = [l.latency_ms for name in SCENARIOS for r in episodes(scenarios, name)[1]
           if r.result is not None for l in r.result.logs if l.action is not None]
    worst, mean = max(lat), sum(lat) / len(lat)
    ok = worst <= 100.0
    verdict(9, ok, f"per-step latency max {worst:.1f} ms, mean {mean:.1f} ms over {len(lat)} steps")
    assert ok


# 10 --------------------------------------------------------------------------

def test_criterion_10_ctp_validation(verdict):
    corpus = synthetic_corpus(n=200, sigma=0.3, zone_length=20.0, ratios=(0.25, 0.5, 0.75), seed=0)
    points = [tp for tp in (detect_turn_points(r) for r in corpus) if tp is not None]
    rep = cluster_turn_points(points, k=3, seed=0)
    spacing = 5.0
    dev = max(abs(g - spacing) / spacing for g in rep.gaps)
    iso = validate_isometry(rep, 0.2)
    ok = len(rep.centroids) == 3 and dev < 0.1 and iso
    verdict(10, ok, f"{len(points)} turn points; gaps {[round(g, 3) for g in rep.gaps]} m "
                    f"(max deviation {dev:.1%}); isometry score {rep.isometry_score:.3f}")
    assert ok


# 11 --------------------------------------------------------------------------

def _outputs(root: Path) -> dict[str, bytes]:
    skip = {"manifest.json", "timing.json"}
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in skip}


def test_criterion_11_determinism(scenarios, tmp_path, verdict):
    sc = str(scenarios / "straight_blocker.yaml")
    commands = {
        "run": ["run", sc, "--seed", "3"],
        "run-baseline": ["run", sc, "--seed", "3", "--baseline"],
        "compare": ["compare", sc, "--seed-list", "0,1"],
        "batch": ["batch", sc, str(scenarios / "right_fast.yaml"), "--seeds", "2", "--save-logs"],
        "validate-ctp": ["validate-ctp", "--generate", "60"],
        "dump-paths": ["dump-paths", sc, "--baseline"],
    }
    mismatched = []
    for label, argv in commands.items():
        outs = []
        for rep in ("a", "b"):
            target = tmp_path / rep / label
            target.mkdir(parents=True)
            out = target / "paths.csv" if label == "dump-paths" else target
            assert main([*argv, "--out", str(out)]) == 0
            outs.append(_outputs(target))
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(label)
    ok = not mismatched
    verdict(11, ok, f"{len(commands) - len(mismatched)}/{len(commands)} commands byte-identical"
                    + (f"; differing: {mismatched}" if mismatched else ""))
    assert ok
