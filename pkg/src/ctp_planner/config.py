"""Scenario configuration: defaults, YAML loading and canonical hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .geometry import INTENTIONS, OncomingLayout
from .model import ModelConfig
from .solver import SolverConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "name": "default",
    "seed": 0,
    "max_steps": 60,
    "geometry": {
        "zone_length_m": 20.0,
        "ctp_ratios": [0.25, 0.5, 0.75],
        "oncoming_turn_radius_m": None,
        "oncoming_lane_offset_m": 3.5,
        "approach_length_m": 40.0,
    },
    "model": {
        "dt_s": 1.0,
        "gamma": 0.95,
        "v_ref_mps": 5.0,
        "dist_safe_m": 2.5,
        "obs_sigma_m": 0.5,
        "v_min_mps": -1.0,
        "v_max_mps": 15.0,
        "likelihood": "kernel",
        "collision_substeps": 4,
    },
    "solver": {
        "num_sims": 300,
        "ucb_c": 0.7,
        "max_depth": 20,
        "particles": 500,
        "seed": None,
        "time_budget_ms": None,
        "rollout_policy": "yield",
        "obs_key_resolution": [1.0, 1.0],
        "widening_k": 1.0,
        "widening_alpha": 0.5,
    },
    "ego": {"start_s_m": -5.0, "start_v_mps": 8.0},
    "oncoming": [{"intention": "straight", "start_s_m": 10.0, "speed_mps": 8.0}],
}


def default_config() -> dict[str, Any]:
    return copy.deepcopy(DEFAULTS)


def merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursive dict merge; lists and scalars in ``override`` replace."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class OncomingSpec:
    intention: str
    start_s: float
    speed: float


@dataclass(frozen=True)
class ScenarioConfig:
    raw: dict[str, Any] = field(repr=False)
    name: str
    seed: int
    max_steps: int
    zone_length: float
    ctp_ratios: tuple[float, ...]
    layout: OncomingLayout
    model: ModelConfig
    solver: SolverConfig
    ego_start_s: float
    ego_start_v: float
    oncoming: tuple[OncomingSpec, ...]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        raw = merge(DEFAULTS, data)
        try:
            g, m, s, e = raw["geometry"], raw["model"], raw["solver"], raw["ego"]
            for section, given in (("geometry", g), ("model", m), ("solver", s), ("ego", e)):
                extra = set(given) - set(DEFAULTS[section])
                if extra:
                    raise ConfigError(f"unknown keys in {section}: {sorted(extra)}")
            seed = int(raw["seed"])
            model = ModelConfig(
                dt=float(m["dt_s"]), gamma=float(m["gamma"]), v_ref=float(m["v_ref_mps"]),
                dist_safe=float(m["dist_safe_m"]), v_min=float(m["v_min_mps"]),
                v_max=float(m["v_max_mps"]), obs_sigma=float(m["obs_sigma_m"]),
                likelihood=str(m["likelihood"]), collision_substeps=int(m["collision_substeps"]),
            )
            solver = SolverConfig(
                num_sims_per_step=int(s["num_sims"]), ucb_c=float(s["ucb_c"]),
                max_depth=int(s["max_depth"]), rollout_policy=str(s["rollout_policy"]),
                obs_key_resolution=tuple(float(x) for x in s["obs_key_resolution"]),
                rng_seed=seed if s["seed"] is None else int(s["seed"]),
                time_budget_ms=None if s["time_budget_ms"] is None else float(s["time_budget_ms"]),
                particles=int(s["particles"]),
                widening_k=None if s["widening_k"] is None else float(s["widening_k"]),
                widening_alpha=float(s["widening_alpha"]),
            )
            radius = g["oncoming_turn_radius_m"]
            layout = OncomingLayout(
                lane_offset=float(g["oncoming_lane_offset_m"]),
                approach_length=float(g["approach_length_m"]),
                turn_radius=None if radius is None else float(radius),
            )
            oncoming = []
            for o in raw["oncoming"]:
                spec = OncomingSpec(str(o["intention"]), float(o["start_s_m"]), float(o["speed_mps"]))
                if spec.intention not in INTENTIONS:
                    raise ConfigError(f"unknown intention {spec.intention!r}")
                if spec.speed < 0:
                    raise ConfigError("oncoming speeds must be >= 0")
                oncoming.append(spec)
            max_steps = int(raw["max_steps"])
            if max_steps < 1:
                raise ConfigError("max_steps must be >= 1")
            if float(g["zone_length_m"]) <= 0:
                raise ConfigError("zone_length_m must be > 0")
            return cls(
                raw=raw, name=str(raw["name"]), seed=seed, max_steps=max_steps,
                zone_length=float(g["zone_length_m"]),
                ctp_ratios=tuple(float(c) for c in g["ctp_ratios"]),
                layout=layout, model=model, solver=solver,
                ego_start_s=float(e["start_s_m"]), ego_start_v=float(e["start_v_mps"]),
                oncoming=tuple(oncoming),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario config: {exc}") from exc

    def with_overrides(self, override: dict[str, Any]) -> "ScenarioConfig":
        return ScenarioConfig.from_dict(merge(self.raw, override))

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self.raw)

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse scenario file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"scenario file {path} must hold a mapping")
    return ScenarioConfig.from_dict(data)


def dump_default_config() -> str:
    return yaml.safe_dump(default_config(), sort_keys=False)
