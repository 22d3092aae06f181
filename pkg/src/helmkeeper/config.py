"""Project configuration: one JSON document, schema-validated, unknown keys rejected."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import jsonschema

from .benchmark import CONTROLLERS, Scenario, standard_scenarios
from .guidance import ControllerGains
from .mpc import GoalWeights, MpcConfig
from .sysid import TrainConfig
from .vessel import VesselParams

SEED_ENV = "HELMKEEPER_SEED"


def _number_object(names, minimum=None, exclusive=False) -> dict:
    num = {"type": "number"}
    if minimum is not None:
        num["exclusiveMinimum" if exclusive else "minimum"] = minimum
    return {"type": "object", "properties": {n: num for n in names}, "additionalProperties": False}


def _triple(positive=True) -> dict:
    item = {"type": "number", "exclusiveMinimum": 0} if positive else {"type": "number"}
    return {"type": "array", "items": item, "minItems": 3, "maxItems": 3}


_WEIGHTS = _number_object([f.name for f in fields(GoalWeights)], minimum=0)
_POSE = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "start": _POSE,
        "goal": _POSE,
        "wind_speed": {"type": "number", "minimum": 0},
        "wind_dir": {"type": "number"},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "gust": {"oneOf": [{"type": "null"}, _number_object(["tau_s", "sigma_speed", "sigma_dir"], 0)]},
        "noise": {"oneOf": [{"type": "null"}, _number_object(["pos_std", "psi_std", "vel_std"], 0)]},
        "seed": {"type": "integer"},
    },
    "required": ["name"],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "vessel": _number_object([f.name for f in fields(VesselParams)]),
        "collect": {
            "type": "object",
            "properties": {
                "winds": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["nnsem", "sd", "hybrid"]},
                "batch_size": {"type": "integer", "minimum": 1},
                "window": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "holdout_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "eval_horizon_s": {"type": "number", "exclusiveMinimum": 0},
                "prior_perturbation": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        "mpc": {
            "type": "object",
            "properties": {
                "horizon_steps": {"type": "integer", "minimum": 2},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "lqr_iters": {"type": "integer", "minimum": 1},
                "du_penalty": {"type": "number", "minimum": 0},
                "u_min": {"type": "number"},
                "u_max": {"type": "number"},
                "weights_position_mode": _WEIGHTS,
                "weights_heading_mode": _WEIGHTS,
            },
            "additionalProperties": False,
        },
        "gains": {
            "type": "object",
            "properties": {
                **{k: _triple() for k in ("lam", "kp", "kd", "U", "E")},
                **{k: {"type": "number", "exclusiveMinimum": 0} for k in (
                    "lookahead", "ilos_kappa", "cruise_speed", "track_surge_gain",
                    "track_heading_gain", "track_rate_gain")},
            },
            "additionalProperties": False,
        },
        "radii": _number_object(["R_S", "R_D", "R_H", "turn_radius"], 0, exclusive=True),
        "scenarios": {
            "oneOf": [{"const": "standard"}, {"type": "array", "items": SCENARIO_SCHEMA, "minItems": 1}],
        },
        "bench": {
            "type": "object",
            "properties": {
                "controllers": {"type": "array", "items": {"enum": list(CONTROLLERS)}, "minItems": 2},
                "seeds": {"type": "integer", "minimum": 1},
                "jobs": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "seed": {"type": ["integer", "null"]},
    },
    "additionalProperties": False,
}


_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}
_MAE = {"type": "object", "properties": {k: _NUM for k in "uvr"}, "required": list("uvr"), "additionalProperties": False}
_METRICS = {
    "type": "object",
    "properties": {
        **{k: _NUM for k in ("e_d", "s_d", "e_h", "s_h", "ps")},
        "windows": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}},
        "mean_solve_ms": _NUM_OR_NULL,
    },
    "required": ["e_d", "s_d", "e_h", "s_h", "ps", "windows", "mean_solve_ms"],
    "additionalProperties": False,
}

# documents the CLI writes; each is validated before it reaches disk
ARTIFACT_SCHEMAS = {
    "manifest": {
        "type": "object",
        "properties": {
            "seed": {"type": "integer"},
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "files": {"type": "array", "minItems": 1, "items": {
                "type": "object",
                "properties": {
                    "file": {"type": "string"},
                    "wind": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                    "duration_s": _NUM, "rows": {"type": "integer"}, "seed": {"type": "integer"},
                },
                "required": ["file", "wind", "duration_s", "rows", "seed"],
                "additionalProperties": False,
            }},
        },
        "required": ["seed", "dt", "files"],
        "additionalProperties": False,
    },
    "train_report": {
        "type": "object",
        "properties": {
            "kind": {"enum": ["nnsem", "sd", "hybrid"]},
            "epochs": {"type": "integer", "minimum": 0},
            "losses": {"type": "array", "items": _NUM},
            "final_loss": _NUM_OR_NULL,
            "holdout_loss": _NUM_OR_NULL,
            "prior_holdout_loss": _NUM_OR_NULL,
            "mae": _MAE,
        },
        "required": ["kind", "epochs", "losses", "final_loss", "mae"],
        "additionalProperties": False,
    },
    "eval": {
        "type": "object",
        "properties": {"model": {"type": "string"}, "kind": {"enum": ["nnsem", "sd", "hybrid"]}, "mae": _MAE},
        "required": ["model", "kind", "mae"],
        "additionalProperties": False,
    },
    "run_report": {
        "type": "object",
        "properties": {
            "scenario": {"type": "string"}, "controller": {"type": "string"}, "seed": {"type": "integer"},
            "failed": {"type": "boolean"}, "message": {"type": "string"}, "metrics": _METRICS,
        },
        "required": ["scenario", "controller", "seed", "failed", "message"],
        "additionalProperties": False,
    },
    "comparison": {
        "type": "object",
        "properties": {
            "seeds": {"type": "array", "items": {"type": "integer"}},
            "rows": {"type": "array", "items": {
                "type": "object",
                "properties": {
                    "scenario": {"type": "string"}, "controller": {"type": "string"},
                    **{k: _NUM for k in ("e_d", "s_d", "e_h", "s_h", "ps")},
                    "ps_per_seed": {"type": "array", "items": _NUM_OR_NULL},
                    "mean_solve_ms": _NUM_OR_NULL,
                    "failures": {"type": "array", "items": {"type": "string"}},
                },
                "required": ["scenario", "controller", "e_d", "s_d", "e_h", "s_h", "ps", "ps_per_seed",
                             "mean_solve_ms", "failures"],
                "additionalProperties": False,
            }},
            "winners": {"type": "object", "additionalProperties": {"type": "string"}},
            "counts": {"type": "object", "additionalProperties": {"type": "integer"}},
        },
        "required": ["seeds", "rows", "winners", "counts"],
        "additionalProperties": False,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ProjectConfig:
    vessel: VesselParams = field(default_factory=VesselParams)
    winds: list = field(default_factory=lambda: [[6.0, 0.7], [3.0, -2.0]])
    train: TrainConfig = field(default_factory=TrainConfig)
    kind: str = "nnsem"
    hidden: int = 12
    prior_perturbation: float = 0.2
    mpc: MpcConfig = field(default_factory=MpcConfig)
    gains: ControllerGains = field(default_factory=ControllerGains)
    radii: dict = field(default_factory=lambda: {"R_S": 15.0, "R_D": 20.0, "R_H": 10.0, "turn_radius": 5.0})
    scenarios: object = "standard"
    controllers: list = field(default_factory=lambda: list(CONTROLLERS))
    seeds: int = 5
    jobs: int = 1
    output_dir: str = "out"
    seed: Optional[int] = None

    def scenario_list(self) -> list:
        if self.scenarios == "standard":
            return standard_scenarios()
        return [Scenario.from_dict(s) for s in self.scenarios]

    def scenario(self, name: str) -> Scenario:
        for s in self.scenario_list():
            if s.name == name:
                return s
        raise ConfigError(f"unknown scenario {name!r}")

    def to_dict(self) -> dict:
        t = asdict(self.train)
        t.pop("seed")
        t.pop("dt")
        return {
            "vessel": self.vessel.to_dict(),
            "collect": {"winds": [list(map(float, w)) for w in self.winds]},
            "train": {"kind": self.kind, "hidden": self.hidden, "prior_perturbation": self.prior_perturbation, **t},
            "mpc": self.mpc.to_dict(),
            "gains": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.gains).items()},
            "radii": dict(self.radii),
            "scenarios": self.scenarios if self.scenarios == "standard" else list(self.scenarios),
            "bench": {"controllers": list(self.controllers), "seeds": self.seeds, "jobs": self.jobs},
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectConfig":
        validate(d)
        cfg = cls()
        try:
            if "vessel" in d:
                cfg.vessel = VesselParams.from_dict({**cfg.vessel.to_dict(), **d["vessel"]})
            if "collect" in d and "winds" in d["collect"]:
                cfg.winds = [list(w) for w in d["collect"]["winds"]]
            if "train" in d:
                t = dict(d["train"])
                cfg.kind = t.pop("kind", cfg.kind)
                cfg.hidden = t.pop("hidden", cfg.hidden)
                cfg.prior_perturbation = t.pop("prior_perturbation", cfg.prior_perturbation)
                cfg.train = TrainConfig(**{**asdict(cfg.train), **t})
            if "mpc" in d:
                cfg.mpc = MpcConfig.from_dict({**cfg.mpc.to_dict(), **d["mpc"]})
            if "gains" in d:
                cfg.gains = ControllerGains.from_dict({**asdict(cfg.gains), **d["gains"]})
            if "radii" in d:
                cfg.radii = {**cfg.radii, **d["radii"]}
            if "scenarios" in d:
                cfg.scenarios = d["scenarios"]
                cfg.scenario_list()
            b = d.get("bench", {})
            cfg.controllers = list(b.get("controllers", cfg.controllers))
            cfg.seeds = b.get("seeds", cfg.seeds)
            cfg.jobs = b.get("jobs", cfg.jobs)
            cfg.output_dir = d.get("output_dir", cfg.output_dir)
            cfg.seed = d.get("seed", cfg.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        r = cfg.radii
        if not (0 < r["R_H"] <= r["R_S"] < r["R_D"]):
            raise ConfigError("radii must satisfy 0 < R_H <= R_S < R_D")
        return cfg

    def resolved_seed(self, flag: Optional[int] = None) -> int:
        """Flag, then the config's own seed, then the environment, then 0."""
        if flag is not None:
            return int(flag)
        if self.seed is not None:
            return int(self.seed)
        env = os.environ.get(SEED_ENV)
        if env not in (None, ""):
            try:
                return int(env)
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
        return 0


def validate(d: dict) -> None:
    try:
        jsonschema.validate(d, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc


def validate_artifact(kind: str, doc: dict) -> None:
    try:
        jsonschema.validate(doc, ARTIFACT_SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"{kind} document invalid at {where}: {exc.message}") from exc


def load_config(path) -> ProjectConfig:
    if path is None:
        return ProjectConfig()
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not JSON ({exc})") from exc
    return ProjectConfig.from_dict(d)
