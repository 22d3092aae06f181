"""Command-line entry point: collect, train, eval-model, run, bench.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .config import ConfigError, ProjectConfig, load_config, validate_artifact
from .models import HybridModel, MlpModel, SDModel, load_model, save_model
from .sysid import (Dataset, DatasetTooShort, TrainConfig, TrainingDiverged, evaluate_mae, generate_maneuvers,
                    holdout_loss, holdout_split, train)
from .vessel import Wind

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
MODEL_FILES = {"nnsem": "nnsem.json", "sd": "sd.json", "hybrid": "hybrid.json"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj, path: Path, kind: str) -> None:
    validate_artifact(kind, obj)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _out_dir(args, cfg: ProjectConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"{out}: cannot create output directory ({exc.strerror})") from exc
    return out


# ---------------------------------------------------------------- datasets

def load_datasets(path) -> Dataset:
    """A dataset CSV, or a manifest JSON whose files are concatenated in order."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such dataset")
    if path.suffix == ".json":
        manifest = json.loads(path.read_text(encoding="utf-8"))
        parts = [Dataset.from_csv(path.parent / f["file"]) for f in manifest["files"]]
        return _concat(parts, manifest)
    return Dataset.from_csv(path)


def _concat(parts, manifest) -> Dataset:
    offset_t, offset_seg = 0.0, 0
    cols = {k: [] for k in ("t", "vel", "cmd", "wind_body", "pose", "segment_id")}
    segments = []
    for ci, d in enumerate(parts):
        cols["t"].append(d.t - d.t[0] + offset_t)
        for k in ("vel", "cmd", "wind_body", "pose"):
            cols[k].append(getattr(d, k))
        seg = d.segment_id - d.segment_id.min() + offset_seg
        cols["segment_id"].append(seg)
        segments += [{"id": int(s), "label": "", "condition": ci} for s in np.unique(seg)]
        offset_t = cols["t"][-1][-1] + d.dt
        offset_seg = int(seg.max()) + 1
    meta = {"winds": [f["wind"] for f in manifest["files"]], "segments": segments, "seed": manifest.get("seed")}
    return Dataset(*(np.concatenate(cols[k]) for k in ("t", "vel", "cmd", "wind_body", "pose", "segment_id")),
                   meta, parts[0].dt)


def cmd_collect(cfg: ProjectConfig, out: Path, seed: int) -> dict:
    files = []
    for i, (speed, direction) in enumerate(cfg.winds):
        wind = Wind(speed, direction)
        d = generate_maneuvers(cfg.vessel, [wind], seed=seed + i)
        name = f"data_{i}.csv"
        d.to_csv(out / name)
        files.append({"file": name, "wind": [float(speed), float(direction)], "duration_s": d.duration,
                      "rows": len(d), "seed": seed + i})
    manifest = {"seed": seed, "dt": 0.2, "files": files}
    _dump(manifest, out / "manifest.json", "manifest")
    return manifest


# ------------------------------------------------------------------ models

def build_model(kind: str, cfg: ProjectConfig, seed: int):
    prior = cfg.vessel.perturbed(cfg.prior_perturbation, seed)
    if kind == "sd":
        return SDModel(prior)
    mlp = MlpModel.init(n_h=cfg.hidden, seed=seed)
    return mlp if kind == "nnsem" else HybridModel(prior, mlp)


def cmd_train(cfg: ProjectConfig, data: Dataset, out: Path, seed: int, kind: str) -> dict:
    model = build_model(kind, cfg, seed)
    tcfg = TrainConfig(**{**cfg.train.__dict__, "seed": seed})
    _, test_d = holdout_split(data, tcfg.holdout_fraction)
    if kind == "sd":
        mae = evaluate_mae(model, test_d, tcfg.eval_horizon_s)
        report = {"kind": kind, "epochs": 0, "losses": [], "final_loss": None,
                  "mae": {"u": mae[0], "v": mae[1], "r": mae[2]}}
    else:
        model, rep = train(model, data, tcfg)
        report = {"kind": kind, "epochs": tcfg.epochs, **rep.to_dict()}
        report.pop("wall_time_s")
        if kind == "hybrid":
            report["prior_holdout_loss"] = holdout_loss(SDModel(model.prior), test_d, tcfg.window, tcfg.dt)
    save_model(model, out / MODEL_FILES[kind])
    _dump(report, out / f"train_report_{kind}.json", "train_report")
    return report


def load_models(model_dir) -> dict:
    model_dir = Path(model_dir)
    models = {}
    for kind, name in MODEL_FILES.items():
        path = model_dir / name
        if path.exists():
            try:
                models[kind] = load_model(path)
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ConfigError(f"{path}: invalid model file ({exc})") from exc
    if not models:
        raise ConfigError(f"{model_dir}: no model files ({', '.join(MODEL_FILES.values())})")
    return models


# --------------------------------------------------------------- plotting

def plot_data(log: bm.RunLog, goal, out: Path, stem: str) -> None:
    """Gnuplot-ready columns: trajectory with heading quivers, plus the docking sector outline."""
    every = max(1, int(round(2.0 / (log.t[1] - log.t[0])))) if len(log) > 1 else 1
    lines = ["# t x y psi dx dy"]
    for k in range(len(log)):
        x, y, psi = log.pose[k]
        q = 1.0 if k % every == 0 else 0.0
        lines.append(f"{log.t[k]:.3f} {x:.6f} {y:.6f} {psi:.6f} {q * math.cos(psi):.6f} {q * math.sin(psi):.6f}")
    (out / f"{stem}_traj.dat").write_text("\n".join(lines) + "\n", encoding="utf-8")
    gx, gy, gpsi = goal
    pts = [(gx, gy)]
    for a in np.linspace(gpsi - bm.DOCK_HALF_ANGLE, gpsi + bm.DOCK_HALF_ANGLE, 21):
        pts.append((gx + bm.DOCK_RADIUS * math.cos(a), gy + bm.DOCK_RADIUS * math.sin(a)))
    pts.append((gx, gy))
    (out / f"{stem}_sector.dat").write_text("# x y\n" + "".join(f"{x:.6f} {y:.6f}\n" for x, y in pts), encoding="utf-8")
    # x is north and y east, so east goes on the horizontal axis
    script = (
        "set size ratio -1\nset xlabel 'east y [m]'\nset ylabel 'north x [m]'\n"
        f"plot '{stem}_sector.dat' using 2:1 with lines title 'docking sector', \\\n"
        f"     '{stem}_traj.dat' using 3:2 with lines title 'path', \\\n"
        f"     '{stem}_traj.dat' using 3:2:6:5 every {every} with vectors title 'heading'\n"
    )
    (out / f"{stem}.gp").write_text(script, encoding="utf-8")


def cmd_run(cfg: ProjectConfig, models: dict, scenario: bm.Scenario, controller: str, out: Path, seed: int):
    log = bm.run(scenario, controller, models, seed, cfg.vessel, cfg.mpc, cfg.gains, cfg.radii)
    stem = f"{scenario.name}_{controller}_s{seed}"
    log.to_csv(out / f"{stem}.csv")
    report = {"scenario": scenario.name, "controller": controller, "seed": seed, "failed": log.failed,
              "message": log.message}
    if len(log) and log.t[-1] - log.t[0] >= bm.SETTLE_S:
        report["metrics"] = bm.metrics(log, scenario.goal).to_dict()
    _dump(report, out / f"{stem}_metrics.json", "run_report")
    if len(log):
        plot_data(log, scenario.goal, out, stem)
    return log, report


def cmd_bench(cfg: ProjectConfig, models: dict, out: Path, seed: int, jobs: int) -> bm.Comparison:
    log_dir = out / "logs"
    log_dir.mkdir(exist_ok=True)
    seeds = [seed + k for k in range(cfg.seeds)]
    comp = bm.compare(cfg.scenario_list(), cfg.controllers, seeds, models, cfg.vessel, cfg.mpc, cfg.gains,
                      jobs=jobs, radii=cfg.radii, log_dir=log_dir)
    _dump({"seeds": seeds, **comp.to_dict()}, out / "comparison.json", "comparison")
    (out / "comparison.txt").write_text(comp.table(), encoding="utf-8")
    return comp


# --------------------------------------------------------------------- main

def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="helmkeeper", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="project config JSON (defaults apply when omitted)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out", help="output directory (config output_dir otherwise)")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("collect", help="simulate maneuver datasets, one CSV per wind condition")
    common(sp)
    sp = sub.add_parser("train", help="train a model on collected data")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset CSV or manifest JSON")
    sp.add_argument("--kind", choices=sorted(MODEL_FILES))
    sp.add_argument("--epochs", type=int)
    sp = sub.add_parser("eval-model", help="held-out rollout MAE of a model file")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--horizon", type=float)
    sp = sub.add_parser("run", help="one closed-loop run")
    common(sp)
    sp.add_argument("--models", required=True, help="directory holding nnsem.json / sd.json / hybrid.json")
    sp.add_argument("--controller", default="NNSEM-MPC", type=_controller)
    sp.add_argument("--scenario", default="test1")
    sp = sub.add_parser("bench", help="scenario x controller x seed grid")
    common(sp)
    sp.add_argument("--models", required=True)
    sp.add_argument("--controller", action="append", type=_controller,
                    help="restrict to these controllers (repeatable)")
    sp.add_argument("--scenario", action="append", help="restrict to these scenarios (repeatable)")
    sp.add_argument("--jobs", type=int)
    return p


def _controller(name: str) -> str:
    aliases = {"backstep": "BACKSTEP", "sliding": "SLIDING", "nnsem": "NNSEM-MPC", "sd": "SD-MPC", "hybrid": "HYBRID-MPC"}
    name = aliases.get(name.lower(), name.upper())
    if name not in bm.CONTROLLERS:
        raise argparse.ArgumentTypeError(f"unknown controller {name!r}")
    return name


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        cfg = load_config(args.config)
        seed = cfg.resolved_seed(args.seed)
        if getattr(args, "epochs", None) is not None:
            if args.epochs < 1:
                raise ConfigError("--epochs must be positive")
            cfg.train = TrainConfig(**{**cfg.train.__dict__, "epochs": args.epochs})
        out = _out_dir(args, cfg)
        if args.command == "collect":
            manifest = cmd_collect(cfg, out, seed)
            for f in manifest["files"]:
                print(f"wrote {out / f['file']} ({f['duration_s']:.0f} s, wind {f['wind'][0]:g} m/s)")
            return EXIT_OK
        if args.command == "train":
            data = load_datasets(args.data)
            report = cmd_train(cfg, data, out, seed, args.kind or cfg.kind)
            m = report["mae"]
            print(f"holdout MAE u={m['u']:.4f} m/s v={m['v']:.4f} m/s r={m['r']:.4f} rad/s")
            return EXIT_OK
        if args.command == "eval-model":
            model = load_model(args.model)
            _, test_d = holdout_split(load_datasets(args.data), cfg.train.holdout_fraction)
            mae = evaluate_mae(model, test_d, args.horizon or cfg.train.eval_horizon_s)
            # the file name only, so the artifact does not depend on where the workspace lives
            report = {"model": Path(args.model).name, "kind": model.kind, "mae": {"u": mae[0], "v": mae[1], "r": mae[2]}}
            _dump(report, out / "eval.json", "eval")
            print(f"MAE u={mae[0]:.4f} m/s v={mae[1]:.4f} m/s r={mae[2]:.4f} rad/s")
            return EXIT_OK
        models = load_models(args.models)
        if args.command == "run":
            log, report = cmd_run(cfg, models, cfg.scenario(args.scenario), args.controller, out, seed)
            if log.failed:
                print(f"run failed: {log.message}", file=sys.stderr)
                return EXIT_RUNTIME
            m = report.get("metrics", {})
            print(f"{args.scenario} {args.controller}: e_d={m.get('e_d', float('nan')):.3f} m "
                  f"e_h={m.get('e_h', float('nan')):.3f} deg ps={m.get('ps', float('nan')):.3f}")
            return EXIT_OK
        if args.command == "bench":
            if args.controller:
                cfg.controllers = list(dict.fromkeys(args.controller))
            if args.scenario:
                cfg.scenarios = [cfg.scenario(n).to_dict() for n in args.scenario]
            comp = cmd_bench(cfg, models, out, seed, args.jobs or cfg.jobs)
            sys.stdout.write(comp.table())
            return EXIT_OK
    except (UsageError, ConfigError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, TrainingDiverged, DatasetTooShort, OSError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
