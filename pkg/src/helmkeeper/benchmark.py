"""Closed-loop scenarios, error statistics, docking windows and controller comparison."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .guidance import ControllerBundle, ControllerGains, initial_supervisor, supervisor_step
from .models import SDModel
from .mpc import MpcConfig, MpcError
from .vessel import CALM, Pose, SimState, BodyVelocity, VesselParams, Wind, step, wrap_angle

CONTROLLERS = ("NNSEM-MPC", "SD-MPC", "HYBRID-MPC", "BACKSTEP", "SLIDING")
_MPC_MODEL_KEY = {"NNSEM-MPC": "nnsem", "SD-MPC": "sd", "HYBRID-MPC": "hybrid"}
LOG_HEADER = ["t", "x", "y", "psi", "u", "v", "r", "pwm_p", "pwm_s", "mode", "wind_speed", "wind_dir", "solve_ms"]

DOCK_SPEED = 0.5
DOCK_RATE = math.radians(5.0)
DOCK_RADIUS = 15.0
DOCK_HALF_ANGLE = math.radians(20.0)
DOCK_MIN_S = 30.0
SETTLE_S = 20.0


@dataclass(frozen=True)
class GustModel:
    """Ornstein-Uhlenbeck perturbation of wind speed (m/s) and direction (rad)."""

    tau_s: float = 10.0
    sigma_speed: float = 0.5
    sigma_dir: float = 0.1


@dataclass(frozen=True)
class SensorNoise:
    pos_std: float = 0.0
    psi_std: float = 0.0
    vel_std: float = 0.0


@dataclass(frozen=True)
class Scenario:
    name: str
    start: tuple = (-14.0, -3.0, 0.5)
    goal: tuple = (0.0, 0.0, 0.0)
    wind_speed: float = 0.0
    wind_dir: float = 0.0
    duration: float = 120.0
    dt: float = 0.2
    gust: Optional[GustModel] = None
    noise: Optional[SensorNoise] = None
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("scenario duration and dt must be positive")
        if self.wind_speed < 0:
            raise ValueError("wind speed must be non-negative")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        for key in ("start", "goal"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("gust") is not None:
            d["gust"] = GustModel(**d["gust"])
        if d.get("noise") is not None:
            d["noise"] = SensorNoise(**d["noise"])
        return cls(**d)


def standard_scenarios(duration: float = 120.0) -> list:
    """Six wind tests: along (1, 2), against (3, 4), perpendicular (5, 6); odd 3 m/s, even 6 m/s.

    The wind direction is where the air flows toward, so "along" means the wind
    blows in the goal heading direction.
    """
    dirs = (0.0, 0.0, math.pi, math.pi, math.pi / 2, math.pi / 2)
    return [
        Scenario(name=f"test{i + 1}", wind_speed=3.0 if i % 2 == 0 else 6.0, wind_dir=d, duration=duration)
        for i, d in enumerate(dirs)
    ]


# ----------------------------------------------------------------- RunLog

@dataclass
class RunLog:
    t: np.ndarray
    pose: np.ndarray  # (N, 3)
    vel: np.ndarray  # (N, 3)
    cmd: np.ndarray  # (N, 2)
    mode: list
    wind: np.ndarray  # (N, 2) speed, direction
    solve_ms: np.ndarray  # NaN where no MPC ran
    failed: bool = False
    message: str = ""

    def __len__(self) -> int:
        return len(self.t)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for k in range(len(self)):
            sm = "" if np.isnan(self.solve_ms[k]) else repr(float(self.solve_ms[k]))
            w.writerow([repr(float(self.t[k])), *map(_r, self.pose[k]), *map(_r, self.vel[k]), *map(_r, self.cmd[k]),
                        self.mode[k], *map(_r, self.wind[k]), sm])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != LOG_HEADER:
            raise ValueError(f"{path}: not a run log (header mismatch)")
        body = rows[1:]
        num = lambda i: np.array([float(r[i]) for r in body])
        return cls(
            t=num(0),
            pose=np.column_stack([num(1), num(2), num(3)]) if body else np.zeros((0, 3)),
            vel=np.column_stack([num(4), num(5), num(6)]) if body else np.zeros((0, 3)),
            cmd=np.column_stack([num(7), num(8)]) if body else np.zeros((0, 2)),
            mode=[r[9] for r in body],
            wind=np.column_stack([num(10), num(11)]) if body else np.zeros((0, 2)),
            solve_ms=np.array([float(r[12]) if r[12] else np.nan for r in body]),
        )


def _r(x) -> str:
    return repr(float(x))


# -------------------------------------------------------------- simulate

def controller_bundle(controller: str, models: dict, mpc: MpcConfig, gains: ControllerGains,
                      design_params: VesselParams) -> ControllerBundle:
    if controller in _MPC_MODEL_KEY:
        key = _MPC_MODEL_KEY[controller]
        if key not in models:
            raise KeyError(f"{controller} needs a '{key}' model")
        return ControllerBundle("mpc", design_params, gains, models[key], mpc)
    if controller == "BACKSTEP":
        return ControllerBundle("backstep", design_params, gains)
    if controller == "SLIDING":
        return ControllerBundle("sliding", design_params, gains)
    raise ValueError(f"unknown controller {controller!r}; expected one of {CONTROLLERS}")


def design_params_from(models: dict, plant: VesselParams) -> VesselParams:
    """Parameters the model-based laws are designed with: the SD model's if given, else the plant's."""
    sd = models.get("sd")
    return sd.params if isinstance(sd, SDModel) else plant


def run(scenario: Scenario, controller: str, models: dict, seed: int = 0, plant: VesselParams = VesselParams(),
        mpc: MpcConfig = MpcConfig(), gains: ControllerGains = ControllerGains(), radii: Optional[dict] = None) -> RunLog:
    """Closed-loop simulation; the log row k holds the state at t_k and the command applied over [t_k, t_k+dt)."""
    rng = np.random.default_rng([seed, scenario.seed])
    bundle = controller_bundle(controller, models, mpc, gains, design_params_from(models, plant))
    goal = np.asarray(scenario.goal, dtype=float)
    state = SimState(Pose(*scenario.start).wrapped(), BodyVelocity(0.0, 0.0, 0.0), 0.0)
    sup = initial_supervisor(state.pose, goal, **(radii or {}))
    n, dt = scenario.steps, scenario.dt
    t = np.zeros(n)
    pose = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    cmd = np.zeros((n, 2))
    wind = np.zeros((n, 2))
    solve_ms = np.full(n, np.nan)
    modes = []
    speed, direction = scenario.wind_speed, scenario.wind_dir
    failed, message = False, ""
    for k in range(n):
        w = Wind(max(speed, 0.0), direction)
        meas_pose, meas_vel = np.array(state.pose), np.array(state.vel)
        if scenario.noise is not None:
            nz = scenario.noise
            meas_pose = meas_pose + rng.normal(0.0, [nz.pos_std, nz.pos_std, nz.psi_std])
            meas_vel = meas_vel + rng.normal(0.0, nz.vel_std, 3)
        try:
            c, sup = supervisor_step(sup, meas_pose, meas_vel, goal, bundle, w, dt)
            if not np.all(np.isfinite(c)):
                raise MpcError("non-finite command")
        except (MpcError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failed, message = True, f"controller failure at t={state.t:.1f}: {exc}"
            n = k
            break
        t[k], pose[k], vel[k], cmd[k], wind[k] = state.t, state.pose, state.vel, c, (w.speed, w.direction)
        modes.append(sup.mode if sup.mode == "TRACKING" else bundle.sk_label)
        if sup.last_solve_time is not None:
            solve_ms[k] = 1e3 * sup.last_solve_time
        state = step(plant, state, c, w, dt)
        if not np.all(np.isfinite(np.r_[state.pose, state.vel])):
            failed, message = True, f"plant state diverged at t={state.t:.1f}"
            n = k + 1
            break
        if scenario.gust is not None:
            g = scenario.gust
            a = math.exp(-dt / g.tau_s)
            b = math.sqrt(1.0 - a * a)
            speed = scenario.wind_speed + a * (speed - scenario.wind_speed) + b * g.sigma_speed * rng.standard_normal()
            direction = scenario.wind_dir + a * (direction - scenario.wind_dir) + b * g.sigma_dir * rng.standard_normal()
    return RunLog(t[:n], pose[:n], vel[:n], cmd[:n], modes[:n], wind[:n], solve_ms[:n], failed, message)


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    e_d: float
    s_d: float
    e_h: float
    s_h: float
    ps: float
    windows: list = field(default_factory=list)
    mean_solve_ms: Optional[float] = None

    @staticmethod
    def penalty(e_d, s_d, e_h, s_h) -> float:
        return e_d + s_d + abs(e_h) + s_h

    def to_dict(self) -> dict:
        return {
            "e_d": self.e_d, "s_d": self.s_d, "e_h": self.e_h, "s_h": self.s_h, "ps": self.ps,
            "windows": [list(w) for w in self.windows], "mean_solve_ms": self.mean_solve_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["e_d"], d["s_d"], d["e_h"], d["s_h"], d["ps"], [tuple(w) for w in d["windows"]], d["mean_solve_ms"])


def errors(log: RunLog, goal):
    """Distance (m) and wrapped heading error (deg) per sample."""
    dist = np.hypot(log.pose[:, 0] - goal[0], log.pose[:, 1] - goal[1])
    head = np.degrees(wrap_angle(log.pose[:, 2] - goal[2]))
    return dist, np.atleast_1d(head)


def metrics(log: RunLog, goal, settle_skip_s: float = SETTLE_S) -> MetricsReport:
    keep = log.t >= log.t[0] + settle_skip_s - 1e-9 if len(log) else np.zeros(0, bool)
    if not np.any(keep):
        raise ValueError("no samples after the settle window")
    dist, head = errors(log, goal)
    d, h = dist[keep], head[keep]
    e_d, s_d, e_h, s_h = float(d.mean()), float(d.std()), float(h.mean()), float(h.std())
    sm = log.solve_ms[~np.isnan(log.solve_ms)]
    return MetricsReport(e_d, s_d, e_h, s_h, MetricsReport.penalty(e_d, s_d, e_h, s_h),
                         docking_windows(log, goal, settle_skip_s), float(sm.mean()) if len(sm) else None)


def in_sector(x, y, goal, radius: float = DOCK_RADIUS, half_angle: float = DOCK_HALF_ANGLE) -> np.ndarray:
    """Inside the sector of given radius opened from the goal along the goal heading."""
    dx, dy = np.asarray(x) - goal[0], np.asarray(y) - goal[1]
    dist = np.hypot(dx, dy)
    bearing = np.arctan2(dy, dx)
    off = np.abs(wrap_angle(bearing - goal[2]))
    return (dist <= radius) & ((off <= half_angle) | (dist < 1e-9))


def docking_ok(log: RunLog, goal) -> np.ndarray:
    speed = np.hypot(log.vel[:, 0], log.vel[:, 1])
    return (speed <= DOCK_SPEED) & (np.abs(log.vel[:, 2]) <= DOCK_RATE) & in_sector(log.pose[:, 0], log.pose[:, 1], goal)


def docking_windows(log: RunLog, goal, settle_skip_s: float = SETTLE_S, min_s: float = DOCK_MIN_S) -> list:
    """Maximal post-settle intervals meeting the docking bounds: (t_start, t_end, mean e_d, mean e_h deg)."""
    if len(log) == 0:
        return []
    ok = docking_ok(log, goal) & (log.t >= log.t[0] + settle_skip_s - 1e-9)
    dist, head = errors(log, goal)
    out = []
    k = 0
    n = len(ok)
    while k < n:
        if not ok[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and ok[j + 1]:
            j += 1
        if log.t[j] - log.t[k] >= min_s - 1e-9:
            out.append((float(log.t[k]), float(log.t[j]), float(dist[k:j + 1].mean()), float(head[k:j + 1].mean())))
        k = j + 1
    return out


# ---------------------------------------------------------------- compare

@dataclass
class Comparison:
    rows: list  # dicts with scenario, controller, per-seed ps and mean metrics
    winners: dict  # scenario -> controller
    counts: dict  # controller -> wins

    def to_dict(self) -> dict:
        return {"rows": self.rows, "winners": self.winners, "counts": self.counts}

    def table(self) -> str:
        head = f"{'scenario':<10} {'controller':<11} {'e_d[m]':>8} {'s_d[m]':>8} {'e_h[deg]':>9} {'s_h[deg]':>9} {'ps':>8} {'solve[ms]':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            sm = "-" if r["mean_solve_ms"] is None else f"{r['mean_solve_ms']:.2f}"
            mark = " *" if self.winners.get(r["scenario"]) == r["controller"] else ""
            lines.append(f"{r['scenario']:<10} {r['controller']:<11} {r['e_d']:8.3f} {r['s_d']:8.3f} {r['e_h']:9.3f} "
                         f"{r['s_h']:9.3f} {r['ps']:8.3f} {sm:>9}{mark}")
        lines.append("")
        lines.append("winners: " + ", ".join(f"{s}={c}" for s, c in self.winners.items()))
        lines.append("wins: " + ", ".join(f"{c}={n}" for c, n in self.counts.items()))
        return "\n".join(lines) + "\n"


def log_name(scenario: str, controller: str, seed: int) -> str:
    return f"{scenario}_{controller}_s{seed}.csv"


def _cell(args):
    scenario, controller, models, seed, plant, mpc, gains, radii, log_dir = args
    log = run(scenario, controller, models, seed, plant, mpc, gains, radii)
    if log_dir is not None:
        log.to_csv(Path(log_dir) / log_name(scenario.name, controller, seed))
    if log.failed or log.t[-1] - log.t[0] < SETTLE_S:
        return scenario.name, controller, seed, None, log.message or "run too short"
    return scenario.name, controller, seed, metrics(log, scenario.goal), ""


def compare(scenarios, controllers, seeds, models: dict, plant: VesselParams = VesselParams(),
            mpc: MpcConfig = MpcConfig(), gains: ControllerGains = ControllerGains(), jobs: int = 1,
            radii: Optional[dict] = None, log_dir=None) -> Comparison:
    """Run the grid and rank controllers per scenario by mean penalty score over seeds.

    Runs are independent; results are reduced in fixed (scenario, controller, seed) order.
    """
    if len(scenarios) < 1 or len(controllers) < 2:
        raise ValueError("compare needs at least one scenario and two controllers")
    seeds = list(seeds)
    # without gusts or sensor noise the seed cannot influence a run, so one run stands for all seeds
    cells, copies = [], []
    for s in scenarios:
        stochastic = s.gust is not None or s.noise is not None
        for c in controllers:
            for seed in (seeds if stochastic else seeds[:1]):
                cells.append((s, c, models, seed, plant, mpc, gains, radii, log_dir))
                copies.append(seeds if not stochastic else [seed])
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            computed = list(pool.map(_cell, cells))
    else:
        computed = [_cell(c) for c in cells]
    results = []
    for (name, ctrl, first, rep, msg), same in zip(computed, copies):
        for seed in same:
            if seed != first and log_dir is not None:
                src = Path(log_dir) / log_name(name, ctrl, first)
                (Path(log_dir) / log_name(name, ctrl, seed)).write_bytes(src.read_bytes())
            results.append((name, ctrl, seed, rep, msg))
    by_key = {}
    for name, ctrl, seed, rep, msg in results:
        by_key.setdefault((name, ctrl), []).append((seed, rep, msg))
    rows, winners = [], {}
    counts = {c: 0 for c in controllers}
    for s in scenarios:
        best = None
        for c in controllers:
            reps = by_key[(s.name, c)]
            good = [r for _, r, _ in reps if r is not None]
            failures = [f"seed {seed}: {msg}" for seed, r, msg in reps if r is None]
            if good:
                mean = {k: float(np.mean([getattr(r, k) for r in good])) for k in ("e_d", "s_d", "e_h", "s_h")}
                ps = MetricsReport.penalty(mean["e_d"], mean["s_d"], mean["e_h"], mean["s_h"])
                solve = [r.mean_solve_ms for r in good if r.mean_solve_ms is not None]
                ms = float(np.mean(solve)) if solve else None
            else:
                mean = {k: math.inf for k in ("e_d", "s_d", "e_h", "s_h")}
                ps, ms = math.inf, None
            rows.append({
                "scenario": s.name, "controller": c, **mean, "ps": ps,
                "ps_per_seed": [r.ps if r is not None else None for _, r, _ in reps],
                "mean_solve_ms": ms, "failures": failures,
            })
            if best is None or ps < best[0]:
                best = (ps, c)
        winners[s.name] = best[1]
        counts[best[1]] += 1
    return Comparison(rows, winners, counts)


def calm_hold_scenario(duration: float = 60.0) -> Scenario:
    """Start at the goal with no wind."""
    return Scenario(name="calm-hold", start=(0.0, 0.0, 0.0), goal=(0.0, 0.0, 0.0), wind_speed=CALM.speed, duration=duration)
