"""Maneuver data generation and truncated simulation-error training.

Training unrolls the Euler model over ``m`` steps from each subsequence's
measured initial velocity and penalizes the mean squared velocity error. The
gradient is obtained by hand-written reverse-mode differentiation through the
unrolled loop, including the dependence of the body-frame wind on the
predicted heading.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .models import HybridModel, MlpModel, Model, Normalizer, SDModel, model_inputs
from .vessel import (
    BodyVelocity,
    Pose,
    SimState,
    VesselParams,
    Wind,
    accel_body,
    accel_body_jac,
    body_wind,
    step,
)

log = logging.getLogger(__name__)

DT = 0.2
CSV_HEADER = ["t", "u", "v", "r", "pwm_p", "pwm_s", "wind_u", "wind_v", "x", "y", "psi", "segment_id"]


class DatasetTooShort(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


@dataclass
class Dataset:
    """Uniformly sampled maneuver log. Wind is the true wind in body axes."""

    t: np.ndarray
    vel: np.ndarray
    cmd: np.ndarray
    wind_body: np.ndarray
    pose: np.ndarray
    segment_id: np.ndarray
    meta: dict = field(default_factory=dict)
    dt: float = DT

    def __post_init__(self):
        n = len(self.t)
        for name, width in (("vel", 3), ("cmd", 2), ("wind_body", 2), ("pose", 3)):
            a = np.asarray(getattr(self, name), dtype=float).reshape(n, width)
            setattr(self, name, a)
        self.t = np.asarray(self.t, dtype=float)
        self.segment_id = np.asarray(self.segment_id, dtype=int)
        if n > 1:
            steps = np.diff(self.t)
            same = np.diff(self.segment_id) == 0
            if np.any(steps <= 0) or np.any(np.abs(steps[same] - self.dt) > 1e-9):
                raise ValueError("dataset timestamps must be increasing and uniform at dt within segments")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.t[idx], self.vel[idx], self.cmd[idx], self.wind_body[idx],
                       self.pose[idx], self.segment_id[idx], dict(self.meta), self.dt)

    def segments(self) -> list[tuple[int, int]]:
        """Half-open index ranges of constant segment id."""
        if len(self) == 0:
            return []
        cuts = np.flatnonzero(np.diff(self.segment_id) != 0) + 1
        bounds = np.concatenate([[0], cuts, [len(self)]])
        return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def wind_global(self) -> np.ndarray:
        """Body wind rotated back to the global frame with the measured heading."""
        c, s = np.cos(self.pose[:, 2]), np.sin(self.pose[:, 2])
        wx, wy = self.wind_body[:, 0], self.wind_body[:, 1]
        return np.stack([c * wx - s * wy, s * wx + c * wy], axis=-1)

    def accel_estimate(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward-difference accelerations and the sample indices they belong to."""
        idx = [np.arange(a, b - 1) for a, b in self.segments() if b - a > 1]
        idx = np.concatenate(idx) if idx else np.zeros(0, dtype=int)
        return (self.vel[idx + 1] - self.vel[idx]) / self.dt, idx

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for i in range(len(self)):
                row = [self.t[i], *self.vel[i], *self.cmd[i], *self.wind_body[i], *self.pose[i]]
                w.writerow([repr(float(x)) for x in row] + [int(self.segment_id[i])])

    @classmethod
    def from_csv(cls, path, meta: dict | None = None) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != CSV_HEADER:
            raise ValueError(f"{path}: unexpected dataset header")
        a = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(CSV_HEADER))
        dt = float(a[1, 0] - a[0, 0]) if len(a) > 1 else DT
        return cls(a[:, 0], a[:, 1:4], a[:, 4:6], a[:, 6:8], a[:, 8:11], a[:, 11].astype(int), meta or {}, round(dt, 9))


@dataclass
class TrainConfig:
    batch_size: int = 64
    window: int = 20
    learning_rate: float = 0.001
    epochs: int = 2000
    seed: int = 0
    dt: float = DT
    holdout_fraction: float = 0.2
    eval_horizon_s: float = 50.0

    def __post_init__(self):
        if self.batch_size < 1 or self.window < 2 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")


@dataclass
class TrainReport:
    losses: list
    mae: tuple
    holdout_loss: float
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "losses": [float(x) for x in self.losses],
            "final_loss": float(self.losses[-1]) if self.losses else None,
            "mae": {"u": self.mae[0], "v": self.mae[1], "r": self.mae[2]},
            "holdout_loss": self.holdout_loss,
            "wall_time_s": self.wall_time_s,
        }


# ------------------------------------------------------------ data collection

def _maneuver_recipe(rng: np.random.Generator, dt: float):
    """(label, command array) pieces: lines, circles, pivots, zigzags, hover, then random driving."""
    def hold(cmd, seconds):
        return np.tile(np.asarray(cmd, dtype=float), (int(round(seconds / dt)), 1))

    pieces = []
    for level in (0.3, 0.6, 1.0):
        pieces.append((f"forward_{level}", hold((level, level), 15)))
        pieces.append((f"backward_{level}", hold((-level, -level), 15)))
    for base, diff in ((0.5, 0.3), (0.4, 0.6)):
        pieces.append((f"circle_port_{diff}", hold((base - diff / 2, base + diff / 2), 20)))
        pieces.append((f"circle_starboard_{diff}", hold((base + diff / 2, base - diff / 2), 20)))
    for level in (0.5, 1.0):
        pieces.append((f"pivot_port_{level}", hold((-level, level), 10)))
        pieces.append((f"pivot_starboard_{level}", hold((level, -level), 10)))
    for amp in (0.3, 0.6):
        n_half = int(round(5.0 / dt))
        cmds = []
        for k in range(8):
            sgn = 1.0 if k % 2 == 0 else -1.0
            cmds.append(hold((0.5 + sgn * amp / 2, 0.5 - sgn * amp / 2), n_half * dt))
        pieces.append((f"zigzag_{amp}", np.vstack(cmds)))
    # near-hover corrections, the regime station keeping lives in
    pieces.append(("hover", _random_walk(rng, 60.0, dt, 0.15)))
    # joystick surrogate: band-limited random walk on both motors
    for k, seconds in enumerate((240.0, 120.0)):
        pieces.append((f"manual_{k}", _random_walk(rng, seconds, dt, 0.5)))
    return pieces


def _random_walk(rng: np.random.Generator, seconds: float, dt: float, sigma: float) -> np.ndarray:
    n = int(round(seconds / dt))
    out = np.zeros((n, 2))
    target = np.zeros(2)
    state = np.zeros(2)
    for i in range(n):
        if i % int(round(2.0 / dt)) == 0:
            target = np.clip(0.6 * target + rng.normal(0.0, sigma, 2), -1.0, 1.0)
        state += (target - state) * (dt / 0.8)
        out[i] = state
    return np.clip(out, -1.0, 1.0)


def generate_maneuvers(p: VesselParams, wind_schedule: Sequence[Wind], seed: int = 0,
                       dt: float = DT, method: str = "rk4") -> Dataset:
    """Simulate the maneuver recipe once per wind condition and log at ``1/dt`` Hz."""
    if not wind_schedule:
        raise ValueError("wind schedule must not be empty")
    rng = np.random.default_rng(seed)
    rows, segs, seg_meta = [], [], []
    seg = 0
    for ci, wind in enumerate(wind_schedule):
        wind = Wind(*wind).normalized()
        wg = wind.vector()
        s = SimState(Pose(0.0, 0.0, float(rng.uniform(-np.pi, np.pi))), BodyVelocity(0.0, 0.0, 0.0))
        for label, cmds in _maneuver_recipe(rng, dt):
            seg_meta.append({"id": seg, "label": label, "condition": ci})
            for c in cmds:
                rows.append([*s.vel, *c, *body_wind(wg, s.pose.psi), *s.pose])
                segs.append(seg)
                s = step(p, s, c, wind, dt, method=method)
            seg += 1
    a = np.array(rows)
    t = np.arange(len(a)) * dt
    meta = {
        "winds": [list(Wind(*w).normalized()) for w in wind_schedule],
        "segments": seg_meta,
        "seed": seed,
    }
    return Dataset(t, a[:, 0:3], a[:, 3:5], a[:, 5:7], a[:, 7:10], np.array(segs), meta, dt)


def split_conditions(d: Dataset) -> list[Dataset]:
    """One dataset per wind condition (needs the segment metadata)."""
    cond = {s["id"]: s["condition"] for s in d.meta.get("segments", [])}
    if not cond:
        return [d]
    labels = np.array([cond[int(s)] for s in d.segment_id])
    out = []
    for c in sorted(set(labels.tolist())):
        sub = d.subset(np.flatnonzero(labels == c))
        sub.meta = dict(d.meta, winds=[d.meta["winds"][c]], condition=c,
                        segments=[s for s in d.meta["segments"] if s["condition"] == c])
        out.append(sub)
    return out


def holdout_split(d: Dataset, fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Final ``fraction`` of each wind condition is held out."""
    train_idx, test_idx = [], []
    offset = 0
    for part in split_conditions(d):
        n = len(part)
        cut = n - int(round(fraction * n))
        train_idx.append(offset + np.arange(cut))
        test_idx.append(offset + np.arange(cut, n))
        offset += n
    # split_conditions preserves order only when conditions are contiguous,
    # which generate_maneuvers guarantees
    tr, te = np.concatenate(train_idx), np.concatenate(test_idx)
    return d.subset(tr), d.subset(te)


# ------------------------------------------------------------------ batching

@dataclass
class Batch:
    """q subsequences: initial state, m commands/winds and m measured velocities."""

    v0: np.ndarray  # (q, 3)
    psi0: np.ndarray  # (q,)
    cmds: np.ndarray  # (q, m, 2)
    wind_global: np.ndarray  # (q, m, 2)
    target: np.ndarray  # (q, m, 3)
    starts: np.ndarray  # (q,)

    @property
    def q(self) -> int:
        return len(self.v0)

    @property
    def m(self) -> int:
        return self.cmds.shape[1]


def window_starts(d: Dataset, m: int) -> np.ndarray:
    """Start indices whose m+1 samples lie inside one segment."""
    starts = [np.arange(a, b - m) for a, b in d.segments() if b - a > m]
    if not starts:
        raise DatasetTooShort(f"no segment holds {m + 1} consecutive samples")
    return np.concatenate(starts)


def batch_from_starts(d: Dataset, starts, m: int, wg: np.ndarray | None = None) -> Batch:
    starts = np.asarray(starts, dtype=int)
    wg = d.wind_global() if wg is None else wg
    steps = starts[:, None] + np.arange(m)[None, :]
    return Batch(
        v0=d.vel[starts],
        psi0=d.pose[starts, 2],
        cmds=d.cmd[steps],
        wind_global=wg[steps],
        target=d.vel[steps + 1],
        starts=starts,
    )


def make_batches(d: Dataset, cfg: TrainConfig, epoch_seed: int, n_batches: int | None = None) -> Iterator[Batch]:
    """Uniformly sampled windows (with replacement); infinite when ``n_batches`` is None."""
    valid = window_starts(d, cfg.window)
    wg = d.wind_global()
    rng = np.random.default_rng(epoch_seed)
    k = 0
    while n_batches is None or k < n_batches:
        starts = valid[rng.integers(0, len(valid), cfg.batch_size)]
        yield batch_from_starts(d, starts, cfg.window, wg)
        k += 1


def all_windows(d: Dataset, m: int, stride: int = 1) -> Batch:
    return batch_from_starts(d, window_starts(d, m)[::stride], m)


# ------------------------------------------------------- loss and its gradient

def simulate_velocities(model: Model, v0, psi0, cmds, wind_global, dt: float, keep: bool = False):
    """Euler-unrolled velocity predictions for a batch; returns (q, m, 3).

    With ``keep`` also returns per-step (vel, psi, wind_body) for backprop.
    """
    q, m = cmds.shape[0], cmds.shape[1]
    v = np.array(v0, dtype=float)
    psi = np.array(psi0, dtype=float)
    preds = np.empty((q, m, 3))
    tape = []
    for t in range(m):
        wb = body_wind(wind_global[:, t], psi)
        a = model.accel(v, cmds[:, t], wb)
        if keep:
            tape.append((v, psi, wb))
        psi = psi + dt * v[:, 2]
        v = v + dt * a
        preds[:, t] = v
    return (preds, tape) if keep else preds


def sem_loss(model: Model, batch: Batch, dt: float = DT) -> float:
    pred = simulate_velocities(model, batch.v0, batch.psi0, batch.cmds, batch.wind_global, dt)
    return float(np.mean(np.sum((pred - batch.target) ** 2, axis=-1)))


def trainable(model: Model) -> dict:
    if isinstance(model, MlpModel):
        return model.params()
    if isinstance(model, HybridModel):
        return model.mlp.params() | {"coupling": model.coupling}
    raise TypeError(f"{type(model).__name__} has no trainable parameters")


def with_trainable(model: Model, params: dict) -> Model:
    if isinstance(model, MlpModel):
        return model.with_params(**params)
    mlp = model.mlp.with_params(**{k: params[k] for k in ("W1", "b1", "W2", "b2")})
    return replace(model, mlp=mlp, coupling=params["coupling"])


def _mlp_vjp(mlp: MlpModel, z: np.ndarray, g: np.ndarray, grads: dict):
    """Accumulate parameter grads for output cotangent ``g``; return input cotangent."""
    nz = mlp.normalizer
    zn = nz.normalize_in(z)
    h = np.tanh(zn @ mlp.W1.T + mlp.b1)
    g_yn = g * nz.out_scale
    grads["W2"] += g_yn.T @ h
    grads["b2"] += g_yn.sum(axis=0)
    g_pre = (g_yn @ mlp.W2) * (1.0 - h * h)
    grads["W1"] += g_pre.T @ zn
    grads["b1"] += g_pre.sum(axis=0)
    return (g_pre @ mlp.W1) / nz.in_scale


def _accel_vjp(model: Model, v, cmd, wb, g, grads: dict):
    """Cotangents of velocity and body wind for acceleration cotangent ``g``."""
    if isinstance(model, MlpModel):
        gz = _mlp_vjp(model, model_inputs(v, cmd, wb), g, grads)
        return gz[:, 0:3], gz[:, 5:7]
    if isinstance(model, HybridModel):
        L, Rt = model.coupling[:, :3], model.coupling[:, 3:]
        prior_a, Jv, _, Jw = accel_body_jac(model.prior, v, cmd, wb)
        z = model_inputs(v, cmd, wb)
        net_a = model.mlp.forward(z)[0]
        grads["coupling"][:, :3] += g.T @ prior_a
        grads["coupling"][:, 3:] += g.T @ net_a
        g_p = g @ L
        gz = _mlp_vjp(model.mlp, z, g @ Rt, grads)
        g_v = np.einsum("qi,qij->qj", g_p, Jv) + gz[:, 0:3]
        g_w = np.einsum("qi,qij->qj", g_p, Jw) + gz[:, 5:7]
        return g_v, g_w
    raise TypeError(f"cannot differentiate {type(model).__name__}")


def sem_loss_and_grad(model: Model, batch: Batch, dt: float = DT) -> tuple[float, dict]:
    """Loss and its exact gradient wrt every trainable parameter."""
    q, m = batch.q, batch.m
    pred, tape = simulate_velocities(model, batch.v0, batch.psi0, batch.cmds, batch.wind_global, dt, keep=True)
    err = pred - batch.target
    loss = float(np.sum(err * err) / (q * m))
    grads = {k: np.zeros_like(v) for k, v in trainable(model).items()}
    scale = 2.0 / (q * m)
    lam_v = np.zeros((q, 3))
    lam_psi = np.zeros(q)
    for t in range(m - 1, -1, -1):
        v, psi, wb = tape[t]
        lam_v = lam_v + scale * err[:, t]  # cotangent of v[t+1]
        g_a = dt * lam_v
        g_v, g_w = _accel_vjp(model, v, batch.cmds[:, t], wb, g_a, grads)
        new_lam_v = lam_v + g_v
        new_lam_v[:, 2] += dt * lam_psi  # psi[t+1] = psi[t] + dt * r[t]
        lam_v = new_lam_v
        # wb = R(psi)^T wg  =>  d wb / d psi = (wb_y, -wb_x)
        lam_psi = lam_psi + g_w[:, 0] * wb[:, 1] - g_w[:, 1] * wb[:, 0]
    return loss, grads


def sem_grad(model: Model, batch: Batch, dt: float = DT) -> dict:
    return sem_loss_and_grad(model, batch, dt)[1]


# ------------------------------------------------------------------ training

def fit_normalizer(model: Model, d: Dataset) -> Normalizer:
    """Input ranges from the data; output ranges from the accelerations the network must produce."""
    acc, idx = d.accel_estimate()
    z = model_inputs(d.vel[idx], d.cmd[idx], d.wind_body[idx])
    if isinstance(model, HybridModel):
        acc = acc - accel_body(model.prior, d.vel[idx], d.cmd[idx], d.wind_body[idx])
    return Normalizer.fit(z, acc)


def _with_normalizer(model: Model, nz: Normalizer) -> Model:
    if isinstance(model, MlpModel):
        return MlpModel(model.W1, model.b1, model.W2, model.b2, nz, model.dt)
    return replace(model, mlp=_with_normalizer(model.mlp, nz))


class Adam:
    def __init__(self, params: dict, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            out[k] = params[k] - self.lr * mh / (np.sqrt(vh) + self.eps)
        return out


def evaluate_mae(model: Model, d: Dataset, horizon_s: float = 50.0, start: int = 0) -> tuple[float, float, float]:
    """Open-loop rollout from ``d[start]`` under recorded inputs; per-channel MAE."""
    n = int(round(horizon_s / d.dt))
    if start + n >= len(d):
        raise DatasetTooShort(f"horizon of {n} steps exceeds the {len(d) - start - 1} available")
    wg = d.wind_global()
    pred = simulate_velocities(model, d.vel[start:start + 1], d.pose[start:start + 1, 2],
                               d.cmd[None, start:start + n], wg[None, start:start + n], d.dt)[0]
    mae = np.mean(np.abs(pred - d.vel[start + 1:start + n + 1]), axis=0)
    return float(mae[0]), float(mae[1]), float(mae[2])


def holdout_loss(model: Model, d: Dataset, m: int, dt: float = DT) -> float:
    return sem_loss(model, all_windows(d, m), dt)


def train(model: Model, d: Dataset, cfg: TrainConfig, log_every: int = 0) -> tuple[Model, TrainReport]:
    """Adam on the truncated simulation-error loss; the final 20% per condition is held out."""
    if isinstance(model, SDModel):
        raise TypeError("the simplified-dynamics model has nothing to train")
    t0 = time.perf_counter()
    train_d, test_d = holdout_split(d, cfg.holdout_fraction)
    model = _with_normalizer(model, fit_normalizer(model, train_d))
    params = trainable(model)
    opt = Adam(params, cfg.learning_rate)
    losses = []
    batches = make_batches(train_d, cfg, cfg.seed)
    for epoch in range(cfg.epochs):
        batch = next(batches)
        loss, grads = sem_loss_and_grad(model, batch, cfg.dt)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDiverged(epoch, loss)
        losses.append(loss)
        params = opt.step(params, grads)
        model = with_trainable(model, params)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.6g", epoch, loss)
    try:
        mae = evaluate_mae(model, test_d, cfg.eval_horizon_s)
    except DatasetTooShort:
        mae = (float("nan"),) * 3
    report = TrainReport(losses, mae, holdout_loss(model, test_d, cfg.window, cfg.dt),
                         time.perf_counter() - t0)
    return model, report
