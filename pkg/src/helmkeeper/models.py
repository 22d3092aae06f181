"""Predictive models consumed by the MPC.

Every model exposes ``accel(vel, cmd, wind_body)`` and
``accel_jac(vel, cmd, wind_body)`` vectorized over leading axes. The discrete
one-step map, rollouts and linearizations are shared and built on top of those
two methods:

    v[t+1]   = v[t] + dt * f(v[t], u[t], R(psi[t])^T w)
    eta[t+1] = eta[t] + dt * R(psi[t]) v[t]

Augmented state vectors are ordered ``(u, v, r, x, y, psi)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .vessel import (
    BodyVelocity,
    Pose,
    VesselParams,
    Wind,
    accel_body,
    accel_body_jac,
    body_wind,
    pose_rate,
    wrap_angle,
)

N_IN = 7
N_OUT = 3


class AugmentedState(NamedTuple):
    u: float
    v: float
    r: float
    x: float
    y: float
    psi: float

    @property
    def vel(self) -> BodyVelocity:
        return BodyVelocity(self.u, self.v, self.r)

    @property
    def pose(self) -> Pose:
        return Pose(self.x, self.y, self.psi)

    @classmethod
    def from_parts(cls, vel, pose) -> "AugmentedState":
        return cls(*map(float, vel), float(pose[0]), float(pose[1]), wrap_angle(pose[2]))

    @classmethod
    def from_array(cls, a) -> "AugmentedState":
        return cls(*(float(x) for x in a))


@dataclass(frozen=True)
class Normalizer:
    """Affine map of the 7 inputs and 3 outputs onto roughly [-1, 1]."""

    in_offset: np.ndarray
    in_scale: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        for name in ("in_offset", "in_scale", "out_offset", "out_scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.in_offset.shape != (N_IN,) or self.out_offset.shape != (N_OUT,):
            raise ValueError("normalizer expects 7 input and 3 output channels")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ValueError("normalizer scales must be positive")

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(N_IN), np.ones(N_IN), np.zeros(N_OUT), np.ones(N_OUT))

    @classmethod
    def fit(cls, inputs: np.ndarray, outputs: np.ndarray, headroom: float = 0.05) -> "Normalizer":
        """Min/max fit with ``headroom`` extra range on every channel."""
        def _fit(a):
            lo, hi = a.min(axis=0), a.max(axis=0)
            half = 0.5 * (hi - lo) * (1.0 + headroom)
            return 0.5 * (hi + lo), np.where(half > 1e-12, half, 1.0)

        io, isc = _fit(np.asarray(inputs, dtype=float))
        oo, osc = _fit(np.asarray(outputs, dtype=float))
        return cls(io, isc, oo, osc)

    def normalize_in(self, z):
        return (z - self.in_offset) / self.in_scale

    def denormalize_in(self, zn):
        return zn * self.in_scale + self.in_offset

    def normalize_out(self, y):
        return (y - self.out_offset) / self.out_scale

    def denormalize_out(self, yn):
        return yn * self.out_scale + self.out_offset

    def to_dict(self) -> dict:
        return {
            "offsets": np.concatenate([self.in_offset, self.out_offset]).tolist(),
            "scales": np.concatenate([self.in_scale, self.out_scale]).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        o, s = np.asarray(d["offsets"], dtype=float), np.asarray(d["scales"], dtype=float)
        return cls(o[:N_IN], s[:N_IN], o[N_IN:], s[N_IN:])


def model_inputs(vel, cmd, wind_body) -> np.ndarray:
    vel, cmd, wind_body = (np.asarray(a, dtype=float) for a in (vel, cmd, wind_body))
    if vel.shape[:-1] == cmd.shape[:-1] == wind_body.shape[:-1]:
        return np.concatenate([vel, cmd, wind_body], axis=-1)
    lead = np.broadcast_shapes(vel.shape[:-1], cmd.shape[:-1], wind_body.shape[:-1])
    return np.concatenate(
        [
            np.broadcast_to(vel, lead + (3,)),
            np.broadcast_to(cmd, lead + (2,)),
            np.broadcast_to(wind_body, lead + (2,)),
        ],
        axis=-1,
    )


@dataclass(frozen=True)
class MlpModel:
    """Single-hidden-layer tanh network predicting body acceleration."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    normalizer: Normalizer = field(default_factory=Normalizer.identity)
    dt: float = 0.2

    kind = "nnsem"

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n_h = self.W1.shape[0]
        if n_h < 1 or self.W1.shape != (n_h, N_IN) or self.b1.shape != (n_h,):
            raise ValueError("W1/b1 shapes must be (n_h, 7)/(n_h,)")
        if self.W2.shape != (N_OUT, n_h) or self.b2.shape != (N_OUT,):
            raise ValueError("W2/b2 shapes must be (3, n_h)/(3,)")
        if not all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2)):
            raise ValueError("non-finite network weights")

    @property
    def n_h(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, n_h: int = 12, normalizer: Normalizer | None = None, seed: int = 0, dt: float = 0.2) -> "MlpModel":
        rng = np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / (N_IN + n_h))
        lim2 = 0.1 * np.sqrt(6.0 / (n_h + N_OUT))
        return cls(
            rng.uniform(-lim1, lim1, (n_h, N_IN)),
            np.zeros(n_h),
            rng.uniform(-lim2, lim2, (N_OUT, n_h)),
            np.zeros(N_OUT),
            normalizer or Normalizer.identity(),
            dt,
        )

    @classmethod
    def zeros(cls, n_h: int = 12, normalizer: Normalizer | None = None, dt: float = 0.2) -> "MlpModel":
        return cls(np.zeros((n_h, N_IN)), np.zeros(n_h), np.zeros((N_OUT, n_h)), np.zeros(N_OUT),
                   normalizer or Normalizer.identity(), dt)

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_params(self, **kw) -> "MlpModel":
        p = self.params() | kw
        return MlpModel(p["W1"], p["b1"], p["W2"], p["b2"], self.normalizer, self.dt)

    def forward(self, z):
        """Network output for raw inputs ``z`` (..., 7); returns (y, hidden, z_norm)."""
        zn = self.normalizer.normalize_in(z)
        h = np.tanh(zn @ self.W1.T + self.b1)
        y = self.normalizer.denormalize_out(h @ self.W2.T + self.b2)
        return y, h, zn

    def accel(self, vel, cmd, wind_body):
        return self.forward(model_inputs(vel, cmd, wind_body))[0]

    def input_jac(self, z):
        y, h, _ = self.forward(z)
        nz = self.normalizer
        # dy/dz = diag(s_out) W2 diag(1 - h^2) W1 diag(1 / s_in)
        left = (nz.out_scale[:, None] * self.W2) * (1.0 - h * h)[..., None, :]
        J = left @ (self.W1 / nz.in_scale)
        return y, J

    def accel_jac(self, vel, cmd, wind_body):
        y, J = self.input_jac(model_inputs(vel, cmd, wind_body))
        return y, J[..., :, 0:3], J[..., :, 3:5], J[..., :, 5:7]


@dataclass(frozen=True)
class SDModel:
    """Simplified-dynamics model: the plant equations with (possibly wrong) parameters."""

    params: VesselParams
    dt: float = 0.2

    kind = "sd"

    def accel(self, vel, cmd, wind_body):
        return accel_body(self.params, vel, cmd, wind_body)

    def accel_jac(self, vel, cmd, wind_body):
        return accel_body_jac(self.params, vel, cmd, wind_body)


@dataclass(frozen=True)
class HybridModel:
    """Physics prior coupled to a network through a linear 3x6 map."""

    prior: VesselParams
    mlp: MlpModel
    coupling: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.eye(3)]))
    dt: float = 0.2

    kind = "hybrid"

    def __post_init__(self):
        object.__setattr__(self, "coupling", np.asarray(self.coupling, dtype=float))
        if self.coupling.shape != (3, 6) or not np.all(np.isfinite(self.coupling)):
            raise ValueError("coupling must be a finite 3x6 matrix")

    def parts(self, vel, cmd, wind_body):
        prior = accel_body(self.prior, vel, cmd, wind_body)
        net = self.mlp.accel(vel, cmd, wind_body)
        return prior, net

    def accel(self, vel, cmd, wind_body):
        prior, net = self.parts(vel, cmd, wind_body)
        return prior @ self.coupling[:, :3].T + net @ self.coupling[:, 3:].T

    def accel_jac(self, vel, cmd, wind_body):
        pa, pJv, pJu, pJw = accel_body_jac(self.prior, vel, cmd, wind_body)
        na, nJv, nJu, nJw = self.mlp.accel_jac(vel, cmd, wind_body)
        L, Rt = self.coupling[:, :3], self.coupling[:, 3:]
        a = pa @ L.T + na @ Rt.T
        return a, L @ pJv + Rt @ nJv, L @ pJu + Rt @ nJu, L @ pJw + Rt @ nJw


Model = Union[MlpModel, SDModel, HybridModel]


def mlp_forward(m: MlpModel, vel, cmd, wind_body) -> np.ndarray:
    return m.accel(vel, cmd, wind_body)


def hybrid_forward(h: HybridModel, vel, cmd, wind_body) -> np.ndarray:
    return h.accel(vel, cmd, wind_body)


def step_state(model: Model, x: np.ndarray, cmd, wind_global, dt: float) -> np.ndarray:
    """One Euler step of the augmented state; vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    vel, pose = x[..., 0:3], x[..., 3:6]
    wb = body_wind(np.asarray(wind_global, dtype=float), pose[..., 2])
    vel_next = vel + dt * model.accel(vel, cmd, wb)
    pose_next = pose + dt * pose_rate(pose, vel)
    out = np.concatenate([vel_next, pose_next], axis=-1)
    out[..., 5] = wrap_angle(out[..., 5])
    return out


def rollout(model: Model, x0, cmds, wind_global, dt: float) -> np.ndarray:
    """Predicted states x[1..m] (shape (m, 6)) under the command sequence."""
    cmds = np.asarray(cmds, dtype=float).reshape(-1, 2)
    if len(cmds) < 1 or dt <= 0:
        raise ValueError("rollout needs at least one command and dt > 0")
    wg = _wind_vec(wind_global)
    x = np.asarray(x0, dtype=float).copy()
    x[5] = wrap_angle(x[5])
    out = np.empty((len(cmds), 6))
    for t, u in enumerate(cmds):
        x = step_state(model, x, u, wg, dt)
        out[t] = x
    return out


def linearize(model: Model, x, cmd, wind_global, dt: float):
    """Jacobians ``(A, B)`` of the one-step map, vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    cmd = np.asarray(cmd, dtype=float)
    wg = _wind_vec(wind_global)
    vel, psi = x[..., 0:3], x[..., 5]
    wb = body_wind(wg, psi)
    _, Jv, Ju, Jw = model.accel_jac(vel, cmd, wb)
    lead = np.broadcast_shapes(x.shape[:-1], cmd.shape[:-1])
    c, s = np.cos(psi), np.sin(psi)
    u, v = vel[..., 0], vel[..., 1]
    A = np.zeros(lead + (6, 6))
    A[..., 0:3, 0:3] = np.eye(3) + dt * Jv
    # d(body wind)/dpsi = (wb_y, -wb_x)
    dwb = np.stack([wb[..., 1], -wb[..., 0]], axis=-1)
    A[..., 0:3, 5] = dt * np.einsum("...ij,...j->...i", Jw, dwb)
    A[..., 3, 0] = dt * c
    A[..., 3, 1] = -dt * s
    A[..., 4, 0] = dt * s
    A[..., 4, 1] = dt * c
    A[..., 5, 2] = dt
    A[..., 3, 3] = A[..., 4, 4] = A[..., 5, 5] = 1.0
    A[..., 3, 5] = dt * (-s * u - c * v)
    A[..., 4, 5] = dt * (c * u - s * v)
    Bm = np.zeros(lead + (6, 2))
    Bm[..., 0:3, :] = dt * Ju
    return A, Bm


def _wind_vec(wind) -> np.ndarray:
    if isinstance(wind, Wind):
        return wind.vector()
    w = np.asarray(wind, dtype=float)
    if w.shape != (2,):
        raise ValueError("global wind must be a Wind or a 2-vector")
    return w


# ---------------------------------------------------------------- persistence

def model_to_dict(model: Model) -> dict:
    d: dict = {"kind": model.kind, "dt": model.dt}
    if isinstance(model, SDModel):
        d["prior_params"] = model.params.to_dict()
        return d
    mlp = model.mlp if isinstance(model, HybridModel) else model
    d.update(
        n_h=mlp.n_h,
        W1=mlp.W1.tolist(),
        b1=mlp.b1.tolist(),
        W2=mlp.W2.tolist(),
        b2=mlp.b2.tolist(),
        normalizer=mlp.normalizer.to_dict(),
    )
    if isinstance(model, HybridModel):
        d["coupling"] = model.coupling.tolist()
        d["prior_params"] = model.prior.to_dict()
    return d


def model_from_dict(d: dict) -> Model:
    kind = d.get("kind")
    dt = float(d.get("dt", 0.2))
    if kind == "sd":
        return SDModel(VesselParams.from_dict(d["prior_params"]), dt)
    if kind not in ("nnsem", "hybrid"):
        raise ValueError(f"unknown model kind {kind!r}")
    mlp = MlpModel(d["W1"], d["b1"], d["W2"], d["b2"], Normalizer.from_dict(d["normalizer"]), dt)
    if mlp.n_h != int(d["n_h"]):
        raise ValueError("n_h does not match weight shapes")
    if kind == "hybrid":
        return HybridModel(VesselParams.from_dict(d["prior_params"]), mlp, np.asarray(d["coupling"]), dt)
    return mlp


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
