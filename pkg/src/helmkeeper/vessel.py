"""3-DOF surface vessel plant.

State convention: pose ``eta = (x, y, psi)`` in the NED plane, body velocity
``nu = (u, v, r)``. Thrust inputs are normalized PWM values in [-1, 1].

The matrix-valued helpers (:func:`mass_matrix`, :func:`coriolis`,
:func:`damping`) mirror the textbook form. :func:`accel_body` evaluates the
same equations component-wise and is vectorized over leading axes; it is the
single code path used by both the plant integrator and the simplified-dynamics
model so the two agree bit for bit.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    # in-range angles pass through untouched so wrapping never perturbs them
    w = np.where((a > -np.pi) & (a <= np.pi), a, np.pi - np.mod(np.pi - a, TWO_PI))
    return float(w) if w.ndim == 0 else w


class Pose(NamedTuple):
    x: float
    y: float
    psi: float

    def wrapped(self) -> "Pose":
        return Pose(self.x, self.y, wrap_angle(self.psi))


class BodyVelocity(NamedTuple):
    u: float
    v: float
    r: float


class ThrustCmd(NamedTuple):
    port: float
    starboard: float

    @classmethod
    def clamped(cls, port: float, starboard: float) -> "ThrustCmd":
        return cls(float(np.clip(port, -1.0, 1.0)), float(np.clip(starboard, -1.0, 1.0)))


class Wind(NamedTuple):
    """Wind in the global frame. ``direction`` is where the air flows *toward*."""

    speed: float
    direction: float

    def vector(self) -> np.ndarray:
        return np.array([self.speed * np.cos(self.direction), self.speed * np.sin(self.direction)])

    def normalized(self) -> "Wind":
        if self.speed < 0:
            raise ValueError("wind speed must be >= 0")
        return Wind(float(self.speed), wrap_angle(self.direction))


CALM = Wind(0.0, 0.0)


@dataclass(frozen=True)
class VesselParams:
    """Hydrodynamic, thrust and wind coefficients.

    Damping coefficients are positive-valued (``D(v) v`` sits on the left-hand
    side of the momentum balance); added-mass derivatives are negative.
    Defaults describe a synthetic ~180 kg twin-motor catamaran.
    """

    m: float = 180.0
    Iz: float = 50.0
    xG: float = 0.0
    yG: float = 0.0
    xF: float = 0.0
    Xudot: float = -36.0
    Yvdot: float = -36.0
    Yrdot: float = -2.0
    Nvdot: float = -2.0
    Nrdot: float = -10.0
    Xu: float = 70.0
    Yv: float = 300.0
    Nr: float = 150.0
    Xuu: float = 14.0
    Yvv: float = 60.0
    Yvr: float = 4.0
    Yrv: float = 4.0
    Yrr: float = 4.0
    Nvv: float = 4.0
    Nvr: float = 4.0
    Nrv: float = 4.0
    Nrr: float = 30.0
    K: float = 100.0
    B: float = 1.2
    rho_a: float = 1.225
    Af: float = 0.6
    Al: float = 1.5
    Cx: float = 0.9
    Cy: float = 0.9
    Lw: float = 0.2

    def __post_init__(self):
        if self.m <= 0 or self.Iz <= 0:
            raise ValueError("m and Iz must be positive")
        if self.K <= 0 or self.B <= 0:
            raise ValueError("K and B must be positive")
        # frozen dataclass: stash the inverse mass matrix outside the field set
        object.__setattr__(self, "_minv", np.linalg.inv(mass_matrix(self)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VesselParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown vessel parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def perturbed(self, fraction: float, seed: int) -> "VesselParams":
        """Scale every inertial, damping, thrust and wind coefficient by ``1 +/- fraction``.

        Signs are drawn from ``seed``; geometry (B, xG, yG, xF) is left alone.
        """
        rng = np.random.default_rng(seed)
        skip = {"B", "xG", "yG", "xF", "rho_a"}
        changes = {}
        for f in fields(self):
            if f.name in skip:
                continue
            sign = 1.0 if rng.random() < 0.5 else -1.0
            changes[f.name] = getattr(self, f.name) * (1.0 + sign * fraction)
        return replace(self, **changes)


@dataclass(frozen=True)
class SimState:
    pose: Pose
    vel: BodyVelocity
    t: float = 0.0


def rotation(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def mass_matrix(p: VesselParams) -> np.ndarray:
    M = np.array(
        [
            [p.m - p.Xudot, 0.0, 0.0],
            [0.0, p.m - p.Yvdot, p.m * p.xF - p.Yrdot],
            [0.0, p.m * p.xG - p.Nvdot, p.Iz - p.Nrdot],
        ]
    )
    scale = max(abs(M[0, 0]), abs(M[1, 1]), abs(M[2, 2])) ** 3
    if abs(np.linalg.det(M)) < 1e-9 * scale:
        raise ValueError("vessel parameters give a singular mass matrix")
    return M


def coriolis_rb(p: VesselParams, vel) -> np.ndarray:
    u, v, r = vel
    a = p.m * (p.xG * r + v)
    b = p.m * (p.yG * r - u)
    return np.array([[0.0, 0.0, -a], [0.0, 0.0, -b], [a, b, 0.0]])


def coriolis_added(p: VesselParams, vel) -> np.ndarray:
    u, v, r = vel
    a = p.Yvdot * v + 0.5 * (p.Yrdot + p.Nvdot) * r
    b = p.Xudot * u
    return np.array([[0.0, 0.0, a], [0.0, 0.0, -b], [-a, b, 0.0]])


def coriolis(p: VesselParams, vel) -> np.ndarray:
    return coriolis_rb(p, vel) + coriolis_added(p, vel)


def damping_linear(p: VesselParams) -> np.ndarray:
    return np.diag([p.Xu, p.Yv, p.Nr])


def damping_nonlinear(p: VesselParams, vel) -> np.ndarray:
    au, av, ar = np.abs(np.asarray(vel, dtype=float))
    return np.array(
        [
            [p.Xuu * au, 0.0, 0.0],
            [0.0, p.Yvv * av + p.Yvr * ar, p.Yrv * av + p.Yrr * ar],
            [0.0, p.Nvv * av + p.Nvr * ar, p.Nrv * av + p.Nrr * ar],
        ]
    )


def damping(p: VesselParams, vel) -> np.ndarray:
    return damping_linear(p) + damping_nonlinear(p, vel)


def thrust_wrench(p: VesselParams, cmd) -> np.ndarray:
    up, us = cmd
    return np.array([p.K * (up + us), 0.0, p.K * 0.5 * p.B * (up - us)])


def body_wind(wind_global, psi):
    """Rotate a global 2-vector wind into the body frame (vectorized over psi)."""
    c, s = np.cos(psi), np.sin(psi)
    wx, wy = wind_global[..., 0], wind_global[..., 1]
    return np.stack([c * wx + s * wy, -s * wx + c * wy], axis=-1)


def wind_wrench_body(p: VesselParams, wind_body, vel) -> np.ndarray:
    """Quadratic relative-wind drag; ``wind_body`` is the true wind in body axes."""
    wind_body = np.asarray(wind_body, dtype=float)
    vel = np.asarray(vel, dtype=float)
    wx = wind_body[..., 0] - vel[..., 0]
    wy = wind_body[..., 1] - vel[..., 1]
    speed = np.sqrt(wx * wx + wy * wy)
    fx = 0.5 * p.rho_a * p.Af * p.Cx * speed * wx
    fy = 0.5 * p.rho_a * p.Al * p.Cy * speed * wy
    return np.stack([fx, fy, p.Lw * fy], axis=-1)


def wind_wrench(p: VesselParams, wind: Wind, pose, vel) -> np.ndarray:
    wb = body_wind(Wind(*wind).vector(), pose[2])
    return wind_wrench_body(p, wb, vel)


def _restoring(p: VesselParams, u, v, r):
    """Component form of C(v)v + D(v)v."""
    au, av, ar = np.abs(u), np.abs(v), np.abs(r)
    a = p.Yvdot * v + 0.5 * (p.Yrdot + p.Nvdot) * r
    cx = p.m * (p.xG * r + v)
    cy = p.m * (p.yG * r - u)
    n0 = -cx * r + a * r + (p.Xu + p.Xuu * au) * u
    n1 = -cy * r - p.Xudot * u * r + (p.Yv + p.Yvv * av + p.Yvr * ar) * v + (p.Yrv * av + p.Yrr * ar) * r
    n2 = cx * u + cy * v - a * u + p.Xudot * u * v + (p.Nvv * av + p.Nvr * ar) * v + (p.Nr + p.Nrv * av + p.Nrr * ar) * r
    return n0, n1, n2


def inverse_mass(p: VesselParams) -> np.ndarray:
    return p._minv


def accel_body(p: VesselParams, vel, cmd, wind_body) -> np.ndarray:
    """Body acceleration for arrays shaped (..., 3), (..., 2), (..., 2)."""
    vel = np.asarray(vel, dtype=float)
    cmd = np.asarray(cmd, dtype=float)
    u, v, r = vel[..., 0], vel[..., 1], vel[..., 2]
    n0, n1, n2 = _restoring(p, u, v, r)
    tw = wind_wrench_body(p, wind_body, vel)
    up, us = cmd[..., 0], cmd[..., 1]
    f = np.stack(
        [
            p.K * (up + us) + tw[..., 0] - n0,
            tw[..., 1] - n1,
            p.K * 0.5 * p.B * (up - us) + tw[..., 2] - n2,
        ],
        axis=-1,
    )
    return f @ inverse_mass(p).T


def accel_body_jac(p: VesselParams, vel, cmd, wind_body):
    """Acceleration and its Jacobians wrt velocity, command and body wind.

    Returns ``(a, Jv, Ju, Jw)`` with shapes (..., 3), (..., 3, 3), (..., 3, 2),
    (..., 3, 2).
    """
    vel = np.asarray(vel, dtype=float)
    wind_body = np.asarray(wind_body, dtype=float)
    a = accel_body(p, vel, cmd, wind_body)
    u, v, r = vel[..., 0], vel[..., 1], vel[..., 2]
    sv, sr = np.sign(v), np.sign(r)
    au, av, ar = np.abs(u), np.abs(v), np.abs(r)
    h = 0.5 * (p.Yrdot + p.Nvdot)
    m = p.m
    shape = u.shape
    dn = np.empty(shape + (3, 3))
    dn[..., 0, 0] = p.Xu + 2.0 * p.Xuu * au
    dn[..., 0, 1] = -m * r + p.Yvdot * r
    dn[..., 0, 2] = -m * (2.0 * p.xG * r + v) + p.Yvdot * v + 2.0 * h * r
    dn[..., 1, 0] = m * r - p.Xudot * r
    dn[..., 1, 1] = p.Yv + 2.0 * p.Yvv * av + p.Yvr * ar + p.Yrv * sv * r
    dn[..., 1, 2] = -2.0 * m * p.yG * r + m * u - p.Xudot * u + p.Yvr * sr * v + p.Yrv * av + 2.0 * p.Yrr * ar
    dn[..., 2, 0] = m * p.xG * r - p.Yvdot * v - h * r + p.Xudot * v
    dn[..., 2, 1] = m * p.yG * r - p.Yvdot * u + p.Xudot * u + 2.0 * p.Nvv * av + p.Nvr * ar + p.Nrv * sv * r
    dn[..., 2, 2] = m * p.xG * u + m * p.yG * v - h * u + p.Nvr * sr * v + p.Nr + p.Nrv * av + 2.0 * p.Nrr * ar

    # relative-wind drag derivatives wrt the relative wind components
    wx = wind_body[..., 0] - u
    wy = wind_body[..., 1] - v
    speed = np.sqrt(wx * wx + wy * wy)
    safe = np.where(speed > 0, speed, 1.0)
    gx = np.where(speed > 0, wx / safe, 0.0)
    gy = np.where(speed > 0, wy / safe, 0.0)
    cX = 0.5 * p.rho_a * p.Af * p.Cx
    cY = 0.5 * p.rho_a * p.Al * p.Cy
    dtw = np.zeros(shape + (3, 2))
    dtw[..., 0, 0] = cX * (speed + wx * gx)
    dtw[..., 0, 1] = cX * wx * gy
    dtw[..., 1, 0] = cY * wy * gx
    dtw[..., 1, 1] = cY * (speed + wy * gy)
    dtw[..., 2, :] = p.Lw * dtw[..., 1, :]

    minv = inverse_mass(p)
    df_dv = -dn
    df_dv[..., :, 0:2] -= dtw
    Jv = minv @ df_dv
    Jw = minv @ dtw
    Bt = np.array([[p.K, p.K], [0.0, 0.0], [0.5 * p.K * p.B, -0.5 * p.K * p.B]])
    Ju = np.broadcast_to(minv @ Bt, shape + (3, 2))
    return a, Jv, Ju, Jw


def accel(p: VesselParams, vel, cmd, wind: Wind, pose) -> np.ndarray:
    """Body acceleration solving ``M dv = tau + tau_w - C(v) v - D(v) v``."""
    wb = body_wind(Wind(*wind).vector(), pose[2])
    return accel_body(p, vel, cmd, wb)


def pose_rate(pose, vel) -> np.ndarray:
    psi = pose[..., 2]
    c, s = np.cos(psi), np.sin(psi)
    u, v, r = vel[..., 0], vel[..., 1], vel[..., 2]
    return np.stack([c * u - s * v, s * u + c * v, r], axis=-1)


def _deriv(p, eta, nu, cmd, wg):
    return pose_rate(eta, nu), accel_body(p, nu, cmd, body_wind(wg, eta[2]))


def euler_update(p: VesselParams, eta: np.ndarray, nu: np.ndarray, cmd, wind_global, dt: float):
    """One forward-Euler step on raw arrays; heading left unwrapped."""
    deta, dnu = _deriv(p, eta, nu, cmd, wind_global)
    return eta + dt * deta, nu + dt * dnu


def rk4_update(p: VesselParams, eta: np.ndarray, nu: np.ndarray, cmd, wind_global, dt: float):
    k1e, k1v = _deriv(p, eta, nu, cmd, wind_global)
    k2e, k2v = _deriv(p, eta + 0.5 * dt * k1e, nu + 0.5 * dt * k1v, cmd, wind_global)
    k3e, k3v = _deriv(p, eta + 0.5 * dt * k2e, nu + 0.5 * dt * k2v, cmd, wind_global)
    k4e, k4v = _deriv(p, eta + dt * k3e, nu + dt * k3v, cmd, wind_global)
    eta = eta + dt / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)
    nu = nu + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return eta, nu


def step(p: VesselParams, s: SimState, cmd, wind: Wind, dt: float, method: str = "rk4") -> SimState:
    """Advance the plant by ``dt`` under a held command and wind."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cmd = ThrustCmd.clamped(*cmd)
    eta = np.array(s.pose, dtype=float)
    nu = np.array(s.vel, dtype=float)
    wg = Wind(*wind).vector()
    if method == "rk4":
        eta, nu = rk4_update(p, eta, nu, cmd, wg, dt)
    elif method == "euler":
        eta, nu = euler_update(p, eta, nu, cmd, wg, dt)
    else:
        raise ValueError(f"unknown integrator {method!r}")
    return SimState(
        Pose(float(eta[0]), float(eta[1]), wrap_angle(float(eta[2]))),
        BodyVelocity(float(nu[0]), float(nu[1]), float(nu[2])),
        s.t + dt,
    )
