"""Guidance and baseline control around the MPC.

Dubins words use the planar convention: ``L`` arcs increase the heading angle,
``R`` arcs decrease it (in NED, where heading grows clockwise seen from above,
an ``L`` arc is physically a starboard turn).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import Model
from .mpc import MpcConfig, MpcSolution, goal_state, select_weights, solve
from .vessel import ThrustCmd, VesselParams, Wind, mass_matrix, rotation, wrap_angle

WORDS = ("LSL", "RSR", "LSR", "RSL", "RLR", "LRL")
TRACKING = "TRACKING"
STATION_KEEPING = "STATION_KEEPING"


def _mod2pi(a: float) -> float:
    w = a - 2.0 * math.pi * math.floor(a / (2.0 * math.pi))
    # a rounding-level negative angle is zero, not a full turn
    return 0.0 if 2.0 * math.pi - w < 1e-10 else w


# ------------------------------------------------------------------- Dubins

def _word_lengths(word: str, a: float, b: float, d: float):
    """Normalized (t, p, q) for one word or None when infeasible."""
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    c_ab = math.cos(a - b)
    if word == "LSL":
        p_sq = 2 + d * d - 2 * c_ab + 2 * d * (sa - sb)
        if p_sq < 0:
            return None
        tmp = math.atan2(cb - ca, d + sa - sb)
        return _mod2pi(tmp - a), math.sqrt(p_sq), _mod2pi(b - tmp)
    if word == "RSR":
        p_sq = 2 + d * d - 2 * c_ab + 2 * d * (sb - sa)
        if p_sq < 0:
            return None
        tmp = math.atan2(ca - cb, d - sa + sb)
        return _mod2pi(a - tmp), math.sqrt(p_sq), _mod2pi(tmp - b)
    if word == "LSR":
        p_sq = -2 + d * d + 2 * c_ab + 2 * d * (sa + sb)
        if p_sq < 0:
            return None
        p = math.sqrt(p_sq)
        tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
        return _mod2pi(tmp - a), p, _mod2pi(tmp - _mod2pi(b))
    if word == "RSL":
        p_sq = -2 + d * d + 2 * c_ab - 2 * d * (sa + sb)
        if p_sq < 0:
            return None
        p = math.sqrt(p_sq)
        tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
        return _mod2pi(a - tmp), p, _mod2pi(b - tmp)
    if word == "RLR":
        tmp = (6.0 - d * d + 2 * c_ab + 2 * d * (sa - sb)) / 8.0
        if abs(tmp) > 1:
            return None
        phi = math.atan2(ca - cb, d - sa + sb)
        p = _mod2pi(2 * math.pi - math.acos(tmp))
        t = _mod2pi(a - phi + _mod2pi(p / 2.0))
        return t, p, _mod2pi(a - b - t + _mod2pi(p))
    if word == "LRL":
        tmp = (6.0 - d * d + 2 * c_ab + 2 * d * (sb - sa)) / 8.0
        if abs(tmp) > 1:
            return None
        phi = math.atan2(ca - cb, d + sa - sb)
        p = _mod2pi(2 * math.pi - math.acos(tmp))
        t = _mod2pi(-a - phi + p / 2.0)
        return t, p, _mod2pi(_mod2pi(b) - a - t + _mod2pi(p))
    raise ValueError(f"unknown Dubins word {word!r}")


@dataclass
class DubinsPath:
    start: tuple
    end: tuple
    radius: float
    word: str
    segments: list  # [(kind, length_m)] with kind in "LSR"
    resolution: float = 0.1
    _samples: np.ndarray = field(default=None, repr=False)

    @property
    def length(self) -> float:
        return float(sum(l for _, l in self.segments))

    def point_at(self, s: float) -> np.ndarray:
        """Pose at arc length ``s``; beyond the end the final tangent is extended."""
        x, y, psi = map(float, self.start)
        remaining = max(s, 0.0)
        for kind, seg_len in self.segments:
            ds = min(remaining, seg_len)
            x, y, psi = _advance(x, y, psi, kind, ds, self.radius)
            remaining -= ds
            if remaining <= 0:
                break
        if remaining > 0:
            x, y = x + remaining * math.cos(psi), y + remaining * math.sin(psi)
        return np.array([x, y, wrap_angle(psi)])

    def samples(self) -> np.ndarray:
        if self._samples is None:
            n = max(2, int(math.ceil(self.length / self.resolution)) + 1)
            s = np.linspace(0.0, self.length, n)
            self._samples = np.array([np.r_[si, self.point_at(si)] for si in s])
        return self._samples

    def nearest(self, x: float, y: float):
        """Closest path point (arc length, x, y, tangent heading), end tangent extended."""
        pts = self.samples()
        i = int(np.argmin((pts[:, 1] - x) ** 2 + (pts[:, 2] - y) ** 2))
        s, px, py, psi = pts[i]
        if i == len(pts) - 1:
            # project onto the straight continuation beyond the end
            along = (x - px) * math.cos(psi) + (y - py) * math.sin(psi)
            if along > 0:
                s += along
                px, py = px + along * math.cos(psi), py + along * math.sin(psi)
        return s, px, py, psi


def _advance(x, y, psi, kind, ds, radius):
    if kind == "S":
        return x + ds * math.cos(psi), y + ds * math.sin(psi), psi
    sgn = 1.0 if kind == "L" else -1.0
    dpsi = sgn * ds / radius
    # chord of a circular arc
    x += radius * sgn * (math.sin(psi + dpsi) - math.sin(psi))
    y += radius * sgn * (-math.cos(psi + dpsi) + math.cos(psi))
    return x, y, psi + dpsi


def dubins_candidates(start, goal, radius: float) -> dict:
    """Every feasible word with its segment list (lengths in meters)."""
    if radius <= 0:
        raise ValueError("turn radius must be positive")
    dx, dy = goal[0] - start[0], goal[1] - start[1]
    D = math.hypot(dx, dy)
    d = D / radius
    theta = _mod2pi(math.atan2(dy, dx)) if D > 0 else _mod2pi(start[2])
    a = _mod2pi(start[2] - theta)
    b = _mod2pi(goal[2] - theta)
    out = {}
    for word in WORDS:
        tpq = _word_lengths(word, a, b, d)
        if tpq is not None:
            out[word] = [(k, v * radius) for k, v in zip(word, tpq)]
    return out


def dubins_plan(start, goal, radius: float = 5.0) -> DubinsPath:
    """Shortest Dubins path; ties go to the earlier word in ``WORDS``."""
    cands = dubins_candidates(start, goal, radius)
    best = min(WORDS, key=lambda w: (sum(l for _, l in cands[w]) if w in cands else math.inf, WORDS.index(w)))
    return DubinsPath(tuple(map(float, start)), tuple(map(float, goal)), radius, best, cands[best])


# ------------------------------------------------------------------ gains

@dataclass(frozen=True)
class ControllerGains:
    lam: tuple = (0.15, 0.15, 0.6)
    kp: tuple = (15.0, 15.0, 12.0)
    kd: tuple = (150.0, 150.0, 40.0)
    U: tuple = (120.0, 120.0, 40.0)
    E: tuple = (0.4, 0.4, 0.15)
    lookahead: float = 6.0
    ilos_kappa: float = 0.5
    cruise_speed: float = 0.8
    track_surge_gain: float = 1.0
    track_heading_gain: float = 1.5
    track_rate_gain: float = 1.2

    def __post_init__(self):
        vals = [*self.lam, *self.kp, *self.kd, *self.U, *self.E, self.lookahead, self.ilos_kappa]
        if any(v <= 0 for v in vals):
            raise ValueError("controller gains must be strictly positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerGains":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# ------------------------------------------------------------------- ILOS

def cross_track(path: DubinsPath, x: float, y: float):
    """Signed cross-track error (positive to the right of the path) and path heading."""
    _, px, py, psi_p = path.nearest(x, y)
    e = -(x - px) * math.sin(psi_p) + (y - py) * math.cos(psi_p)
    return e, psi_p


def ilos_step(path: DubinsPath, pose, gains: ControllerGains, sigma: float, dt: float):
    """Integral LOS heading command; returns (psi_d, surge_d, new sigma)."""
    e, psi_p = cross_track(path, pose[0], pose[1])
    delta, kappa = gains.lookahead, gains.ilos_kappa
    psi_d = wrap_angle(psi_p - math.atan((e + kappa * sigma) / delta))
    sigma_dot = delta * e / ((e + kappa * sigma) ** 2 + delta**2)
    return psi_d, gains.cruise_speed, sigma + dt * sigma_dot


# --------------------------------------------------------- feedback laws

def simplified_matrices(p: VesselParams, vel):
    """Diagonal mass, Coriolis and damping with cross terms dropped (xG = xF = 0)."""
    M = mass_matrix(p)
    m11, m22, m33 = M[0, 0], M[1, 1], M[2, 2]
    u, v, r = vel
    M1 = np.diag([m11, m22, m33])
    C1 = np.array([[0.0, 0.0, -m22 * v], [0.0, 0.0, m11 * u], [m22 * v, -m11 * u, 0.0]])
    D1 = np.diag([p.Xu + p.Xuu * abs(u), p.Yv + p.Yvv * abs(v), p.Nr + p.Nrr * abs(r)])
    return M1, C1, D1


def _dR(psi: float, r: float) -> np.ndarray:
    """Time derivative of R(psi) for yaw rate r."""
    c, s = math.cos(psi), math.sin(psi)
    return r * np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _tracking_error(pose, eta_s):
    e = np.asarray(pose, dtype=float) - np.asarray(eta_s, dtype=float)
    e[2] = wrap_angle(e[2])
    return e


def backstepping_control(pose, vel, eta_s, eta_s_dot, eta_s_ddot, gains: ControllerGains, p: VesselParams) -> np.ndarray:
    """Nonlinear PD backstepping body wrench."""
    vel = np.asarray(vel, dtype=float)
    R = rotation(pose[2])
    Rd = _dR(pose[2], vel[2])
    lam = np.diag(gains.lam)
    eta_e = _tracking_error(pose, eta_s)
    eta_e_dot = R @ vel - np.asarray(eta_s_dot, dtype=float)
    eta_r_dot = np.asarray(eta_s_dot, dtype=float) - lam @ eta_e
    eta_r_ddot = np.asarray(eta_s_ddot, dtype=float) - lam @ eta_e_dot
    s = eta_e_dot + lam @ eta_e
    M1, C1, D1 = simplified_matrices(p, vel)
    nu_r = R.T @ eta_r_dot
    return (
        M1 @ (R.T @ eta_r_ddot + Rd.T @ eta_r_dot)
        + C1 @ nu_r
        + D1 @ nu_r
        - R.T @ (np.diag(gains.kd) @ s)
        - R.T @ (np.diag(gains.kp) @ eta_e)
    )


def sat(x):
    return np.clip(x, -1.0, 1.0)


def sliding_mode_control(pose, vel, eta_s, eta_s_dot, eta_s_ddot, integral, gains: ControllerGains,
                         p: VesselParams, dt: float):
    """Boundary-layer sliding-mode wrench; returns (tau, updated integral of eta_e)."""
    vel = np.asarray(vel, dtype=float)
    R = rotation(pose[2])
    Rd = _dR(pose[2], vel[2])
    lam = np.asarray(gains.lam)
    eta_e = _tracking_error(pose, eta_s)
    integral = np.asarray(integral, dtype=float) + dt * eta_e
    eta_e_dot = R @ vel - np.asarray(eta_s_dot, dtype=float)
    s = eta_e_dot + 2.0 * lam * eta_e + lam**2 * integral
    M1, C1, D1 = simplified_matrices(p, vel)
    nu_s = R.T @ np.asarray(eta_s_dot, dtype=float)
    tau = (
        M1 @ (R.T @ np.asarray(eta_s_ddot, dtype=float) + Rd.T @ np.asarray(eta_s_dot, dtype=float))
        + C1 @ nu_s
        + D1 @ nu_s
        - R.T @ (np.asarray(gains.U) * sat(s / np.asarray(gains.E)))
    )
    return tau, integral


def switching_term(s, gains: ControllerGains) -> np.ndarray:
    return np.asarray(gains.U) * sat(np.asarray(s, dtype=float) / np.asarray(gains.E))


def allocate_thrust(tau, p: VesselParams) -> ThrustCmd:
    """Invert the surge/yaw thrust map; sway is unactuated and ignored."""
    fx, mz = float(tau[0]), float(tau[2])
    up = fx / (2.0 * p.K) + mz / (p.K * p.B)
    us = fx / (2.0 * p.K) - mz / (p.K * p.B)
    return ThrustCmd.clamped(up, us)


def heading_speed_wrench(vel, psi, psi_d, u_d, gains: ControllerGains, p: VesselParams) -> np.ndarray:
    """Surge-speed and heading regulation used while following the Dubins path."""
    M1, _, D1 = simplified_matrices(p, vel)
    fx = D1[0, 0] * u_d + M1[0, 0] * gains.track_surge_gain * (u_d - vel[0])
    mz = M1[2, 2] * (-gains.track_heading_gain * wrap_angle(psi - psi_d) - gains.track_rate_gain * vel[2])
    mz += D1[2, 2] * (-gains.track_heading_gain * wrap_angle(psi - psi_d))
    return np.array([fx, 0.0, mz])


# ------------------------------------------------------------- supervisor

@dataclass
class ControllerBundle:
    """What runs in station-keeping mode: ``mpc`` (with a model), ``backstep`` or ``sliding``."""

    kind: str
    params: VesselParams
    gains: ControllerGains = field(default_factory=ControllerGains)
    model: Optional[Model] = None
    mpc: MpcConfig = field(default_factory=MpcConfig)

    def __post_init__(self):
        if self.kind not in ("mpc", "backstep", "sliding"):
            raise ValueError(f"unknown station-keeping controller {self.kind!r}")
        if self.kind == "mpc" and self.model is None:
            raise ValueError("MPC station keeping needs a model")

    @property
    def sk_label(self) -> str:
        return f"{STATION_KEEPING}-{self.kind.upper()}"


@dataclass
class SupervisorState:
    mode: str = TRACKING
    path: Optional[DubinsPath] = None
    sigma: float = 0.0
    smc_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R_S: float = 15.0
    R_D: float = 20.0
    R_H: float = 10.0
    turn_radius: float = 5.0
    warm: Optional[MpcSolution] = None
    last_cmd: tuple = (0.0, 0.0)
    last_solve_time: Optional[float] = None
    replans: int = 0

    def __post_init__(self):
        if not (0 < self.R_S < self.R_D) or self.R_H > self.R_S or self.R_H <= 0:
            raise ValueError("radii must satisfy 0 < R_H <= R_S < R_D")

    def reset_integrators(self):
        self.sigma = 0.0
        self.smc_integral = np.zeros(3)
        self.warm = None


def _distance(pose, goal) -> float:
    return math.hypot(pose[0] - goal[0], pose[1] - goal[1])


def supervisor_step(sup: SupervisorState, pose, vel, goal, bundle: ControllerBundle, wind: Wind, dt: float):
    """One control decision; mutates and returns ``sup`` alongside the command."""
    dist = _distance(pose, goal)
    if sup.mode == TRACKING and dist < sup.R_S:
        sup.mode = STATION_KEEPING
        sup.reset_integrators()
    elif sup.mode == STATION_KEEPING and dist > sup.R_D:
        sup.mode = TRACKING
        sup.path = None
        sup.reset_integrators()
    if sup.mode == TRACKING and sup.path is None:
        sup.path = dubins_plan(pose, goal, sup.turn_radius)
        sup.replans += 1

    sup.last_solve_time = None
    if sup.mode == TRACKING:
        psi_d, u_d, sup.sigma = ilos_step(sup.path, pose, bundle.gains, sup.sigma, dt)
        cmd = allocate_thrust(heading_speed_wrench(vel, pose[2], psi_d, u_d, bundle.gains, bundle.params), bundle.params)
    elif bundle.kind == "mpc":
        x = np.array([*vel, *pose], dtype=float)
        w = select_weights(pose, goal, sup.R_H, bundle.mpc)
        sol = solve(bundle.model, x, goal_state(goal), Wind(*wind), bundle.mpc, weights=w,
                    warm_start=sup.warm, u_prev=np.asarray(sup.last_cmd, dtype=float))
        sup.warm = sol
        sup.last_solve_time = sol.solve_time
        cmd = ThrustCmd.clamped(*sol.commands[0])
    else:
        zero = np.zeros(3)
        if bundle.kind == "backstep":
            tau = backstepping_control(pose, vel, goal, zero, zero, bundle.gains, bundle.params)
        else:
            tau, sup.smc_integral = sliding_mode_control(pose, vel, goal, zero, zero, sup.smc_integral,
                                                         bundle.gains, bundle.params, dt)
        cmd = allocate_thrust(tau, bundle.params)
    sup.last_cmd = tuple(cmd)
    return cmd, sup


def initial_supervisor(pose, goal, **radii) -> SupervisorState:
    sup = SupervisorState(**radii)
    if _distance(pose, goal) < sup.R_S:
        sup.mode = STATION_KEEPING
    else:
        sup.path = dubins_plan(pose, goal, sup.turn_radius)
        sup.replans = 1
    return sup
