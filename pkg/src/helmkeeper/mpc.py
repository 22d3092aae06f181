"""Iterative-LQR model-predictive controller for station keeping.

The stage cost is the diagonal quadratic over ``alpha = [x, u]`` evaluated in
goal-centred coordinates (position relative to the goal, heading as a wrapped
residual), so the goal term of the affine part vanishes. Command-rate
penalization is handled exactly by augmenting the state with the previous
command.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .models import AugmentedState, Model, linearize, step_state
from .vessel import Wind, wrap_angle

NX = 6
NU = 2
NZ = NX + NU


class MpcError(RuntimeError):
    pass


@dataclass(frozen=True)
class GoalWeights:
    k_u: float = 1.0
    k_v: float = 1.0
    k_r: float = 1.0
    k_x: float = 1.0
    k_y: float = 1.0
    k_psi: float = 1.0
    k_up: float = 0.1
    k_us: float = 0.1

    def __post_init__(self):
        if np.any(self.as_array() < 0):
            raise ValueError("goal weights must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.k_u, self.k_v, self.k_r, self.k_x, self.k_y, self.k_psi, self.k_up, self.k_us])

    @classmethod
    def from_dict(cls, d: dict) -> "GoalWeights":
        return cls(**d)


HEADING_MODE = GoalWeights(0.5, 0.5, 0.5, 2.0, 2.0, 20.0, 0.05, 0.05)
POSITION_MODE = GoalWeights(1.0, 1.0, 1.0, 8.0, 8.0, 0.0, 0.1, 0.1)


@dataclass(frozen=True)
class MpcConfig:
    horizon_steps: int = 20
    dt: float = 0.2
    lqr_iters: int = 2
    du_penalty: float = 0.001
    u_min: float = -1.0
    u_max: float = 1.0
    weights_position_mode: GoalWeights = POSITION_MODE
    weights_heading_mode: GoalWeights = HEADING_MODE

    def __post_init__(self):
        if self.horizon_steps < 2 or self.lqr_iters < 1 or self.du_penalty < 0 or self.dt <= 0:
            raise ValueError("invalid MPC configuration")
        if not self.u_min < self.u_max:
            raise ValueError("control bounds must satisfy u_min < u_max")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        d = dict(d)
        for key in ("weights_position_mode", "weights_heading_mode"):
            if key in d:
                d[key] = GoalWeights.from_dict(d[key])
        return cls(**d)


@dataclass
class MpcSolution:
    commands: np.ndarray  # (T, 2)
    states: np.ndarray  # (T, 6): x[1..T]
    stage_costs: np.ndarray  # (T,)
    total_cost: float
    solve_time: float
    cost_history: list = field(default_factory=list)


def _residual(x: np.ndarray, goal: np.ndarray) -> np.ndarray:
    e = x - goal
    e[..., 5] = wrap_angle(e[..., 5])
    return e


def stage_cost(x, u, goal, w: GoalWeights) -> float:
    """Quadratic station-keeping cost of one state/command pair."""
    e = _residual(np.asarray(x, dtype=float), np.asarray(goal, dtype=float))
    alpha = np.concatenate([e, np.asarray(u, dtype=float)])
    return float(0.5 * np.sum(w.as_array() * alpha * alpha))


def select_weights(pose, goal, R_H: float, cfg: MpcConfig) -> GoalWeights:
    """Heading-focused weights inside the R_H disc (boundary included), position focus outside."""
    if R_H <= 0:
        raise ValueError("R_H must be positive")
    g = np.asarray(goal, dtype=float)
    gx, gy = (g[3], g[4]) if g.shape == (6,) else (g[0], g[1])
    if np.hypot(pose[0] - gx, pose[1] - gy) <= R_H:
        return cfg.weights_heading_mode
    return replace(cfg.weights_position_mode, k_psi=0.0)


def _trajectory_cost(states, cmds, u_prev, goal, wdiag, du):
    e = _residual(states, goal)
    stage = 0.5 * (np.sum(wdiag[:NX] * e * e, axis=1) + np.sum(wdiag[NX:] * cmds * cmds, axis=1))
    prev = np.vstack([u_prev[None, :], cmds[:-1]])
    d = cmds - prev
    stage = stage + du * np.sum(d * d, axis=1)
    return stage, float(stage.sum())


def _box_qp(H: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Exact minimizer of 0.5 d'Hd + g'd over the 2-D box [lo, hi]; returns (d, free mask)."""
    a, b, c = H[0, 0], H[0, 1], H[1, 1]
    g0, g1 = g[0], g[1]
    det = a * c - b * b
    d0 = -(c * g0 - b * g1) / det
    d1 = -(a * g1 - b * g0) / det
    if lo[0] <= d0 <= hi[0] and lo[1] <= d1 <= hi[1]:
        return np.array([d0, d1]), (True, True)
    best, best_val, best_free = None, np.inf, None
    # one coordinate pinned at a bound, the other free (clipped candidates are rejected)
    for i in (0, 1):
        j = 1 - i
        hii, gi, gj, hjj = (a, g0, g1, c) if i == 0 else (c, g1, g0, a)
        for dj in (lo[j], hi[j]):
            di = -(gi + b * dj) / hii
            if lo[i] <= di <= hi[i]:
                val = 0.5 * (hii * di * di + hjj * dj * dj) + b * di * dj + gi * di + gj * dj
                if val < best_val:
                    d = np.empty(2)
                    d[i], d[j] = di, dj
                    best, best_val = d, val
                    best_free = (i == 0, i == 1)
    for d0 in (lo[0], hi[0]):
        for d1 in (lo[1], hi[1]):
            val = 0.5 * (a * d0 * d0 + c * d1 * d1) + b * d0 * d1 + g0 * d0 + g1 * d1
            if val < best_val:
                best, best_val, best_free = np.array([d0, d1]), val, (False, False)
    return best, best_free


def _backward(A, B, e_states, cmds, u_prev, wdiag, du, mu, lo, hi):
    """Riccati recursion on the command-augmented system; returns feedforward/feedback gains."""
    T = len(cmds)
    Q = np.diag(wdiag[:NX])
    Rc = np.diag(wdiag[NX:])
    eye = np.eye(NU)
    Vx = np.zeros(NZ)
    Vxx = np.zeros((NZ, NZ))
    Vx[:NX] = Q @ e_states[T - 1]
    Vxx[:NX, :NX] = Q
    ks = np.zeros((T, NU))
    Ks = np.zeros((T, NU, NZ))
    Az = np.zeros((NZ, NZ))
    Bz = np.zeros((NZ, NU))
    Bz[NX:, :] = eye
    for t in range(T - 1, -1, -1):
        u = cmds[t]
        p = u_prev if t == 0 else cmds[t - 1]
        lx = np.zeros(NZ)
        lxx = np.zeros((NZ, NZ))
        if t >= 1:
            lx[:NX] = Q @ e_states[t - 1]
            lxx[:NX, :NX] = Q
        diff = u - p
        lu = Rc @ u + 2.0 * du * diff
        lx[NX:] += -2.0 * du * diff
        lxx[NX:, NX:] += 2.0 * du * eye
        luu = Rc + 2.0 * du * eye
        lux = np.zeros((NU, NZ))
        lux[:, NX:] = -2.0 * du * eye
        Az[:NX, :NX] = A[t]
        Bz[:NX, :] = B[t]
        VxxA = Vxx @ Az
        Qx = lx + Az.T @ Vx
        Qu = lu + Bz.T @ Vx
        Qxx = lxx + Az.T @ VxxA
        Quu = luu + Bz.T @ Vxx @ Bz + mu * eye
        Qux = lux + Bz.T @ VxxA
        Quu = 0.5 * (Quu + Quu.T)
        if Quu[0, 0] <= 1e-12 or Quu[0, 0] * Quu[1, 1] - Quu[0, 1] ** 2 <= 1e-12 * Quu[0, 0]:
            return None
        k, free = _box_qp(Quu, Qu, lo - u, hi - u)
        if free == (True, True):
            K = -np.linalg.solve(Quu, Qux)
        elif free == (False, False):
            K = np.zeros((NU, NZ))
        else:
            i = 0 if free[0] else 1
            K = np.zeros((NU, NZ))
            K[i] = -Qux[i] / Quu[i, i]
        ks[t], Ks[t] = k, K
        Vx = Qx + K.T @ Quu @ k + K.T @ Qu + Qux.T @ k
        Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
    return ks, Ks


def _forward(model, x_init, wg, dt, nominal_x, nominal_u, u_prev, ks, Ks, alpha, lo, hi):
    T = len(nominal_u)
    states = np.empty((T, NX))
    cmds = np.empty((T, NU))
    x = x_init
    prev = u_prev
    for t in range(T):
        xbar = x_init if t == 0 else nominal_x[t - 1]
        dz = np.empty(NZ)
        dz[:NX] = x - xbar
        dz[5] = wrap_angle(dz[5])
        dz[NX:] = prev - (u_prev if t == 0 else nominal_u[t - 1])
        u = np.clip(nominal_u[t] + alpha * ks[t] + Ks[t] @ dz, lo, hi)
        x = step_state(model, x, u, wg, dt)
        states[t] = x
        cmds[t] = u
        prev = u
    return states, cmds


def _rollout(model, x_init, cmds, wg, dt):
    states = np.empty((len(cmds), NX))
    x = x_init
    for t, u in enumerate(cmds):
        x = step_state(model, x, u, wg, dt)
        states[t] = x
    return states


def solve(
    model: Model,
    x_init,
    goal,
    wind_global,
    cfg: MpcConfig,
    weights: GoalWeights | None = None,
    warm_start: MpcSolution | None = None,
    u_prev=None,
) -> MpcSolution:
    """Run ``cfg.lqr_iters`` iLQR iterations from a (warm-started) nominal command sequence.

    The wind is held constant in the global frame over the horizon. The caller
    applies ``commands[0]``.
    """
    t0 = time.perf_counter()
    T, dt = cfg.horizon_steps, cfg.dt
    lo = np.full(NU, cfg.u_min)
    hi = np.full(NU, cfg.u_max)
    x_init = np.asarray(x_init, dtype=float).copy()
    x_init[5] = wrap_angle(x_init[5])
    goal = np.asarray(goal, dtype=float)
    wg = wind_global.vector() if isinstance(wind_global, Wind) else np.asarray(wind_global, dtype=float)
    weights = weights or cfg.weights_heading_mode
    wdiag = weights.as_array()

    if warm_start is not None and len(warm_start.commands) == T:
        cmds = np.vstack([warm_start.commands[1:], warm_start.commands[-1:]])
    else:
        cmds = np.zeros((T, NU))
    cmds = np.clip(cmds, lo, hi)
    if u_prev is None:
        u_prev = warm_start.commands[0] if warm_start is not None else np.zeros(NU)
    u_prev = np.asarray(u_prev, dtype=float)

    states = _rollout(model, x_init, cmds, wg, dt)
    stage, cost = _trajectory_cost(states, cmds, u_prev, goal, wdiag, cfg.du_penalty)
    if not np.isfinite(cost):
        raise MpcError("non-finite cost on the initial nominal trajectory")
    history = [cost]
    mu = 0.0
    for _ in range(cfg.lqr_iters):
        xs = np.vstack([x_init[None, :], states[:-1]])
        A, B = linearize(model, xs, cmds, wg, dt)
        e_states = _residual(states, goal)
        gains = None
        while gains is None:
            gains = _backward(A, B, e_states, cmds, u_prev, wdiag, cfg.du_penalty, mu, lo, hi)
            if gains is None:
                mu = max(1e-6, 10.0 * mu)
                if mu > 1e6:
                    raise MpcError("Riccati recursion singular even after regularization")
        ks, Ks = gains
        accepted = False
        for alpha in (1.0, 0.5, 0.25, 0.1):
            new_states, new_cmds = _forward(model, x_init, wg, dt, states, cmds, u_prev, ks, Ks, alpha, lo, hi)
            new_stage, new_cost = _trajectory_cost(new_states, new_cmds, u_prev, goal, wdiag, cfg.du_penalty)
            if np.isfinite(new_cost) and new_cost <= cost:
                states, cmds, stage, cost = new_states, new_cmds, new_stage, new_cost
                accepted = True
                break
        if not accepted:
            mu = max(1e-4, 10.0 * mu)
        history.append(cost)
    if not np.isfinite(cost):
        raise MpcError("non-finite MPC cost")
    return MpcSolution(cmds, states, stage, cost, time.perf_counter() - t0, history)


def goal_state(pose) -> np.ndarray:
    """Augmented goal: zero velocity at the target pose."""
    return np.array([0.0, 0.0, 0.0, pose[0], pose[1], wrap_angle(pose[2])])


__all__ = [
    "AugmentedState",
    "GoalWeights",
    "MpcConfig",
    "MpcError",
    "MpcSolution",
    "goal_state",
    "select_weights",
    "solve",
    "stage_cost",
]
