"""Independent reference computations shared by the unit and acceptance suites."""
import math

import numpy as np

from helmkeeper.models import HybridModel, MlpModel, Normalizer, SDModel, step_state
from helmkeeper.sysid import sem_loss, trainable, with_trainable
from helmkeeper.vessel import VesselParams

P = VesselParams()


def random_normalizer(rng):
    return Normalizer(rng.normal(0, 0.3, 7), rng.uniform(0.5, 2.0, 7), rng.normal(0, 0.1, 3), rng.uniform(0.1, 1.0, 3))


def random_model(kind, seed):
    rng = np.random.default_rng(seed)
    mlp = MlpModel.init(12, random_normalizer(rng), seed=seed)
    mlp = mlp.with_params(W2=mlp.W2 * 10, b1=rng.normal(0, 0.3, 12), b2=rng.normal(0, 0.3, 3))
    if kind == "nnsem":
        return mlp
    if kind == "sd":
        return SDModel(P.perturbed(0.2, seed))
    return HybridModel(P.perturbed(0.2, seed), mlp, rng.normal(0.5, 0.3, (3, 6)))


def fd_linearize(model, x, u, wind, dt, h=1e-5):
    A = np.zeros((6, 6))
    B = np.zeros((6, 2))
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        d = step_state(model, x + e, u, wind, dt) - step_state(model, x - e, u, wind, dt)
        d[5] = (d[5] + math.pi) % (2 * math.pi) - math.pi
        A[:, i] = d / (2 * h)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        B[:, j] = (step_state(model, x, u + e, wind, dt) - step_state(model, x, u - e, wind, dt)) / (2 * h)
    return A, B


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def fd_grad(model, batch, h=1e-6):
    params = trainable(model)
    out = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            plus, minus = v.copy(), v.copy()
            plus[idx] += h
            minus[idx] -= h
            lp = sem_loss(with_trainable(model, {**params, k: plus}), batch)
            lm = sem_loss(with_trainable(model, {**params, k: minus}), batch)
            g[idx] = (lp - lm) / (2 * h)
        out[k] = g
    return out


def grad_rel_error(analytic: dict, numeric: dict) -> float:
    """Worst per-entry relative error, with a floor of 1e-6 of the largest gradient magnitude."""
    scale = max(np.max(np.abs(g)) for g in numeric.values())
    floor = max(1e-6 * scale, 1e-12)
    return max(float(np.max(np.abs(analytic[k] - numeric[k]) / np.maximum(np.abs(numeric[k]), floor))) for k in numeric)


def synthetic_log(t, pose, vel, mode="STATION_KEEPING-MPC"):
    from helmkeeper.benchmark import RunLog

    n = len(t)
    return RunLog(np.asarray(t, float), np.asarray(pose, float).reshape(n, 3), np.asarray(vel, float).reshape(n, 3),
                  np.zeros((n, 2)), [mode] * n, np.zeros((n, 2)), np.full(n, np.nan))


def random_dock_log(seed, n=1000, dt=0.2):
    """Piecewise-constant log that wanders in and out of the docking bounds."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) * dt
    pose, vel = np.zeros((n, 3)), np.zeros((n, 3))
    k = 0
    while k < n:
        run = int(rng.integers(5, 250))
        good = rng.random() < 0.6
        d = rng.uniform(0, 14) if good else rng.uniform(0, 20)
        bearing = rng.uniform(-0.3, 0.3) if good else rng.uniform(-math.pi, math.pi)
        pose[k:k + run] = [d * math.cos(bearing), d * math.sin(bearing), rng.uniform(-0.5, 0.5)]
        vel[k:k + run] = [rng.uniform(0, 0.45 if good else 0.8), 0.0, rng.uniform(-0.1, 0.1)]
        k += run
    return synthetic_log(t, pose, vel)


def windows_disjoint_and_maximal(log, goal, windows, settle_s, min_s):
    """Check the windows against a brute-force scan of the per-sample criteria."""
    ok = np.array([
        math.hypot(u, v) <= 0.5 and abs(r) <= math.radians(5.0)
        and math.hypot(x - goal[0], y - goal[1]) <= 15.0
        and (math.hypot(x - goal[0], y - goal[1]) < 1e-9
             or abs(math.remainder(math.atan2(y - goal[1], x - goal[0]) - goal[2], 2 * math.pi)) <= math.radians(20.0))
        and t >= log.t[0] + settle_s - 1e-9
        for t, (x, y, _), (u, v, r) in zip(log.t, log.pose, log.vel)
    ])
    spans = [(int(np.searchsorted(log.t, a)), int(np.searchsorted(log.t, b))) for a, b, _, _ in windows]
    for (a, b), (c, _) in zip(spans, spans[1:]):
        if not b < c:
            return False
    for a, b in spans:
        if not ok[a:b + 1].all() or log.t[b] - log.t[a] < min_s - 1e-9:
            return False
        # maximal: neither neighbor may satisfy the criteria
        if (a > 0 and ok[a - 1]) or (b + 1 < len(ok) and ok[b + 1]):
            return False
    # complete: every qualifying run is reported
    covered = np.zeros(len(ok), bool)
    for a, b in spans:
        covered[a:b + 1] = True
    k = 0
    while k < len(ok):
        if ok[k] and not covered[k]:
            j = k
            while j + 1 < len(ok) and ok[j + 1]:
                j += 1
            if log.t[j] - log.t[k] >= min_s - 1e-9:
                return False
            k = j + 1
        else:
            k += 1
    return True
