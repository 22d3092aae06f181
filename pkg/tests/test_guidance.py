import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helmkeeper.guidance import (
    STATION_KEEPING,
    TRACKING,
    WORDS,
    ControllerBundle,
    ControllerGains,
    SupervisorState,
    allocate_thrust,
    backstepping_control,
    cross_track,
    dubins_candidates,
    dubins_plan,
    ilos_step,
    initial_supervisor,
    sliding_mode_control,
    supervisor_step,
    switching_term,
)
from helmkeeper.models import SDModel
from helmkeeper.vessel import ThrustCmd, VesselParams, Wind, rotation, thrust_wrench, wrap_angle

P = VesselParams()
G = ControllerGains()
ZERO = np.zeros(3)
coord = st.floats(-60, 60, allow_nan=False)
heading = st.floats(-math.pi, math.pi)


@given(st.floats(0, 80), heading)
def test_straight_dubins(d, psi):
    start = (1.0, 2.0, psi)
    goal = (1.0 + d * math.cos(psi), 2.0 + d * math.sin(psi), psi)
    path = dubins_plan(start, goal, 5.0)
    assert path.length == pytest.approx(d, abs=1e-6)


@given(heading, heading)
def test_turn_in_place(psi0, psi1):
    path = dubins_plan((0, 0, psi0), (0, 0, psi1), 5.0)
    assert path.length >= 5.0 * abs(wrap_angle(psi1 - psi0)) - 1e-9
    assert all(kind in "LR" for kind, length in path.segments if length > 1e-9)


def test_random_pairs_shortest_and_reach_goal():
    rng = np.random.default_rng(0)
    for _ in range(200):
        start = (*rng.uniform(-40, 40, 2), rng.uniform(-math.pi, math.pi))
        goal = (*rng.uniform(-40, 40, 2), rng.uniform(-math.pi, math.pi))
        path = dubins_plan(start, goal, 5.0)
        for segs in dubins_candidates(start, goal, 5.0).values():
            assert path.length <= sum(l for _, l in segs) + 1e-9
        end = path.point_at(path.length)
        assert np.hypot(end[0] - goal[0], end[1] - goal[1]) < 1e-6
        assert abs(wrap_angle(end[2] - goal[2])) < 1e-6


def test_word_set_and_radius_validation():
    assert sorted(WORDS) == sorted(["LSL", "RSR", "LSR", "RSL", "RLR", "LRL"])
    with pytest.raises(ValueError):
        dubins_plan((0, 0, 0), (5, 5, 0), 0.0)


def straight_path():
    return dubins_plan((0.0, 0.0, 0.0), (40.0, 0.0, 0.0), 5.0)


def test_ilos_on_path_follows_tangent():
    psi_d, u_d, sigma = ilos_step(straight_path(), (10.0, 0.0, 0.0), G, 0.0, 0.2)
    assert psi_d == pytest.approx(0.0, abs=1e-12)
    assert u_d == G.cruise_speed
    assert sigma == pytest.approx(0.0, abs=1e-12)


def test_ilos_steers_back_toward_path():
    path = straight_path()
    # heading 0 points along +x; the right-hand side in NED is +y
    e, _ = cross_track(path, 10.0, 2.0)
    assert e > 0
    psi_d, _, _ = ilos_step(path, (10.0, 2.0, 0.0), G, 0.0, 0.2)
    assert psi_d < 0.0


def test_ilos_integral_grows_under_constant_error():
    path = straight_path()
    sigma, history = 0.0, []
    for _ in range(50):
        _, _, sigma = ilos_step(path, (10.0, 1.0, 0.0), G, sigma, 0.2)
        history.append(sigma)
    assert np.all(np.diff(history) > 0)


@given(coord, coord, heading)
def test_controllers_zero_at_goal(x, y, psi):
    goal = np.array([x, y, psi])
    assert np.allclose(backstepping_control(goal, ZERO, goal, ZERO, ZERO, G, P), 0.0, atol=1e-12)
    tau, integral = sliding_mode_control(goal, ZERO, goal, ZERO, ZERO, ZERO, G, P, 0.2)
    assert np.allclose(tau, 0.0, atol=1e-12) and np.allclose(integral, 0.0)


@given(heading, st.floats(-1.0, 1.0).filter(lambda e: abs(e) > 1e-3))
def test_backstepping_pure_heading_error_is_pure_yaw(psi, err):
    tau = backstepping_control((3.0, 4.0, psi + err), ZERO, (3.0, 4.0, psi), ZERO, ZERO, G, P)
    assert abs(tau[0]) < 1e-9 and abs(tau[1]) < 1e-9
    assert tau[2] != 0.0


def test_backstepping_linear_in_kp():
    pose, vel, ref = np.array([1.0, -2.0, 0.4]), np.array([0.3, 0.1, -0.05]), np.zeros(3)
    g2 = ControllerGains(kp=tuple(2 * k for k in G.kp))
    t1 = backstepping_control(pose, vel, ref, ZERO, ZERO, G, P)
    t2 = backstepping_control(pose, vel, ref, ZERO, ZERO, g2, P)
    eta_e = pose - ref
    np.testing.assert_allclose(t2 - t1, -rotation(pose[2]).T @ (np.array(G.kp) * eta_e), rtol=1e-12, atol=1e-12)


def test_switching_term_regions():
    E, U = np.array(G.E), np.array(G.U)
    assert np.array_equal(switching_term(np.zeros(3), G), np.zeros(3))
    np.testing.assert_array_equal(switching_term(2 * E, G), U)
    np.testing.assert_array_equal(switching_term(-E, G), -U)
    np.testing.assert_allclose(switching_term(0.3 * E, G), 0.3 * U, rtol=1e-14)


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_switching_term_bounded(s):
    assert np.all(np.abs(switching_term(s, G)) <= np.array(G.U))


def test_allocate_thrust_examples():
    assert allocate_thrust((2 * P.K, 0, 0), P) == ThrustCmd(1.0, 1.0)
    assert allocate_thrust((0, 123.0, 0), P) == ThrustCmd(0.0, 0.0)
    up, us = allocate_thrust((0, 0, P.K * P.B), P)
    assert up == pytest.approx(1.0) and us == pytest.approx(-1.0)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_allocation_inverts_thrust_map(up, us):
    back = allocate_thrust(thrust_wrench(P, (up, us)), P)
    assert back.port == pytest.approx(up, abs=1e-10) and back.starboard == pytest.approx(us, abs=1e-10)


def backstep_bundle():
    return ControllerBundle("backstep", P, G)


def test_start_inside_capture_disc_station_keeps():
    sup = initial_supervisor((-14.0, -3.0, 0.5), (0, 0, 0))
    assert sup.mode == STATION_KEEPING and sup.path is None


def test_displacement_beyond_release_radius_replans():
    goal = np.zeros(3)
    sup = initial_supervisor((-5.0, 0.0, 0.0), goal)
    supervisor_step(sup, (-5.0, 0.0, 0.0), ZERO, goal, backstep_bundle(), Wind(0, 0), 0.2)
    assert sup.mode == STATION_KEEPING
    replans = sup.replans
    supervisor_step(sup, (-25.0, 0.0, 0.0), ZERO, goal, backstep_bundle(), Wind(0, 0), 0.2)
    assert sup.mode == TRACKING and sup.path is not None and sup.replans == replans + 1
    assert sup.path.start[0] == -25.0


def test_hysteresis_band_has_no_chatter():
    goal = np.zeros(3)
    bundle = backstep_bundle()
    sup = initial_supervisor((-30.0, 0.0, 0.0), goal)
    assert sup.mode == TRACKING
    trace = []
    # approach, capture, then oscillate inside (R_S, R_D)
    dists = list(np.linspace(30, 14, 17)) + list(17.5 + 2.4 * np.sin(np.linspace(0, 12 * np.pi, 200)))
    for d in dists:
        supervisor_step(sup, (-d, 0.0, 0.0), ZERO, goal, bundle, Wind(0, 0), 0.2)
        trace.append(sup.mode)
    first_sk = trace.index(STATION_KEEPING)
    assert dists[first_sk] < sup.R_S
    assert all(m == STATION_KEEPING for m in trace[first_sk:])
    # and inside the band while tracking nothing switches either
    sup = initial_supervisor((-30.0, 0.0, 0.0), goal)
    for d in 17.5 + 2.4 * np.sin(np.linspace(0, 6 * np.pi, 100)):
        supervisor_step(sup, (-d, 0.0, 0.0), ZERO, goal, bundle, Wind(0, 0), 0.2)
        assert sup.mode == TRACKING


def test_mode_change_resets_integrators():
    goal = np.zeros(3)
    bundle = ControllerBundle("sliding", P, G)
    sup = initial_supervisor((-5.0, 1.0, 0.3), goal)
    for _ in range(5):
        supervisor_step(sup, (-5.0, 1.0, 0.3), ZERO, goal, bundle, Wind(0, 0), 0.2)
    assert np.any(sup.smc_integral != 0)
    supervisor_step(sup, (-25.0, 0.0, 0.0), ZERO, goal, bundle, Wind(0, 0), 0.2)
    assert np.array_equal(sup.smc_integral, np.zeros(3))


def test_mpc_bundle_records_solve_time():
    goal = np.zeros(3)
    bundle = ControllerBundle("mpc", P, G, SDModel(P))
    sup = initial_supervisor((-3.0, 0.0, 0.0), goal)
    cmd, sup = supervisor_step(sup, (-3.0, 0.0, 0.0), ZERO, goal, bundle, Wind(3, 0), 0.2)
    assert sup.last_solve_time is not None and sup.warm is not None
    assert cmd.port > 0 and cmd.starboard > 0
    assert bundle.sk_label == "STATION_KEEPING-MPC"
    with pytest.raises(ValueError):
        ControllerBundle("mpc", P, G)


def test_invalid_radii_and_gains():
    with pytest.raises(ValueError):
        SupervisorState(R_S=20.0, R_D=15.0)
    with pytest.raises(ValueError):
        ControllerGains(kp=(0.0, 1.0, 1.0))
    assert ControllerGains.from_dict({"kp": [1, 2, 3]}).kp == (1, 2, 3)
