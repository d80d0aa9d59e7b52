import numpy as np
import pytest

from seesaw_balance.control import (BalanceController, CoMTrajectory, ControllerConfig, ControllerMode,
                                    Gains)
from seesaw_balance.robot import robot_terms
from seesaw_balance.scenario import sample_state
from seesaw_balance.seesaw import SeesawParams
from seesaw_balance.sim import (FREE, RIGID, Disturbance, SimConfig, SimulationError,
                                assemble_and_solve, disturbance_force, initial_world, log_columns, run,
                                step)

P = SeesawParams()


def controller_for(model, world, params, mode=ControllerMode.MIXED_MOMENTUM, gains=None):
    rt = robot_terms(model, world.robot)
    ref = CoMTrajectory(rt.com, world.robot.q.copy())
    cfg = ControllerConfig(mode, gains or Gains.default(model.n))
    return BalanceController(model, cfg, ref, params)


def static_torque(model, world, params):
    return controller_for(model, world, params).step(0.0, world.robot, world.seesaw).tau


def test_static_loads(model10):
    world, params = initial_world(model10, P)
    sol = assemble_and_solve(model10, params, world, static_torque(model10, world, params))
    assert sol.f[2] + sol.f[8] == pytest.approx(304.11, abs=1e-6)
    assert sol.f_s[2] == pytest.approx((31 + 4) * 9.81, abs=1e-6)
    assert np.abs(sol.nu_dot).max() <= 1e-6 and np.abs(sol.nu_s_dot).max() <= 1e-6


def test_no_gravity_at_rest_stays_at_rest(model10):
    world, params = initial_world(model10, P)
    sol = assemble_and_solve(model10, params, world, np.zeros(10), gravity=0.0)
    for arr in (sol.nu_dot, sol.nu_s_dot, sol.f, sol.f_s):
        assert np.abs(arr).max() <= 1e-10


def test_constrained_blocks_are_exact(model, rng):
    for _ in range(10):
        world, params = sample_state(model, P, rng)
        sol = assemble_and_solve(model, params, world, rng.normal(scale=5.0, size=model.n))
        assert sol.kkt_residual <= 1e-9


def test_rigid_ground_blocks_are_exact(model, rng):
    world, _ = initial_world(model, None, mode=RIGID)
    world.robot.nu = rng.normal(scale=0.2, size=model.nv)
    sol = assemble_and_solve(model, None, world, rng.normal(scale=5.0, size=model.n))
    assert sol.kkt_residual <= 1e-9


def test_free_fall_com_acceleration(model10, rng):
    world, _ = initial_world(model10, None, mode=FREE)
    world.robot.q = world.robot.q + rng.uniform(-0.3, 0.3, size=10)
    dt = 1e-5
    nxt, _ = step(model10, None, world, np.zeros(10), dt)
    a_com = robot_terms(model10, nxt.robot).com_velocity / dt
    np.testing.assert_allclose(a_com, [0.0, 0.0, -9.81], atol=1e-9)


def test_impulse_changes_momentum(model10):
    world, _ = initial_world(model10, None, mode=FREE)
    push = Disturbance("torso", [10.0, 0, 0, 0, 0, 0], 0.0, 0.01)
    dt = 1e-3
    for _ in range(20):
        world, _ = step(model10, None, world, np.zeros(10), dt, [push], gravity=0.0)
    H = robot_terms(model10, world.robot).H
    assert H[0] == pytest.approx(0.1, rel=0.02)


def test_disturbance_window_length(model10):
    push = Disturbance("torso", np.ones(6), 0.02, 0.01)
    world, _ = initial_world(model10, None, mode=FREE)
    rt = robot_terms(model10, world.robot)
    active, t = 0, 0.0
    for _ in range(100):
        active += np.any(disturbance_force(model10, rt, [push], t) != 0)
        t += 1e-3
    assert active == 10


def test_unknown_disturbance_frame(model10):
    world, _ = initial_world(model10, None, mode=FREE)
    with pytest.raises(SimulationError):
        assemble_and_solve(model10, None, world, np.zeros(10), [Disturbance("head", np.ones(6), 0.0, 1.0)])
    with pytest.raises(ValueError):
        Disturbance("torso", np.ones(6), 0.0, 0.0)


def _frozen_run(model, params, dt, horizon=0.1):
    world, params = initial_world(model, params, theta=0.02)
    tau = static_torque(model, world, params)
    world.robot.nu = np.zeros(model.nv)
    for _ in range(int(round(horizon / dt))):
        world, _ = step(model, params, world, tau, dt)
    return np.r_[world.robot.q, world.seesaw.theta]


def test_first_order_self_convergence(model10):
    q1, q2, q4 = (_frozen_run(model10, P, dt) for dt in (2e-3, 1e-3, 5e-4))
    ratio = np.linalg.norm(q1 - q2) / np.linalg.norm(q2 - q4)
    assert 1.6 <= ratio <= 2.5


def test_run_is_bit_identical(model10):
    outs = []
    for _ in range(2):
        world, params = initial_world(model10, P, theta=0.01)
        ctrl = controller_for(model10, world, params)
        outs.append(run(model10, params, world, ctrl, 0.3))
    assert outs[0].fault is None
    np.testing.assert_array_equal(outs[0].rows, outs[1].rows)
    assert outs[0].columns == log_columns(10) and outs[0].rows.shape == (31, 53)


def test_open_loop_torque_does_not_balance(model10):
    # negative control: frozen static torques leave the board roll unstabilised
    world, params = initial_world(model10, P, theta=0.02)
    ctrl = controller_for(model10, world, params)
    tau = ctrl.step(0.0, world.robot, world.seesaw).tau
    theta0 = world.seesaw.theta
    faulted = False
    try:
        for _ in range(3000):
            world, _ = step(model10, params, world, tau, 1e-3)
            if abs(world.seesaw.theta) > 0.3:
                break
    except Exception:
        faulted = True
    assert faulted or abs(world.seesaw.theta) > 5 * abs(theta0)


def test_closed_loop_balances_tilted_board(model10):
    world, params = initial_world(model10, P, theta=0.02)
    ctrl = controller_for(model10, world, params)
    sim_log = run(model10, params, world, ctrl, 3.0)
    assert sim_log.fault is None
    assert np.abs(sim_log.column("theta")).max() < 0.1


def test_run_records_domain_fault(model10):
    world, params = initial_world(model10, P)
    ctrl = controller_for(model10, world, params)
    world.seesaw.rotation = np.diag([1.0, -1.0, -1.0])
    sim_log = run(model10, params, world, ctrl, 0.1)
    assert sim_log.fault is not None and "fault" in sim_log.fault


def test_run_rejects_non_integer_rate_ratio(model10):
    world, params = initial_world(model10, P)
    ctrl = controller_for(model10, world, params)
    with pytest.raises(ValueError):
        run(model10, params, world, ctrl, 0.1, SimConfig(dt_physics=3e-3, dt_control=1e-2))
    with pytest.raises(ValueError):
        step(model10, params, world, np.zeros(10), 0.0)
