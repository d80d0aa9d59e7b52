import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seesaw_balance.seesaw import (SeesawDomainError, SeesawParams, SeesawState, contact_geometry,
                                   jacobian_dot_terms, jacobian_r, jacobian_s,
                                   momentum_frame_transform, random_rolling_state,
                                   seesaw_bias, seesaw_forward_dynamics, seesaw_mass_matrix)
from seesaw_balance.spatial import block_skew, rot_x, so3_exp, so3_log

P = SeesawParams()


def random_state(rng, params=P):
    """Roll-dominated orientation with small pitch/yaw and arbitrary velocity."""
    R = rot_x(rng.uniform(-0.6, 0.6)) @ so3_exp(rng.normal(scale=0.05, size=3))
    return SeesawState(R, rng.normal(size=3), rng.normal(size=6))


def flow(state, dt):
    """Exact rigid-body configuration flow with constant body velocity."""
    v, w = state.nu_s[:3], state.nu_s[3:]
    return SeesawState(state.rotation @ so3_exp(dt * w), state.com_position + dt * state.rotation @ v,
                       state.nu_s)


def test_mass_matrix_defaults():
    Ms = seesaw_mass_matrix(P)
    expected = np.zeros((6, 6))
    expected[:3, :3] = 4 * np.eye(3)
    expected[3:, 3:] = np.diag([0.02, 0.08, 0.09])
    np.testing.assert_array_equal(Ms, expected)
    assert np.linalg.eigvalsh(Ms).min() > 0


def test_param_validation():
    with pytest.raises(ValueError):
        SeesawParams(mass=0.0)
    with pytest.raises(ValueError):
        SeesawParams(com_drop=0.3)
    with pytest.raises(ValueError):
        SeesawParams(inertia=np.diag([1.0, -1.0, 1.0]))


def test_bias_at_rest():
    s = SeesawState(np.eye(3), np.zeros(3), np.zeros(6))
    np.testing.assert_allclose(seesaw_bias(P, s), [0, 0, 39.24, 0, 0, 0], atol=1e-12)


def test_bias_gravity_norm_and_zero_power(rng):
    for _ in range(50):
        s = random_state(rng)
        g_only = seesaw_bias(P, SeesawState(s.rotation, s.com_position, np.zeros(6)))
        assert np.linalg.norm(g_only) == pytest.approx(4 * 9.81, rel=1e-12)
        gyro = seesaw_bias(P, s, gravity=0.0)
        assert abs(gyro @ s.nu_s) <= 1e-12


def test_contact_geometry_upright():
    p = SeesawParams(com_drop=0.0)
    upright = SeesawState(np.eye(3), np.zeros(3), np.zeros(6))
    np.testing.assert_allclose(contact_geometry(p, upright)["p_sp"], [0, 0, -0.25])
    np.testing.assert_allclose(contact_geometry(P, upright)["p_sp"], [0, 0, -(0.25 - 0.05)])


@given(st.floats(-0.5, 0.5))
def test_contact_point_on_ground(theta):
    s = SeesawState.rolling(P, theta)
    g = contact_geometry(P, s)
    assert abs((s.com_position + g["p_sp"])[2]) < 1e-12
    # contact point lies straight below the cylinder axis
    axis = s.com_position + s.rotation @ P.axis_offset
    np.testing.assert_allclose((s.com_position + g["p_sp"])[:2], axis[:2], atol=1e-12)
    assert s.theta == pytest.approx(theta, abs=1e-12)


def test_domain_error():
    s = SeesawState(rot_x(1.7), np.zeros(3), np.zeros(6))
    with pytest.raises(SeesawDomainError):
        contact_geometry(P, s)


def test_jr_pure_translation(rng):
    s = random_state(rng)
    s.nu_s[3:] = 0.0
    out = jacobian_r(P, s) @ s.nu_s
    for k in range(2):
        np.testing.assert_allclose(out[6 * k:6 * k + 3], s.rotation @ s.nu_s[:3], atol=1e-12)
        np.testing.assert_allclose(out[6 * k + 3:6 * k + 6], 0.0, atol=1e-12)


def test_jr_foot_on_rotation_axis(rng):
    p = SeesawParams(foot_offsets=((0, 0, 0), (0, -0.1, 0.05)))
    s = random_state(rng, p)
    np.testing.assert_allclose((jacobian_r(p, s) @ s.nu_s)[:3], s.rotation @ s.nu_s[:3], atol=1e-12)


def test_jr_finite_difference(rng):
    eps = 1e-6
    for _ in range(20):
        s = random_state(rng)
        plus, minus = flow(s, eps), flow(s, -eps)
        J = jacobian_r(P, s) @ s.nu_s
        for k, off in enumerate(P.foot_offsets):
            pos = lambda z: z.com_position + z.rotation @ off
            v_fd = (pos(plus) - pos(minus)) / (2 * eps)
            w_fd = so3_log(plus.rotation @ minus.rotation.T) / (2 * eps)
            fd = np.r_[v_fd, w_fd]
            assert np.linalg.norm(fd - J[6 * k:6 * k + 6]) <= 1e-5 * np.linalg.norm(fd)


@given(st.floats(-0.5, 0.5), st.floats(-3.0, 3.0), st.floats(0.0, 0.2))
@settings(max_examples=200)
def test_rolling_velocity_satisfies_js(theta, rate, drop):
    p = SeesawParams(com_drop=drop)
    s = SeesawState.rolling(p, theta, rate)
    assert np.abs(jacobian_s(p, s) @ s.nu_s).max() <= 1e-10


def test_js_upright_roll_d0():
    p = SeesawParams(com_drop=0.0)
    s = SeesawState.rolling(p, 0.0, 2.0)
    np.testing.assert_allclose(s.nu_s[:3], [0, -0.25 * 2.0, 0], atol=1e-14)
    np.testing.assert_allclose(jacobian_s(p, s) @ s.nu_s, 0.0, atol=1e-14)
    s.nu_s[:] = 0.0
    np.testing.assert_array_equal(jacobian_s(p, s) @ s.nu_s, np.zeros(5))


def test_ranks(rng):
    for _ in range(1000):
        s = random_state(rng)
        sv = np.linalg.svd(jacobian_s(P, s), compute_uv=False)
        assert sv[4] / sv[0] > 1e-6
        sr = np.linalg.svd(jacobian_r(P, s), compute_uv=False)
        assert sr[5] / sr[0] > 1e-6


def test_jdot_zero_velocity(rng):
    s = random_state(rng)
    s.nu_s[:] = 0.0
    jr, js = jacobian_dot_terms(P, s)
    np.testing.assert_array_equal(jr, 0.0)
    np.testing.assert_array_equal(js, 0.0)


def test_jdot_planar_rolling_oracle(rng):
    # d = 0: p_sp is constant, and differentiating J_s nu_s along R_dot = R S(w)
    # leaves only the rotated linear term R (w x v) in the first three rows.
    p = SeesawParams(com_drop=0.0)
    for _ in range(20):
        s = SeesawState.rolling(p, rng.uniform(-0.5, 0.5), rng.normal())
        _, js = jacobian_dot_terms(p, s)
        v, w = s.nu_s[:3], s.nu_s[3:]
        expected = np.r_[s.rotation @ np.cross(w, v), 0.0, 0.0]
        assert np.linalg.norm(js - expected) <= 1e-4 * np.linalg.norm(expected)


def test_jdot_matches_flow_difference(rng):
    # analytic contraction for J_r: foot accelerations of a rigid body with
    # constant body velocity are R (w x v) + w_I x (w_I x p)
    for _ in range(20):
        s = random_state(rng)
        jr, _ = jacobian_dot_terms(P, s)
        R = s.rotation
        v, w = s.nu_s[:3], s.nu_s[3:]
        wI = R @ w
        for k, off in enumerate(P.foot_offsets):
            p = R @ off
            acc = R @ np.cross(w, v) + np.cross(wI, np.cross(wI, p))
            assert np.linalg.norm(jr[6 * k:6 * k + 3] - acc) <= 1e-6 * max(1.0, np.linalg.norm(acc))
            np.testing.assert_allclose(jr[6 * k + 3:6 * k + 6], 0.0, atol=1e-8)


def test_jdot_richardson(rng):
    p = SeesawParams(com_drop=0.0)
    s = SeesawState.rolling(p, 0.3, 2.5)
    v, w = s.nu_s[:3], s.nu_s[3:]
    exact = np.r_[s.rotation @ np.cross(w, v), 0.0, 0.0]
    errs = [np.linalg.norm(jacobian_dot_terms(p, s, step=h)[1] - exact) for h in (1e-2, 5e-3)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_forward_dynamics_cases(rng):
    rest = SeesawState(np.eye(3), np.zeros(3), np.zeros(6))
    np.testing.assert_allclose(seesaw_forward_dynamics(P, rest, np.zeros(12), np.zeros(5)),
                               [0, 0, -9.81, 0, 0, 0], atol=1e-12)
    # ground force at the contact point directly below the CoM cancels gravity
    fs = np.array([0, 0, 4 * 9.81, 0, 0])
    np.testing.assert_allclose(seesaw_forward_dynamics(P, rest, np.zeros(12), fs), 0.0, atol=1e-12)
    Ms = seesaw_mass_matrix(P)
    for _ in range(20):
        s = random_state(rng)
        f, fs = rng.normal(size=12), rng.normal(size=5)
        acc = seesaw_forward_dynamics(P, s, f, fs)
        res = Ms @ acc + seesaw_bias(P, s) + jacobian_r(P, s).T @ f - jacobian_s(P, s).T @ fs
        assert np.abs(res).max() <= 1e-10


def world_wrench(s, f, fs, g=9.81):
    """Oracle: net external wrench on the board about its CoM, inertial coordinates."""
    geo = contact_geometry(P, s)
    F = np.array([0, 0, -P.mass * g]) + fs[:3]
    N = np.cross(geo["p_sp"], fs[:3]) + np.array([0, fs[3], fs[4]])
    for k, p in enumerate((geo["p_sl"], geo["p_sr"])):
        F -= f[6 * k:6 * k + 3]
        N -= np.cross(p, f[6 * k:6 * k + 3]) + f[6 * k + 3:6 * k + 6]
    return np.r_[F, N]


def test_momentum_transform_round_trip(rng):
    H = rng.normal(size=6)
    np.testing.assert_array_equal(momentum_frame_transform(H, np.eye(3)), H)
    R = so3_exp(rng.normal(size=3))
    back = momentum_frame_transform(momentum_frame_transform(H, R, "to-inertial"), R, "to-body")
    np.testing.assert_allclose(back, H, atol=1e-12)
    with pytest.raises(ValueError):
        momentum_frame_transform(H, R, "sideways")


def test_world_momentum_rate(rng):
    Ms = seesaw_mass_matrix(P)
    eps = 1e-5
    for _ in range(10):
        s = random_state(rng)
        f, fs = 10 * rng.normal(size=12), 10 * rng.normal(size=5)
        acc = seesaw_forward_dynamics(P, s, f, fs)
        Hw = lambda R, nu: momentum_frame_transform(Ms @ nu, R)
        Rp = s.rotation @ so3_exp(eps * s.nu_s[3:])
        Rm = s.rotation @ so3_exp(-eps * s.nu_s[3:])
        fd = (Hw(Rp, s.nu_s + eps * acc) - Hw(Rm, s.nu_s - eps * acc)) / (2 * eps)
        w = s.nu_s[3:]
        analytic = momentum_frame_transform(block_skew(w) @ Ms @ s.nu_s + Ms @ acc, s.rotation)
        assert np.linalg.norm(fd - analytic) <= 1e-3 * np.linalg.norm(analytic)
        # body-frame equations reproduce the inertial Newton-Euler balance
        np.testing.assert_allclose(analytic, world_wrench(s, f, fs), atol=1e-9)


def test_random_rolling_state_is_consistent(rng):
    for _ in range(20):
        s = random_rolling_state(P, rng)
        assert np.abs(jacobian_s(P, s) @ s.nu_s).max() < 1e-12
