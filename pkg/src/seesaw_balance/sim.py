"""Coupled robot + seesaw simulation with bilateral constraints.

Every physics step solves the constrained equations of motion for the
accelerations of both bodies and the constraint wrenches (feet on the board, board rolling on
the ground), then advances with semi-implicit Euler. Baumgarte feedback on
the constraint errors keeps the drift bounded.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .robot import RobotModel, RobotState, frame_jacobian_from, robot_terms
from .seesaw import SeesawParams, SeesawState, seesaw_terms
from .spatial import rot_x, so3_exp, so3_log

log = logging.getLogger(__name__)

SEESAW, RIGID, FREE = "seesaw", "rigid", "free"
# damping of the constraint-space solve, relative to its largest eigenvalue
REDUNDANT_RTOL = 1e-8


class SimulationError(RuntimeError):
    pass


@dataclass
class Disturbance:
    frame: str
    wrench: np.ndarray
    t_start: float
    duration: float

    def __post_init__(self):
        self.wrench = np.asarray(self.wrench, dtype=float)
        if self.duration <= 0:
            raise ValueError("disturbance duration must be positive")

    def active(self, t) -> bool:
        # a small tolerance keeps the window length exact on a fixed time grid
        return self.t_start - 1e-9 <= t < self.t_start + self.duration - 1e-9


@dataclass
class Anchors:
    """Constraint set points captured from the initial state."""

    foot_rotations: list      # foot orientation relative to its support (board or world)
    foot_positions: list      # foot position in the support frame
    roll_origin: np.ndarray   # axis point (x, y0, radius) at theta = 0


@dataclass
class WorldState:
    robot: RobotState
    seesaw: SeesawState | None
    time: float = 0.0
    mode: str = SEESAW
    anchors: Anchors | None = None

    def copy(self) -> "WorldState":
        return WorldState(self.robot.copy(), self.seesaw.copy() if self.seesaw else None,
                          self.time, self.mode, self.anchors)


@dataclass
class StepSolution:
    nu_dot: np.ndarray
    nu_s_dot: np.ndarray
    f: np.ndarray
    f_s: np.ndarray
    kkt_residual: float
    cond: float = np.nan
    coupling_residual: float = 0.0   # velocity-level foot/board mismatch
    rolling_residual: float = 0.0    # pitch/yaw of the board


@dataclass
class SimConfig:
    dt_physics: float = 1e-3
    dt_control: float = 1e-2
    alpha: float = 20.0
    beta: float = 20.0


def capture_anchors(model: RobotModel, params: SeesawParams | None, world: WorldState) -> Anchors:
    rt = robot_terms(model, world.robot)
    if world.mode == SEESAW:
        Rs, ps = world.seesaw.rotation, world.seesaw.com_position
        rots = [Rs.T @ R for R in rt.foot_rotations]
        pos = [Rs.T @ (p - ps) for p in rt.foot_positions]
        axis = ps + Rs @ params.axis_offset
        origin = np.array([axis[0], axis[1] + params.radius * world.seesaw.theta, params.radius])
    else:
        rots = [R.copy() for R in rt.foot_rotations]
        pos = [p.copy() for p in rt.foot_positions]
        origin = np.zeros(3)
    return Anchors(rots, pos, origin)


def attach_feet(params: SeesawParams, model: RobotModel, robot: RobotState, seesaw: SeesawState):
    """Seesaw parameters whose foot frames coincide with the robot feet."""
    rt = robot_terms(model, robot)
    offsets = tuple(seesaw.rotation.T @ (p - seesaw.com_position) for p in rt.foot_positions)
    return SeesawParams(params.mass, params.inertia, params.radius, params.com_drop, offsets)


def foot_pose_error(world: WorldState, rt, params: SeesawParams | None) -> np.ndarray:
    a = world.anchors
    err = np.zeros(12)
    if world.mode == SEESAW:
        Rs, ps = world.seesaw.rotation, world.seesaw.com_position
    else:
        Rs, ps = np.eye(3), np.zeros(3)
    for k in range(2):
        err[6 * k:6 * k + 3] = rt.foot_positions[k] - (ps + Rs @ a.foot_positions[k])
        err[6 * k + 3:6 * k + 6] = so3_log(rt.foot_rotations[k] @ (Rs @ a.foot_rotations[k]).T)
    return err


def rolling_error(world: WorldState, params: SeesawParams) -> np.ndarray:
    s = world.seesaw
    theta = s.theta
    axis = s.com_position + s.rotation @ params.axis_offset
    o = world.anchors.roll_origin
    pos = axis - np.array([o[0], o[1] - params.radius * theta, o[2]])
    orient = so3_log(s.rotation @ rot_x(theta).T)
    return np.r_[pos, orient[1:]]


def disturbance_force(model: RobotModel, rt, disturbances, t) -> np.ndarray:
    """Generalized force of all disturbances active at time ``t``."""
    gen = np.zeros(model.nv)
    for d in disturbances or ():
        if d.active(t):
            try:
                frame = model.frame(d.frame)
            except KeyError:
                raise SimulationError(f"unknown disturbance frame {d.frame!r}") from None
            gen += frame_jacobian_from(model, rt, frame).T @ d.wrench
    return gen


def apply_disturbance_wrench(model: RobotModel, world: WorldState, disturbance: Disturbance, t):
    return disturbance_force(model, robot_terms(model, world.robot), [disturbance], t)


def assemble_and_solve(model: RobotModel, params: SeesawParams | None, world: WorldState, tau,
                       disturbances=(), config: SimConfig = SimConfig(), rt=None, st=None,
                       gravity=None) -> StepSolution:
    g = model.gravity if gravity is None else gravity
    rt = rt or robot_terms(model, world.robot, g)
    nv = model.nv
    rhs_robot = -rt.h + disturbance_force(model, rt, disturbances, world.time)
    rhs_robot[6:] += tau
    a, b = config.alpha, config.beta

    if world.mode == FREE:
        nu_dot = np.linalg.solve(rt.M, rhs_robot)
        return StepSolution(nu_dot, np.zeros(6), np.zeros(12), np.zeros(5), 0.0)

    if world.mode == RIGID:
        e_vel = rt.foot_velocities
        rhs_c = -rt.Jdot_nu - 2 * a * e_vel - b * b * foot_pose_error(world, rt, None)
        acc, lam, res, cond = _solve(rt.M, rt.J, rhs_robot, rhs_c)
        return StepSolution(acc, np.zeros(6), lam, np.zeros(5), res, cond,
                            float(np.abs(e_vel).max()), 0.0)

    s = world.seesaw
    st = st or seesaw_terms(params, s, g)
    # constraint rows act on (nu, nu_s); multipliers are (f, f_s)
    W = np.zeros((nv + 6, nv + 6))
    W[:nv, :nv] = rt.M
    W[nv:, nv:] = st.Ms
    C = np.zeros((17, nv + 6))
    C[:12, :nv] = rt.J
    C[:12, nv:] = -st.Jr
    C[12:, nv:] = st.Js
    e_couple = rt.foot_velocities - st.Jr @ s.nu_s
    e_roll_vel = st.Js @ s.nu_s
    rhs_c = np.r_[-rt.Jdot_nu + st.Jr_dot_nu - 2 * a * e_couple - b * b * foot_pose_error(world, rt, params),
                  -st.Js_dot_nu - 2 * a * e_roll_vel - b * b * rolling_error(world, params)]
    acc, lam, res, cond = _solve(W, C, np.r_[rhs_robot, -st.hs], rhs_c)
    orient = so3_log(s.rotation @ rot_x(s.theta).T)
    return StepSolution(acc[:nv], acc[nv:], lam[:12], lam[12:], res, cond,
                        float(np.abs(e_couple).max()), float(np.abs(orient[1:]).max()))


def _solve(W, C, rhs_dyn, rhs_c):
    """Solve W a = rhs_dyn + C^T lam, C a = rhs_c for accelerations and multipliers.

    The feet-on-board loop of a robot without leg yaw joints is redundant: in a
    mirror-symmetric stance both soles constrain the same yaw rate, and nearby
    the two rows are almost parallel, so holding them exactly takes internal
    twisting moments that grow without bound. The multipliers come from the
    constraint-space inverse inertia G = C W^-1 C^T through a twice-iterated
    Tikhonov inverse on its eigenvalues, ev (1 + s) / (ev^2 + e2) with
    s = e2 / (ev^2 + e2): exact to (e2 / ev^2)^2 for the well-posed directions
    and close to ev / eps^2 (bounded) for the near-redundant twist.
    """
    cho = cho_factor(W, check_finite=False)
    Winv_CT = cho_solve(cho, C.T, check_finite=False)
    a_free = cho_solve(cho, rhs_dyn, check_finite=False)
    G = C @ Winv_CT
    G = 0.5 * (G + G.T)
    ev, U = np.linalg.eigh(G)
    eps = REDUNDANT_RTOL * ev[-1]
    e2 = 2.0 * eps * eps
    shrink = e2 / (ev * ev + e2)
    r = U.T @ (rhs_c - C @ a_free)
    lam = U @ (r * ev * (1.0 + shrink) / (ev * ev + e2))
    acc = a_free + Winv_CT @ lam
    if not (np.all(np.isfinite(acc)) and np.all(np.isfinite(lam))):
        raise SimulationError("non-finite constraint solution")
    res_dyn = np.abs(W @ acc - C.T @ lam - rhs_dyn).max() / max(1.0, np.abs(rhs_dyn).max())
    res_c = np.abs(C @ acc - rhs_c).max() / max(1.0, np.abs(rhs_c).max())
    return acc, lam, float(max(res_dyn, res_c)), float(ev[-1] / max(ev[0], eps))


def step(model: RobotModel, params: SeesawParams | None, world: WorldState, tau, dt,
         disturbances=(), config: SimConfig = SimConfig(), gravity=None):
    """Semi-implicit Euler step; returns (new world, step solution)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    sol = assemble_and_solve(model, params, world, tau, disturbances, config, gravity=gravity)
    r = world.robot
    nu = r.nu + dt * sol.nu_dot
    robot = RobotState(r.base_position + dt * nu[:3], so3_exp(dt * nu[3:6]) @ r.base_rotation,
                       r.q + dt * nu[6:], nu)
    seesaw = None
    if world.seesaw is not None:
        s = world.seesaw
        if world.mode == SEESAW:
            nus = s.nu_s + dt * sol.nu_s_dot
            seesaw = SeesawState(s.rotation @ so3_exp(dt * nus[3:]),
                                 s.com_position + dt * s.rotation @ nus[:3], nus)
        else:
            seesaw = s.copy()
    return WorldState(robot, seesaw, world.time + dt, world.mode, world.anchors), sol


@dataclass
class SimLog:
    columns: list
    rows: np.ndarray
    fault: str | None = None
    max_coupling_residual: float = 0.0
    max_rolling_residual: float = 0.0
    max_kkt_residual: float = 0.0

    def column(self, name):
        return self.rows[:, self.columns.index(name)]


QP_CODES = {"optimal": 0, "infeasible": 1, "max-iterations": 2, "bypassed": 3}


def log_columns(n: int) -> list:
    cols = ["t"] + [f"H_{i}" for i in range(6)] + ["H_err_lin_norm", "H_err_ang_norm"]
    cols += [f"Ht_{i}" for i in range(6)] + ["Hm_err_norm"]
    cols += ["xc_x", "xc_y", "xc_z", "xcd_x", "xcd_y", "xcd_z", "theta"]
    cols += [f"tau_{i}" for i in range(n)] + [f"f_{i}" for i in range(12)]
    cols += [f"fs_{i}" for i in range(5)] + ["res_coupling", "res_rolling", "qp_status"]
    return cols


def run(model: RobotModel, params: SeesawParams | None, world0: WorldState, controller,
        horizon: float, config: SimConfig = SimConfig(), disturbances=(), f0=None,
        observer=None) -> SimLog:
    """Closed-loop run with zero-order-hold torques between control updates.

    ``f0`` optionally fixes the null-space wrench (callable of time or array)
    instead of letting the controller optimise it. ``observer(t, world, cmd)``
    is called at every control tick, e.g. to record joint trajectories.
    """
    ratio = config.dt_control / config.dt_physics
    sub = int(round(ratio))
    if sub < 1 or abs(ratio - sub) > 1e-9:
        raise ValueError("dt_control must be an integer multiple of dt_physics")
    ticks = int(round(horizon / config.dt_control))
    world = world0
    rows, fault = [], None
    max_c = max_r = max_k = 0.0
    m = model.mass
    for k in range(ticks + 1):
        t = k * config.dt_control
        world.time = t
        try:
            rt = robot_terms(model, world.robot)
            st = seesaw_terms(params, world.seesaw) if world.mode == SEESAW else None
        except Exception as exc:
            fault = f"simulation fault at t={t:.3f}: {exc}"
            log.error(fault)
            break
        f0_t = f0(t) if callable(f0) else f0
        cmd = controller.step(t, world.robot, world.seesaw, f0=f0_t, rt=rt, st=st)
        ref = controller.reference(t, m)
        sol = assemble_and_solve(model, params, world, cmd.tau, disturbances, config, rt=rt, st=st)
        H_err = rt.H - ref.H_d
        H_t = cmd.diagnostics.get("H_t", rt.H)
        Hm = np.r_[rt.H[:3], H_t[3:]]
        status = -1 if cmd.fault else QP_CODES.get(cmd.diagnostics.get("qp_status"), -1)
        theta = world.seesaw.theta if world.seesaw is not None else 0.0
        rows.append(np.r_[t, rt.H, np.linalg.norm(H_err[:3]), np.linalg.norm(H_err[3:]), H_t,
                          np.linalg.norm(Hm - ref.H_d), rt.com, ref.x_c_d, theta, cmd.tau,
                          sol.f, sol.f_s, sol.coupling_residual, sol.rolling_residual, status])
        if observer is not None:
            observer(t, world, cmd)
        if cmd.fault:
            fault = f"controller fault at t={t:.3f}: {cmd.fault}"
            break
        if k == ticks:
            break
        try:
            for i in range(sub):
                world, sol = step(model, params, world, cmd.tau, config.dt_physics,
                                  disturbances, config)
                max_c = max(max_c, sol.coupling_residual)
                max_r = max(max_r, sol.rolling_residual)
                max_k = max(max_k, sol.kkt_residual)
                if world.seesaw is not None and world.mode == SEESAW and abs(world.seesaw.theta) >= np.pi / 2:
                    raise SimulationError("seesaw rolled out of range")
        except Exception as exc:
            fault = f"simulation fault at t={world.time:.3f}: {exc}"
            log.error(fault)
            break
    return SimLog(log_columns(model.n), np.array(rows), fault, max_c, max_r, max_k)


def initial_world(model: RobotModel, params: SeesawParams | None, q=None, mode: str = SEESAW,
                  theta: float = 0.0):
    """Robot standing on a level board (or flat ground) at rest.

    Returns ``(world, params)`` where the seesaw foot frames have been moved to
    the robot soles so both descriptions of the attachment agree.
    """
    q = model.nominal_posture.copy() if q is None else np.asarray(q, dtype=float)
    robot = RobotState(np.zeros(3), np.eye(3), q, np.zeros(model.nv))
    rt = robot_terms(model, robot)
    mid = 0.5 * (rt.foot_positions[0] + rt.foot_positions[1])
    seesaw = None
    if mode == SEESAW:
        seesaw = SeesawState.rolling(params, theta)
        # sole midpoint on the board surface right above the cylinder axis
        robot.base_position = seesaw.com_position + seesaw.rotation @ params.axis_offset - mid
        params = attach_feet(params, model, robot, seesaw)
    else:
        robot.base_position = -mid
    world = WorldState(robot, seesaw, 0.0, mode)
    world.anchors = capture_anchors(model, params, world)
    return world, params
