"""Momentum-based balancing controllers for rigid ground and for the seesaw.

Each control step builds a 6-row momentum task on the foot wrenches ``f``,
writes the joint torques as an affine function of ``f`` and picks the
wrenches that minimise the torque norm subject to the task and the contact
limits. The modes differ in which momentum is regulated and in which contact
constraint the torque map enforces.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .qp import ContactLimits, QProblem, friction_constraints, solve
from .robot import RobotModel, RobotState, RobotTerms, robot_terms
from .seesaw import SeesawParams, SeesawState, SeesawTerms, seesaw_terms
from .spatial import damped_pinv, matrix_rank, skew, wrench_transform

log = logging.getLogger(__name__)

GAMMA_COND_MAX = 1e10
GAMMA_DAMPING = 1e-6
LAMBDA_RANK_RTOL = 1e-8
# models with fewer joints than contact rows (n < 12) can never give a full
# row rank Lambda; their torque map falls back to damped least squares
LAMBDA_DAMPING = 1e-6
E3 = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])


class ControlError(RuntimeError):
    """A controller quantity is singular or ill defined."""


class ControllerMode(str, enum.Enum):
    RIGID = "rigid-contact"
    ROBOT_MOMENTUM = "seesaw-robot-momentum"
    MIXED_MOMENTUM = "seesaw-mixed-momentum"

    @property
    def on_seesaw(self) -> bool:
        return self is not ControllerMode.RIGID


def _check_spd(name, K, semi=False):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if np.abs(K - K.T).max() > 1e-12:
        raise ValueError(f"gain {name} must be symmetric")
    low = np.linalg.eigvalsh(K).min()
    if low < 0 or (low == 0 and not semi):
        raise ValueError(f"gain {name} must be positive {'semi' if semi else ''}definite")
    return K


@dataclass
class Gains:
    Kp: np.ndarray
    Ki: np.ndarray
    Kp_j: np.ndarray
    Kd_j: np.ndarray

    def __post_init__(self):
        self.Kp = _check_spd("Kp", self.Kp)
        self.Ki = _check_spd("Ki", self.Ki, semi=True)  # angular rows carry no integral
        self.Kp_j = _check_spd("Kp_j", self.Kp_j)
        self.Kd_j = _check_spd("Kd_j", self.Kd_j)

    @classmethod
    def default(cls, n: int) -> "Gains":
        return cls(np.diag([50.0] * 3 + [20.0] * 3), np.diag([10.0] * 3 + [0.0] * 3),
                   30.0 * np.eye(n), 2.0 * np.sqrt(30.0) * np.eye(n))


@dataclass
class MomentumReference:
    H_d: np.ndarray
    Hdot_d: np.ndarray
    x_c_d: np.ndarray
    q_j_d: np.ndarray


@dataclass
class CoMTrajectory:
    """CoM set point, optionally oscillating sinusoidally along one axis.

    ``ramp`` > 0 fades the amplitude in with a smoothstep envelope over that
    many seconds, so the reference starts at rest instead of demanding an
    instantaneous momentum jump of m A w.
    """

    x_c0: np.ndarray
    q_j_d: np.ndarray
    axis: int = 1
    amplitude: float = 0.0
    frequency: float = 0.0
    ramp: float = 0.0

    def envelope(self, t: float):
        """Envelope value and its first two time derivatives."""
        if self.ramp <= 0.0 or t >= self.ramp:
            return 1.0, 0.0, 0.0
        s = max(t, 0.0) / self.ramp
        return s * s * (3 - 2 * s), 6 * s * (1 - s) / self.ramp, (6 - 12 * s) / self.ramp ** 2

    def __call__(self, t: float, mass: float) -> MomentumReference:
        w = 2.0 * np.pi * self.frequency
        pos = np.array(self.x_c0, dtype=float)
        vel, acc = np.zeros(3), np.zeros(3)
        if self.amplitude:
            e, de, dde = self.envelope(t)
            sn, cs = np.sin(w * t), np.cos(w * t)
            pos[self.axis] += self.amplitude * e * sn
            vel[self.axis] = self.amplitude * (de * sn + e * w * cs)
            acc[self.axis] = self.amplitude * (dde * sn + 2 * de * w * cs - e * w * w * sn)
        return MomentumReference(np.r_[mass * vel, 0.0, 0.0, 0.0], np.r_[mass * acc, 0.0, 0.0, 0.0],
                                 pos, np.asarray(self.q_j_d, dtype=float))


@dataclass
class ControlCommand:
    tau: np.ndarray
    f_star: np.ndarray
    f0: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    fault: str | None = None


# ---------------------------------------------------------------------------
# momentum task

def desired_momentum_rate(H, ref: MomentumReference, integral, gains: Gains):
    return ref.Hdot_d - gains.Kp @ (np.asarray(H) - ref.H_d) - gains.Ki @ integral


def momentum_integral(x_c, x_c_d, mass):
    return np.r_[mass * (np.asarray(x_c, dtype=float) - x_c_d), 0.0, 0.0, 0.0]


# ---------------------------------------------------------------------------
# seesaw reduction and mixed momentum

@dataclass
class ReducedSeesaw:
    """Seesaw dynamics with the ground reaction eliminated: Ms nu_s_dot + hbar_s = A_s f."""

    Gamma: np.ndarray
    Gamma_inv: np.ndarray
    A_s: np.ndarray
    hbar_s: np.ndarray
    fs_gain: np.ndarray
    fs_offset: np.ndarray
    Ms_inv: np.ndarray
    damped: bool = False

    def f_s_of_f(self, f):
        """Ground reaction that keeps the rolling constraint for foot wrenches ``f``."""
        return self.fs_gain @ f + self.fs_offset


def reduce_seesaw_dynamics(Ms, hs, Jr, Js, Js_dot_nu) -> ReducedSeesaw:
    Ms_inv = np.linalg.inv(Ms)
    Gamma = Js @ Ms_inv @ Js.T
    damped = bool(np.linalg.cond(Gamma) >= GAMMA_COND_MAX)
    if damped:
        log.warning("seesaw constraint matrix ill conditioned, using damped inverse")
        Gamma_inv = damped_pinv(Gamma, GAMMA_DAMPING)
    else:
        Gamma_inv = np.linalg.inv(Gamma)
    I_P = np.eye(6) - Js.T @ Gamma_inv @ Js @ Ms_inv
    return ReducedSeesaw(
        Gamma, Gamma_inv,
        A_s=-I_P @ Jr.T,
        hbar_s=I_P @ hs + Js.T @ Gamma_inv @ Js_dot_nu,
        fs_gain=Gamma_inv @ Js @ Ms_inv @ Jr.T,
        fs_offset=Gamma_inv @ (Js @ Ms_inv @ hs - Js_dot_nu),
        Ms_inv=Ms_inv, damped=damped)


def task_matrix_Af(Jb, A_s):
    """Robot momentum rows stacked with the seesaw roll-moment row; returns (A_f, rank)."""
    A_f = np.vstack([Jb.T, A_s[3]])
    return A_f, matrix_rank(A_f)


@dataclass
class MixedTerms:
    J_t: np.ndarray     # 5x6; J_t.T maps f_s to the ground wrench about the system CoM
    A_t: np.ndarray     # 5x12
    f_bias: np.ndarray
    H_t: np.ndarray
    H_m: np.ndarray
    A_m: np.ndarray     # 12x6; A_m.T f is the rate of the mixed momentum up to bias terms
    p_t: np.ndarray


def ground_wrench_map(p_sp):
    """6x5 map from f_s to the ground wrench on the board about its CoM (world axes)."""
    W = np.zeros((6, 5))
    W[:3, :3] = np.eye(3)
    W[3:, :3] = skew(p_sp)
    W[4, 3] = 1.0
    W[5, 4] = 1.0
    return W


def seesaw_world_momentum(params: SeesawParams, state: SeesawState):
    R, nu = state.rotation, state.nu_s
    return np.r_[R @ (params.mass * nu[:3]), R @ (params.inertia @ nu[3:])]


def mixed_momentum_terms(mass, com, H, Jb, seesaw_state: SeesawState, params: SeesawParams,
                         sterms: SeesawTerms, reduced: ReducedSeesaw, gravity=9.81) -> MixedTerms:
    ms = params.mass
    p_s = seesaw_state.com_position
    p_t = (mass * com + ms * p_s) / (mass + ms)
    J_t = (wrench_transform(p_s - p_t) @ ground_wrench_map(sterms.p_sp)).T
    A_t = reduced.fs_gain
    f_bias = J_t.T @ reduced.fs_offset - (mass + ms) * gravity * E3
    H_t = (wrench_transform(com - p_t) @ H
           + wrench_transform(p_s - p_t) @ seesaw_world_momentum(params, seesaw_state))
    H_m = np.r_[H[:3], H_t[3:]]
    A_mT = np.vstack([Jb.T[:3], (J_t.T @ A_t)[3:]])
    return MixedTerms(J_t, A_t, f_bias, H_t, H_m, A_mT.T, p_t)


# ---------------------------------------------------------------------------
# torque map and postural task

@dataclass
class JointSpaceTerms:
    """Joint-space dynamics with the base acceleration eliminated."""

    M_j: np.ndarray
    J_j: np.ndarray   # 12 x n
    h_j: np.ndarray


def redundancy_projector(A_task, Jb, A_s, rtol=1e-13):
    """Projector onto wrenches that change neither the task, the robot momentum nor the board roll.

    With the feet exactly on the board the robot momentum rows and the roll
    row of A_s lie in the task row space, so this is the task null-space
    projector. The extra rows only matter once the robot soles and the board
    foot frames drift apart, where they keep f0 out of the joint dynamics.
    """
    stacked = np.vstack([A_task, Jb.T, A_s[3]])
    _, sv, Vt = np.linalg.svd(stacked)
    rank = int(np.sum(sv > rtol * sv[0]))
    Z = Vt[rank:].T
    return Z @ Z.T


def joint_space_terms(M, h, J) -> JointSpaceTerms:
    Mbb, Mbj = M[:6, :6], M[:6, 6:]
    X = np.linalg.solve(Mbb, np.hstack([Mbj, h[:6, None]]))
    Mbb_inv_Mbj, Mbb_inv_hb = X[:, :-1], X[:, -1]
    return JointSpaceTerms(M[6:, 6:] - Mbj.T @ Mbb_inv_Mbj,
                           J[:, 6:] - J[:, :6] @ Mbb_inv_Mbj,
                           h[6:] - Mbj.T @ Mbb_inv_hb)


@dataclass
class TorqueMap:
    """tau = pinv(Lambda) (bias + F f) + N tau0."""

    Lambda: np.ndarray
    Lambda_pinv: np.ndarray
    N: np.ndarray
    bias: np.ndarray
    F: np.ndarray

    def __call__(self, f, tau0):
        return self.Lambda_pinv @ (self.bias + self.F @ f) + self.N @ tau0


def torque_map(mode: ControllerMode, rt: RobotTerms, state: RobotState,
               st: SeesawTerms | None = None, reduced: ReducedSeesaw | None = None,
               seesaw_nu=None, damping: float = 0.0) -> TorqueMap:
    n = rt.M.shape[0] - 6
    cho = cho_factor(rt.M)
    Minv_JT = cho_solve(cho, rt.J.T)
    Minv_h = cho_solve(cho, rt.h)
    Lam = Minv_JT[6:].T   # J M^-1 B, using symmetry of M
    sv = np.linalg.svd(Lam, compute_uv=False)
    if Lam.shape[0] > n:
        damping = max(damping, LAMBDA_DAMPING)
    full = Lam.shape[0] <= n and sv[-1] > LAMBDA_RANK_RTOL * sv[0]
    if not full and damping <= 0.0:
        raise ControlError(f"Lambda is not full row rank (shape {Lam.shape}, singular values "
                           f"{sv[0]:.3e}..{sv[-1]:.3e}) at q = {np.array2string(state.q, precision=4)}")
    Lam_pinv = damped_pinv(Lam, damping)
    N = np.eye(n) - Lam_pinv @ Lam
    bias = rt.J @ Minv_h - rt.Jdot_nu
    F = -rt.J @ Minv_JT
    if mode.on_seesaw:
        Ms_inv = reduced.Ms_inv
        bias = bias - st.Jr @ Ms_inv @ reduced.hbar_s + st.Jr_dot_nu
        F = F + st.Jr @ Ms_inv @ reduced.A_s
    return TorqueMap(Lam, Lam_pinv, N, bias, F)


def postural_torque(js: JointSpaceTerms, f, N, gains: Gains, q, qdot, q_d):
    """tau0 = h_j - J_j' f + u0 with u0 acting in the null space of Lambda."""
    u0 = -gains.Kp_j @ N @ js.M_j @ (q - q_d) - gains.Kd_j @ N @ js.M_j @ qdot
    return js.h_j - js.J_j.T @ f + u0


# ---------------------------------------------------------------------------
# controller

@dataclass
class ControllerConfig:
    mode: ControllerMode = ControllerMode.MIXED_MOMENTUM
    gains: Gains | None = None
    limits: ContactLimits = field(default_factory=ContactLimits)
    damping: float = 0.0


class BalanceController:
    """Stateful wrapper around one control law (keeps the QP working set)."""

    def __init__(self, model: RobotModel, config: ControllerConfig, reference,
                 seesaw: SeesawParams | None = None):
        self.model = model
        self.config = config
        self.gains = config.gains or Gains.default(model.n)
        self.reference = reference
        self.seesaw = seesaw
        self._active = None
        if config.mode.on_seesaw and seesaw is None:
            raise ValueError("seesaw modes need seesaw parameters")

    def step(self, t, robot: RobotState, seesaw_state: SeesawState | None = None, f0=None,
             rt: RobotTerms | None = None, st: SeesawTerms | None = None) -> ControlCommand:
        """One control update; any failure yields zero torques and a fault message."""
        try:
            return self._step(t, robot, seesaw_state, f0, rt, st)
        except Exception as exc:  # fault handling is part of the contract
            log.error("controller fault at t=%.3f: %s", t, exc)
            n = self.model.n
            return ControlCommand(np.zeros(n), np.zeros(12), np.zeros(12), {}, str(exc))

    def _step(self, t, robot, seesaw_state, f0, rt, st):
        model, mode, gains = self.model, self.config.mode, self.gains
        m, g = model.mass, model.gravity
        rt = rt or robot_terms(model, robot)
        ref = self.reference(t, m)
        integral = momentum_integral(rt.com, ref.x_c_d, m)
        diag = {}

        reduced = mixed = None
        if mode.on_seesaw:
            st = st or seesaw_terms(self.seesaw, seesaw_state, g)
            reduced = reduce_seesaw_dynamics(st.Ms, st.hs, st.Jr, st.Js, st.Js_dot_nu)
            diag["gamma_cond"] = float(np.linalg.cond(reduced.Gamma))
            diag["gamma_damped"] = reduced.damped
            diag["rank_As"] = matrix_rank(reduced.A_s)
            diag["rank_Af"] = task_matrix_Af(rt.Jb, reduced.A_s)[1]
            mixed = mixed_momentum_terms(m, rt.com, rt.H, rt.Jb, seesaw_state, self.seesaw,
                                         st, reduced, g)
            diag["H_t"] = mixed.H_t

        if mode is ControllerMode.MIXED_MOMENTUM:
            Hdot_star = desired_momentum_rate(mixed.H_m, ref, integral, gains)
            A_task = mixed.A_m.T
            b_task = Hdot_star + np.r_[0.0, 0.0, m * g, -mixed.f_bias[3:]]
            diag["H_error"] = mixed.H_m - ref.H_d
        else:
            Hdot_star = desired_momentum_rate(rt.H, ref, integral, gains)
            A_task = rt.Jb.T
            b_task = Hdot_star + m * g * E3
            diag["H_error"] = rt.H - ref.H_d
        if matrix_rank(A_task) < 6:
            raise ControlError("momentum task matrix is rank deficient")

        tmap = torque_map(mode, rt, robot, st, reduced, damping=self.config.damping)
        js = joint_space_terms(rt.M, rt.h, rt.J)
        qdot = robot.nu[6:]
        tau0_const = postural_torque(js, np.zeros(12), tmap.N, gains, robot.q, qdot, ref.q_j_d)
        # tau(f) = tau_c + T f
        T = tmap.Lambda_pinv @ tmap.F - tmap.N @ js.J_j.T
        tau_c = tmap.Lambda_pinv @ tmap.bias + tmap.N @ tau0_const

        A_pinv = damped_pinv(A_task)
        N_task = np.eye(12) - A_pinv @ A_task
        if mode.on_seesaw:
            N_task = redundancy_projector(A_task, rt.Jb, reduced.A_s)
        if f0 is not None:
            f_star = A_pinv @ b_task + N_task @ f0
            diag["qp_status"] = "bypassed"
        else:
            f_star = self._distribute(T, tau_c, A_task, b_task, rt, diag)
        tau = tau_c + T @ f_star
        diag["task_residual"] = float(np.abs(A_task @ f_star - b_task).max())
        diag["Hdot_star"] = Hdot_star
        return ControlCommand(tau, f_star, N_task @ f_star, diag)

    def _distribute(self, T, tau_c, A_task, b_task, rt, diag):
        rows, rhs = [], []
        for R in rt.foot_rotations:
            A, b = friction_constraints(self.config.limits, R)
            rows.append(A)
            rhs.append(b)
        A_in = np.zeros((sum(a.shape[0] for a in rows), 12))
        r = 0
        for k, A in enumerate(rows):
            A_in[r:r + A.shape[0], 6 * k:6 * k + 6] = A
            r += A.shape[0]
        b_in = np.concatenate(rhs)
        qp = QProblem(T.T @ T, T.T @ tau_c, A_task, b_task, A_in, b_in)
        res = solve(qp, warm_start=self._active)
        diag["qp_status"] = res.status
        if res.ok:
            self._active = res.active_set
            f = res.x
        else:
            # best effort: honour the momentum task, drop the contact limits
            self._active = None
            f = solve(QProblem(qp.Q, qp.c, A_task, b_task)).x
        diag["constraint_margin"] = float((b_in - A_in @ f).min())
        return f


def control_step(model, mode, robot, seesaw_state, reference, gains=None, seesaw=None,
                 t=0.0, **config) -> ControlCommand:
    """Stateless convenience form of :meth:`BalanceController.step`."""
    ctrl = BalanceController(model, ControllerConfig(ControllerMode(mode), gains, **config),
                             reference, seesaw)
    return ctrl.step(t, robot, seesaw_state)
