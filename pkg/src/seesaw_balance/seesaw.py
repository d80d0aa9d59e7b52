"""Semi-cylindrical seesaw rolling on flat ground.

The seesaw velocity ``nu_s = (v, omega)`` is expressed in the body frame S
located at the seesaw CoM: ``v`` is the CoM velocity and ``omega`` the angular
velocity, both in S coordinates. The cylinder axis runs along body x at
``(0, 0, com_drop)`` above the CoM and stays at height ``radius`` above the
ground while the board rolls.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spatial import block_rotation, block_skew, rot_x, skew, so3_exp

JDOT_STEP = 1e-6


class SeesawDomainError(ValueError):
    """The board has rolled out of its valid contact range."""


@dataclass(frozen=True)
class SeesawParams:
    mass: float = 4.0
    inertia: np.ndarray = field(default_factory=lambda: np.diag([0.02, 0.08, 0.09]))
    radius: float = 0.25
    com_drop: float = 0.05
    foot_offsets: tuple = ((0.0, 0.10, 0.05), (0.0, -0.10, 0.05))

    def __post_init__(self):
        I = np.asarray(self.inertia, dtype=float)
        object.__setattr__(self, "inertia", I)
        object.__setattr__(self, "foot_offsets",
                           tuple(np.asarray(p, dtype=float) for p in self.foot_offsets))
        if self.mass <= 0:
            raise ValueError("seesaw mass must be positive")
        if I.shape != (3, 3) or np.abs(I - I.T).max() > 1e-12 or np.linalg.eigvalsh(I).min() <= 0:
            raise ValueError("seesaw inertia must be symmetric positive definite")
        if self.radius <= 0:
            raise ValueError("seesaw radius must be positive")
        if not 0.0 <= self.com_drop < self.radius:
            raise ValueError("com_drop must satisfy 0 <= com_drop < radius")
        if len(self.foot_offsets) != 2:
            raise ValueError("two foot offsets are required")

    @property
    def axis_offset(self):
        """Cylinder axis point above the CoM, seesaw frame."""
        return np.array([0.0, 0.0, self.com_drop])


@dataclass
class SeesawState:
    rotation: np.ndarray
    com_position: np.ndarray
    nu_s: np.ndarray

    @property
    def theta(self) -> float:
        R = self.rotation
        return float(np.arctan2(R[2, 1], R[2, 2]))

    def copy(self) -> "SeesawState":
        return SeesawState(self.rotation.copy(), self.com_position.copy(), self.nu_s.copy())

    @classmethod
    def rolling(cls, params: SeesawParams, theta=0.0, roll_rate=0.0, x=0.0, y0=0.0):
        """State consistent with rolling contact at roll angle ``theta``.

        The axis starts above ``(x, y0)`` at ``theta = 0`` and has moved by
        ``-radius * theta`` along y since then.
        """
        R = rot_x(theta)
        axis = np.array([x, y0 - params.radius * theta, params.radius])
        com = axis - R @ params.axis_offset
        omega = np.array([roll_rate, 0.0, 0.0])
        p_sp = R @ params.axis_offset - np.array([0.0, 0.0, params.radius])
        v_world = -np.cross(omega, p_sp)  # contact point at rest
        return cls(R, com, np.r_[R.T @ v_world, omega])


def seesaw_mass_matrix(params: SeesawParams) -> np.ndarray:
    Ms = np.zeros((6, 6))
    Ms[:3, :3] = params.mass * np.eye(3)
    Ms[3:, 3:] = params.inertia
    return Ms


def seesaw_bias(params: SeesawParams, state: SeesawState, gravity: float = 9.81) -> np.ndarray:
    """Gyroscopic plus gravity terms of the body-frame Newton-Euler equations."""
    Ms = seesaw_mass_matrix(params)
    w = state.nu_s[3:]
    h = block_skew(w) @ Ms @ state.nu_s
    h[:3] += state.rotation.T @ np.array([0.0, 0.0, params.mass * gravity])
    return h


def _geometry(params, R):
    if abs(np.arctan2(R[2, 1], R[2, 2])) >= np.pi / 2:
        raise SeesawDomainError("seesaw roll angle outside (-pi/2, pi/2)")
    p_sp = R @ params.axis_offset - np.array([0.0, 0.0, params.radius])
    return p_sp, R @ params.foot_offsets[0], R @ params.foot_offsets[1]


def contact_geometry(params: SeesawParams, state: SeesawState) -> dict:
    """Vectors from the seesaw CoM to the ground contact and the two foot frames (world)."""
    p_sp, p_sl, p_sr = _geometry(params, state.rotation)
    return {"p_sp": p_sp, "p_sl": p_sl, "p_sr": p_sr}


def _jr(params, R):
    _, p_sl, p_sr = _geometry(params, R)
    Jbar = np.zeros((12, 6))
    for k, p in enumerate((p_sl, p_sr)):
        Jbar[6 * k:6 * k + 3, :3] = np.eye(3)
        Jbar[6 * k:6 * k + 3, 3:] = -skew(p)
        Jbar[6 * k + 3:6 * k + 6, 3:] = np.eye(3)
    return Jbar @ block_rotation(R)


def _js(params, R):
    p_sp, _, _ = _geometry(params, R)
    Jbar = np.zeros((5, 6))
    Jbar[:3, :3] = np.eye(3)
    Jbar[:3, 3:] = -skew(p_sp)
    Jbar[3, 4] = 1.0
    Jbar[4, 5] = 1.0
    return Jbar @ block_rotation(R)


def jacobian_r(params: SeesawParams, state: SeesawState) -> np.ndarray:
    """12x6 map from body-frame seesaw velocity to the stacked foot-frame velocities."""
    return _jr(params, state.rotation)


def jacobian_s(params: SeesawParams, state: SeesawState) -> np.ndarray:
    """5x6 rolling constraint: contact-point velocity plus world pitch and yaw rates."""
    return _js(params, state.rotation)


def jacobian_dot_terms(params: SeesawParams, state: SeesawState, step: float = JDOT_STEP):
    """(Jr_dot @ nu_s, Js_dot @ nu_s) by central differences along the rotation flow.

    Both Jacobians depend on the state only through the rotation, which evolves
    as ``R exp(t * omega)`` for body-frame angular velocity ``omega``.
    """
    nu = state.nu_s
    w = nu[3:]
    if not np.any(w):
        return np.zeros(12), np.zeros(5)
    Rp = state.rotation @ so3_exp(step * w)
    Rm = state.rotation @ so3_exp(-step * w)
    jr = (_jr(params, Rp) - _jr(params, Rm)) @ nu / (2 * step)
    js = (_js(params, Rp) - _js(params, Rm)) @ nu / (2 * step)
    return jr, js


def seesaw_forward_dynamics(params: SeesawParams, state: SeesawState, f, f_s,
                            gravity: float = 9.81) -> np.ndarray:
    """Body-frame seesaw acceleration under foot wrenches ``f`` and ground reaction ``f_s``.

    ``f`` is the wrench the seesaw applies on the robot feet, so the board
    receives its opposite.
    """
    Ms = seesaw_mass_matrix(params)
    rhs = (-seesaw_bias(params, state, gravity) - jacobian_r(params, state).T @ f
           + jacobian_s(params, state).T @ f_s)
    return np.linalg.solve(Ms, rhs)


def momentum_frame_transform(H, R, direction: str = "to-inertial") -> np.ndarray:
    """Rotate a (linear; angular) momentum between body and inertial coordinates."""
    X = block_rotation(R)
    if direction == "to-inertial":
        return X @ H
    if direction == "to-body":
        return X.T @ H
    raise ValueError(f"unknown direction {direction!r}")


@dataclass
class SeesawTerms:
    """Per-state seesaw quantities used by the simulator and the controllers."""

    Ms: np.ndarray
    hs: np.ndarray
    Jr: np.ndarray
    Js: np.ndarray
    Jr_dot_nu: np.ndarray
    Js_dot_nu: np.ndarray
    p_sp: np.ndarray
    p_sl: np.ndarray
    p_sr: np.ndarray

    @property
    def foot_positions(self):
        return self.p_sl, self.p_sr


def seesaw_terms(params: SeesawParams, state: SeesawState, gravity: float = 9.81) -> SeesawTerms:
    p_sp, p_sl, p_sr = _geometry(params, state.rotation)
    jr_dot, js_dot = jacobian_dot_terms(params, state)
    return SeesawTerms(seesaw_mass_matrix(params), seesaw_bias(params, state, gravity),
                       jacobian_r(params, state), jacobian_s(params, state), jr_dot, js_dot,
                       p_sp, p_sl, p_sr)


def random_rolling_state(params: SeesawParams, rng, theta_range=0.5, rate=1.0) -> SeesawState:
    return SeesawState.rolling(params, rng.uniform(-theta_range, theta_range),
                               rng.normal(scale=rate), rng.normal(scale=0.1), rng.normal(scale=0.1))
