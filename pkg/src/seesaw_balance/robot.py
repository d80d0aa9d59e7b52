"""Floating-base rigid-body dynamics of the robot.

Generalized velocity ``nu = (v_B, omega_B, qdot_j)`` with ``v_B`` the base
origin velocity and ``omega_B`` the base angular velocity, both in the
inertial frame. Contact frames use the same "mixed" convention: linear
velocity of the frame origin and angular velocity, inertial coordinates.

Internally the recursions work with spatial vectors expressed at the
inertial origin, ordered (linear; angular). In those coordinates no
frame-to-frame transforms are needed during the passes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .spatial import cross, rpy_to_matrix, skew, so3_exp

MODEL_DIR = Path(__file__).parent / "data" / "models"


class ModelError(ValueError):
    """Raised for malformed or physically invalid model files."""


# ---------------------------------------------------------------------------
# file schema

Vec3 = tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OriginSpec(_Strict):
    xyz: Vec3 = (0.0, 0.0, 0.0)
    rpy: Vec3 = (0.0, 0.0, 0.0)


class LinkSpec(_Strict):
    name: str
    mass: float = Field(gt=0.0)
    inertia: tuple[Vec3, Vec3, Vec3]
    com: Vec3 = (0.0, 0.0, 0.0)


class JointSpec(_Strict):
    name: str
    type: Literal["revolute"] = "revolute"
    parent: str
    child: str
    axis: Vec3
    origin: OriginSpec = OriginSpec()


class FrameSpec(_Strict):
    link: str
    xyz: Vec3 = (0.0, 0.0, 0.0)
    rpy: Vec3 = (0.0, 0.0, 0.0)


class FootFrames(_Strict):
    left: FrameSpec
    right: FrameSpec


class ModelFile(_Strict):
    """Schema of a robot model file (SI units, radians)."""

    name: str
    gravity: float = Field(default=9.81, ge=0.0)
    total_mass: float = Field(gt=0.0)
    links: list[LinkSpec] = Field(min_length=1)
    joints: list[JointSpec] = []
    foot_frames: FootFrames | None = None
    torso_frame: FrameSpec | None = None
    nominal_posture: dict[str, float] = {}

    @field_validator("links")
    @classmethod
    def _unique_links(cls, v):
        names = [l.name for l in v]
        if len(set(names)) != len(names):
            raise ValueError("duplicate link names")
        return v


def model_json_schema() -> dict:
    return ModelFile.model_json_schema()


# ---------------------------------------------------------------------------
# runtime model

@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    inertia: np.ndarray  # about the link CoM, link frame
    com: np.ndarray      # link frame


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # body index
    child: int   # body index
    axis: np.ndarray
    origin_rotation: np.ndarray
    origin_position: np.ndarray


@dataclass(frozen=True)
class Frame:
    name: str
    body: int
    rotation: np.ndarray
    position: np.ndarray


@dataclass(frozen=True)
class RobotModel:
    """Kinematic tree with a floating root body.

    ``links`` are stored in a topological order with the root first; joints
    keep the file order, which is also the order of ``q_j``.
    """

    name: str
    gravity: float
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    feet: tuple[Frame, Frame] | None
    torso: Frame | None
    nominal_posture: np.ndarray
    # body k > 0 is the child of joint body_joint[k], parent body body_parent[k]
    body_joint: tuple[int, ...] = field(repr=False)
    body_parent: tuple[int, ...] = field(repr=False)
    # support[k, i] is True when joint i lies on the path root -> body k
    support: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def nv(self) -> int:
        return len(self.joints) + 6

    @property
    def mass(self) -> float:
        return float(sum(l.mass for l in self.links))

    def link_index(self, name: str) -> int:
        for k, l in enumerate(self.links):
            if l.name == name:
                return k
        raise KeyError(name)

    def frame(self, name: str) -> Frame:
        if name in ("left_foot", "l_sole") and self.feet:
            return self.feet[0]
        if name in ("right_foot", "r_sole") and self.feet:
            return self.feet[1]
        if self.torso is not None and name in ("torso", self.torso.name):
            return self.torso
        for f in (self.feet or ()):
            if f.name == name:
                return f
        # any link name addresses its link frame
        try:
            k = self.link_index(name)
        except KeyError:
            raise KeyError(f"unknown frame {name!r}") from None
        return Frame(name, k, np.eye(3), np.zeros(3))


def _spd(I):
    if np.abs(I - I.T).max() > 1e-9:
        return False
    return bool(np.linalg.eigvalsh(0.5 * (I + I.T)).min() > 0.0)


def build_model(spec: ModelFile) -> RobotModel:
    names = [l.name for l in spec.links]
    index = {nm: k for k, nm in enumerate(names)}
    parent_of: dict[str, int] = {}
    children: dict[str, list[int]] = {nm: [] for nm in names}
    for i, j in enumerate(spec.joints):
        for end in (j.parent, j.child):
            if end not in index:
                raise ModelError(f"joint {j.name!r} references unknown link {end!r}")
        if j.child in parent_of:
            raise ModelError(f"link {j.child!r} has more than one parent joint")
        if j.child == j.parent:
            raise ModelError(f"joint {j.name!r} connects a link to itself")
        parent_of[j.child] = i
        children[j.parent].append(i)
        if np.linalg.norm(j.axis) < 1e-12:
            raise ModelError(f"joint {j.name!r} has a zero-norm axis")
    roots = [nm for nm in names if nm not in parent_of]
    if len(roots) != 1:
        raise ModelError(f"model must have exactly one root link, found {roots}")

    # breadth-first order from the root; catches cycles and disconnected parts
    order = [roots[0]]
    k = 0
    while k < len(order):
        for i in children[order[k]]:
            order.append(spec.joints[i].child)
        k += 1
    if len(order) != len(names):
        raise ModelError("kinematic graph is not a tree rooted at the base link")
    body_of = {nm: b for b, nm in enumerate(order)}

    links = []
    for nm in order:
        ls = spec.links[index[nm]]
        I = np.array(ls.inertia, dtype=float)
        if not _spd(I):
            raise ModelError(f"inertia of link {nm!r} is not symmetric positive definite")
        links.append(Link(nm, float(ls.mass), I, np.array(ls.com, dtype=float)))

    joints = []
    for j in spec.joints:
        axis = np.array(j.axis, dtype=float)
        joints.append(Joint(j.name, body_of[j.parent], body_of[j.child],
                            axis / np.linalg.norm(axis),
                            rpy_to_matrix(j.origin.rpy), np.array(j.origin.xyz, dtype=float)))

    nb = len(links)
    body_joint = [-1] * nb
    body_parent = [-1] * nb
    for i, j in enumerate(joints):
        body_joint[j.child] = i
        body_parent[j.child] = j.parent
    support = np.zeros((nb, len(joints)), dtype=bool)
    for b in range(1, nb):
        support[b] = support[body_parent[b]]
        support[b, body_joint[b]] = True

    def frame(name, fs):
        if fs.link not in body_of:
            raise ModelError(f"frame {name!r} references unknown link {fs.link!r}")
        return Frame(name, body_of[fs.link], rpy_to_matrix(fs.rpy), np.array(fs.xyz, dtype=float))

    feet = None
    if spec.foot_frames is not None:
        feet = (frame("left_foot", spec.foot_frames.left), frame("right_foot", spec.foot_frames.right))
    torso = frame("torso", spec.torso_frame) if spec.torso_frame is not None else None

    jnames = [j.name for j in spec.joints]
    posture = np.zeros(len(joints))
    for nm, val in spec.nominal_posture.items():
        if nm not in jnames:
            raise ModelError(f"nominal posture references unknown joint {nm!r}")
        posture[jnames.index(nm)] = val

    model = RobotModel(spec.name, spec.gravity, tuple(links), tuple(joints), feet, torso,
                       posture, tuple(body_joint), tuple(body_parent), support)
    if abs(model.mass - spec.total_mass) > 1e-9:
        raise ModelError(f"link masses sum to {model.mass}, file declares {spec.total_mass}")
    return model


def load_model(path) -> RobotModel:
    """Load and validate a model file. Bare names resolve to bundled models."""
    p = Path(path)
    if not p.exists() and (MODEL_DIR / f"{path}.json").exists():
        p = MODEL_DIR / f"{path}.json"
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ModelError(f"{p}: malformed JSON: {exc}") from exc
    try:
        spec = ModelFile.model_validate(raw)
    except ValidationError as exc:
        raise ModelError(f"{p}: {exc}") from exc
    return build_model(spec)


# ---------------------------------------------------------------------------
# state

@dataclass
class RobotState:
    base_position: np.ndarray
    base_rotation: np.ndarray
    q: np.ndarray
    nu: np.ndarray

    @classmethod
    def zero(cls, model: RobotModel) -> "RobotState":
        return cls(np.zeros(3), np.eye(3), np.zeros(model.n), np.zeros(model.nv))

    def copy(self) -> "RobotState":
        return RobotState(self.base_position.copy(), self.base_rotation.copy(),
                          self.q.copy(), self.nu.copy())


def integrate(state: RobotState, nu, dt) -> RobotState:
    """Advance the configuration along ``nu`` for ``dt`` (velocity kept as ``nu``)."""
    nu = np.asarray(nu, dtype=float)
    return RobotState(state.base_position + dt * nu[:3],
                      so3_exp(dt * nu[3:6]) @ state.base_rotation,
                      state.q + dt * nu[6:],
                      nu.copy())


# ---------------------------------------------------------------------------
# kinematics and dynamics

def _axis_rotation(axis, angle):
    return so3_exp(axis * angle)


@dataclass
class Kinematics:
    """Per-body world poses and spatial quantities for one state."""

    R: np.ndarray       # (nb, 3, 3) link orientations
    p: np.ndarray       # (nb, 3) link frame origins
    c: np.ndarray       # (nb, 3) link CoMs
    S: np.ndarray       # (n, 6) joint motion vectors at the inertial origin
    SB: np.ndarray      # (6, 6) base motion subspace
    I: np.ndarray       # (nb, 6, 6) spatial inertias at the inertial origin
    V: np.ndarray | None = None   # (nb, 6) spatial velocities
    A: np.ndarray | None = None   # (nb, 6) velocity-product accelerations (no gravity)

    def frame_pose(self, frame: Frame):
        R = self.R[frame.body]
        return R @ frame.rotation, self.p[frame.body] + R @ frame.position


def _spatial_inertia(m, c, Ic):
    Sc = skew(c)
    I6 = np.empty((6, 6))
    I6[:3, :3] = m * np.eye(3)
    I6[:3, 3:] = -m * Sc
    I6[3:, :3] = m * Sc
    I6[3:, 3:] = Ic - m * (Sc @ Sc)
    return I6


def _crm(V, X):
    """Motion cross product V x X for (linear; angular) six-vectors."""
    v, w = V[:3], V[3:]
    return np.concatenate((cross(w, X[:3]) + cross(v, X[3:]), cross(w, X[3:])))


def _crf(V, F):
    v, w = V[:3], V[3:]
    return np.concatenate((cross(w, F[:3]), cross(w, F[3:]) + cross(v, F[:3])))


def kinematics(model: RobotModel, state: RobotState, velocities: bool = True) -> Kinematics:
    nb = len(model.links)
    n = model.n
    R = np.empty((nb, 3, 3))
    p = np.empty((nb, 3))
    c = np.empty((nb, 3))
    I = np.empty((nb, 6, 6))
    S = np.empty((n, 6))
    R[0] = state.base_rotation
    p[0] = state.base_position
    for b in range(1, nb):
        i = model.body_joint[b]
        j = model.joints[i]
        Rp = R[model.body_parent[b]]
        Rj = Rp @ j.origin_rotation
        R[b] = Rj @ _axis_rotation(j.axis, state.q[i])
        p[b] = p[model.body_parent[b]] + Rp @ j.origin_position
        a = Rj @ j.axis
        S[i, :3] = cross(p[b], a)
        S[i, 3:] = a
    for b, link in enumerate(model.links):
        c[b] = p[b] + R[b] @ link.com
        I[b] = _spatial_inertia(link.mass, c[b], R[b] @ link.inertia @ R[b].T)
    SB = np.eye(6)
    SB[:3, 3:] = skew(state.base_position)
    kin = Kinematics(R, p, c, S, SB, I)
    if velocities:
        nu = state.nu
        V = np.empty((nb, 6))
        A = np.empty((nb, 6))
        V[0] = SB @ nu[:6]
        A[0, :3] = cross(nu[:3], nu[3:6])
        A[0, 3:] = 0.0
        for b in range(1, nb):
            i = model.body_joint[b]
            par = model.body_parent[b]
            sq = S[i] * nu[6 + i]
            V[b] = V[par] + sq
            A[b] = A[par] + _crm(V[b], sq)
        kin.V = V
        kin.A = A
    return kin


def forward_kinematics(model: RobotModel, state: RobotState):
    """World pose and mixed velocity (v, omega) of every link frame and named frame."""
    kin = kinematics(model, state)
    out = {}
    for b, link in enumerate(model.links):
        V = kin.V[b]
        out[link.name] = (kin.R[b], kin.p[b], np.concatenate((V[:3] + cross(V[3:], kin.p[b]), V[3:])))
    frames = list(model.feet or ()) + ([model.torso] if model.torso else [])
    for f in frames:
        Rf, pf = kin.frame_pose(f)
        V = kin.V[f.body]
        out[f.name] = (Rf, pf, np.concatenate((V[:3] + cross(V[3:], pf), V[3:])))
    return out


def _mass_matrix(model, kin):
    nb = len(model.links)
    nv = model.nv
    Ic = kin.I.copy()
    for b in range(nb - 1, 0, -1):
        Ic[model.body_parent[b]] += Ic[b]
    M = np.zeros((nv, nv))
    SB = kin.SB
    M[:6, :6] = SB.T @ Ic[0] @ SB
    for b in range(1, nb):
        i = model.body_joint[b]
        F = Ic[b] @ kin.S[i]
        M[6 + i, 6 + i] = kin.S[i] @ F
        a = model.body_parent[b]
        while a != 0:
            j = model.body_joint[a]
            M[6 + j, 6 + i] = M[6 + i, 6 + j] = kin.S[j] @ F
            a = model.body_parent[a]
        M[:6, 6 + i] = SB.T @ F
        M[6 + i, :6] = M[:6, 6 + i]
    return M


def mass_matrix(model: RobotModel, state: RobotState) -> np.ndarray:
    """Composite-rigid-body mass matrix."""
    return _mass_matrix(model, kinematics(model, state, velocities=False))


def _bias(model, kin, nu, gravity):
    nb = len(model.links)
    F = np.empty((nb, 6))
    ag = np.array([0.0, 0.0, gravity, 0.0, 0.0, 0.0])
    for b in range(nb):
        IV = kin.I[b] @ kin.V[b]
        F[b] = kin.I[b] @ (kin.A[b] + ag) + _crf(kin.V[b], IV)
    h = np.empty(model.nv)
    for b in range(nb - 1, 0, -1):
        h[6 + model.body_joint[b]] = kin.S[model.body_joint[b]] @ F[b]
        F[model.body_parent[b]] += F[b]
    h[:6] = kin.SB.T @ F[0]
    return h


def bias_forces(model: RobotModel, state: RobotState, gravity: float | None = None) -> np.ndarray:
    """h = C(q, nu) nu + G(q) by Newton-Euler with zero acceleration."""
    g = model.gravity if gravity is None else gravity
    kin = kinematics(model, state)
    return _bias(model, kin, state.nu, g)


def _frame_jacobian(model, kin, body, point):
    J = np.zeros((6, model.nv))
    J[:3, :3] = np.eye(3)
    J[:3, 3:6] = -skew(point - kin.p[0])
    J[3:, 3:6] = np.eye(3)
    cols = np.nonzero(model.support[body])[0]
    Sc = kin.S[cols]
    J[:3, 6 + cols] = (Sc[:, :3] - np.cross(point, Sc[:, 3:])).T
    J[3:, 6 + cols] = Sc[:, 3:].T
    return J


def _frame_bias(kin, body, point):
    V = kin.V[body]
    A = kin.A[body]
    w = V[3:]
    vp = V[:3] + cross(w, point)
    return np.concatenate((A[:3] + cross(A[3:], point) + cross(w, vp), A[3:]))


def frame_jacobian(model: RobotModel, state: RobotState, frame: Frame | str) -> np.ndarray:
    if isinstance(frame, str):
        frame = model.frame(frame)
    kin = kinematics(model, state, velocities=False)
    _, pf = kin.frame_pose(frame)
    return _frame_jacobian(model, kin, frame.body, pf)


def _require_feet(model):
    if model.feet is None:
        raise ModelError(f"model {model.name!r} has no foot frames")
    return model.feet


def contact_jacobian(model: RobotModel, state: RobotState) -> np.ndarray:
    """Stacked left/right foot Jacobians, 12 x (n+6)."""
    feet = _require_feet(model)
    kin = kinematics(model, state, velocities=False)
    return np.vstack([_frame_jacobian(model, kin, f.body, kin.frame_pose(f)[1]) for f in feet])


def jacobian_dot_nu(model: RobotModel, state: RobotState) -> np.ndarray:
    """Jdot nu for the stacked foot frames."""
    feet = _require_feet(model)
    kin = kinematics(model, state)
    return np.concatenate([_frame_bias(kin, f.body, kin.frame_pose(f)[1]) for f in feet])


def _centroidal(model, kin):
    m = model.mass
    masses = np.array([l.mass for l in model.links])
    com = masses @ kin.c / m
    hO = np.einsum("bij,bj->i", kin.I, kin.V)
    H = hO.copy()
    H[3:] -= cross(com, hO[:3])
    return com, H


def centroidal_momentum(model: RobotModel, state: RobotState):
    """Returns (H, x_c, xdot_c); H = (linear, angular) momentum about the CoM."""
    kin = kinematics(model, state)
    com, H = _centroidal(model, kin)
    return H, com, H[:3] / model.mass


def _wrench_map(points, com):
    """J_b (12 x 6): J_b.T f is the sum of the foot wrenches moved to the CoM."""
    Jb = np.zeros((6 * len(points), 6))
    for k, pk in enumerate(points):
        Jb[6 * k:6 * k + 6] = np.eye(6)
        Jb[6 * k:6 * k + 3, 3:] = skew(pk - com).T
    return Jb


def centroidal_wrench_map(model: RobotModel, state: RobotState):
    """Return (J_b, J_j): CoM wrench map and the joint block of the contact Jacobian."""
    feet = _require_feet(model)
    kin = kinematics(model, state)
    com, _ = _centroidal(model, kin)
    points = [kin.frame_pose(f)[1] for f in feet]
    J = np.vstack([_frame_jacobian(model, kin, f.body, pt) for f, pt in zip(feet, points)])
    return _wrench_map(points, com), J[:, 6:]


@dataclass
class RobotTerms:
    """Everything the simulator and the controllers need at one state."""

    M: np.ndarray
    h: np.ndarray
    J: np.ndarray          # feet, 12 x nv (None-model-feet: empty)
    Jdot_nu: np.ndarray
    com: np.ndarray
    H: np.ndarray
    Jb: np.ndarray         # 12 x 6 centroidal wrench map
    foot_rotations: list
    foot_positions: list
    foot_velocities: np.ndarray  # J nu
    kin: Kinematics = field(repr=False)

    @property
    def com_velocity(self):
        return self.H[:3] / self.M[0, 0]


def robot_terms(model: RobotModel, state: RobotState, gravity: float | None = None) -> RobotTerms:
    g = model.gravity if gravity is None else gravity
    kin = kinematics(model, state)
    M = _mass_matrix(model, kin)
    h = _bias(model, kin, state.nu, g)
    com, H = _centroidal(model, kin)
    if model.feet is not None:
        poses = [kin.frame_pose(f) for f in model.feet]
        rots = [P[0] for P in poses]
        pts = [P[1] for P in poses]
        J = np.vstack([_frame_jacobian(model, kin, f.body, pt) for f, pt in zip(model.feet, pts)])
        Jdn = np.concatenate([_frame_bias(kin, f.body, pt) for f, pt in zip(model.feet, pts)])
        Jb = _wrench_map(pts, com)
    else:
        rots, pts = [], []
        J = np.zeros((0, model.nv))
        Jdn = np.zeros(0)
        Jb = np.zeros((0, 6))
    return RobotTerms(M, h, J, Jdn, com, H, Jb, rots, pts, J @ state.nu, kin)


def frame_jacobian_from(model: RobotModel, terms: RobotTerms, frame: Frame) -> np.ndarray:
    kin = terms.kin
    _, pf = kin.frame_pose(frame)
    return _frame_jacobian(model, kin, frame.body, pf)


def random_state(model: RobotModel, rng, q_spread=0.3, v_scale=0.5, around=None) -> RobotState:
    """Posture near ``around`` (nominal by default) with random base pose and velocities."""
    q0 = model.nominal_posture if around is None else around
    return RobotState(rng.normal(scale=0.5, size=3),
                      so3_exp(rng.normal(scale=0.5, size=3)),
                      q0 + rng.uniform(-q_spread, q_spread, size=model.n),
                      rng.normal(scale=v_scale, size=model.nv))
