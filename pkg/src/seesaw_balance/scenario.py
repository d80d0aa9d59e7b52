"""Scenario files, batch runs, output files and the rank survey.

A scenario is a JSON document validated by :class:`Scenario`. Every field
has an explicit default, and ``scenario-resolved.json`` written next to the
log is the fully defaulted form, so re-running it replays the log exactly.
"""
from __future__ import annotations

import json
import logging
import operator
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .control import (BalanceController, CoMTrajectory, ControllerConfig, ControllerMode, Gains,
                      reduce_seesaw_dynamics, task_matrix_Af)
from .qp import ContactLimits
from .robot import MODEL_DIR, RobotModel, load_model, robot_terms
from .seesaw import SeesawParams, seesaw_terms
from .sim import RIGID, SEESAW, Disturbance, SimConfig, SimLog, initial_world, run

log = logging.getLogger(__name__)

CONTROLLERS = {
    "robot-momentum": ControllerMode.ROBOT_MOMENTUM,
    "mixed": ControllerMode.MIXED_MOMENTUM,
    "rigid": ControllerMode.RIGID,
}
SETTLE_FRACTION = 0.05
SCENARIO_DIR = Path(__file__).parent / "data" / "scenarios"


class ScenarioError(ValueError):
    """Invalid scenario file; the message carries the field path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SeesawConfig(_Strict):
    mass: float = Field(4.0, gt=0)
    inertia: list[float] = Field(default_factory=lambda: [0.02, 0.08, 0.09],
                                 min_length=3, max_length=3)
    radius: float = Field(0.25, gt=0)
    com_drop: float = Field(0.05, ge=0)
    initial_roll: float = 0.0

    @field_validator("inertia")
    @classmethod
    def _positive(cls, v):
        if min(v) <= 0:
            raise ValueError("principal inertias must be positive")
        return v

    def params(self) -> SeesawParams:
        return SeesawParams(self.mass, np.diag(self.inertia), self.radius, self.com_drop)


class GainsConfig(_Strict):
    """Diagonal gains; momentum rows ordered (linear; angular)."""

    kp_linear: float = Field(50.0, gt=0)
    kp_angular: float = Field(20.0, gt=0)
    ki_linear: float = Field(10.0, ge=0)
    kp_joint: float = Field(30.0, gt=0)
    kd_joint: float = Field(float(2.0 * np.sqrt(30.0)), gt=0)

    def gains(self, n: int) -> Gains:
        return Gains(np.diag([self.kp_linear] * 3 + [self.kp_angular] * 3),
                     np.diag([self.ki_linear] * 3 + [0.0] * 3),
                     self.kp_joint * np.eye(n), self.kd_joint * np.eye(n))


class ContactConfig(_Strict):
    mu: float = Field(0.333, gt=0)
    f_z_min: float = Field(5.0, ge=0)

    def limits(self) -> ContactLimits:
        return ContactLimits(mu=self.mu, f_z_min=self.f_z_min)


class ReferenceConfig(_Strict):
    """Constant CoM set point (the initial CoM plus ``offset``) or a sinusoid about it."""

    kind: Literal["constant", "sinusoid"] = "constant"
    offset: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    axis: int = Field(1, ge=0, le=2)
    amplitude: float = Field(0.0, ge=0)
    frequency: float = Field(0.0, ge=0)
    ramp: float = Field(0.0, ge=0)


class DisturbanceConfig(_Strict):
    frame: str = "torso"
    force: list[float] = Field(min_length=3, max_length=3)
    torque: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0], min_length=3, max_length=3)
    t_start: float = Field(ge=0)
    duration: float = Field(gt=0)


class AssertionConfig(_Strict):
    """Check on one metric, e.g. ``{"metric": "theta_abs_max", "op": "<=", "value": 0.5}``."""

    metric: str
    op: Literal["<", "<=", ">", ">=", "=="]
    value: float


class Scenario(_Strict):
    name: str
    model: str = "icub-reduced"
    support: Literal["seesaw", "rigid"] = "seesaw"
    seesaw: SeesawConfig = Field(default_factory=SeesawConfig)
    controller: Literal["robot-momentum", "mixed", "rigid"] = "mixed"
    gains: GainsConfig = Field(default_factory=GainsConfig)
    contact: ContactConfig = Field(default_factory=ContactConfig)
    initial_posture: dict[str, float] = Field(default_factory=dict)
    reference: ReferenceConfig = Field(default_factory=ReferenceConfig)
    disturbances: list[DisturbanceConfig] = Field(default_factory=list)
    duration: float = Field(gt=0)
    dt_physics: float = Field(1e-3, gt=0)
    dt_control: float = Field(1e-2, gt=0)
    alpha: float = Field(20.0, ge=0)
    beta: float = Field(20.0, ge=0)
    null_space_force: float = Field(0.0, ge=0)
    output: str | None = None
    seed: int = 0
    assertions: list[AssertionConfig] = Field(default_factory=list)

    @field_validator("dt_control")
    @classmethod
    def _multiple(cls, v, info):
        dt = info.data.get("dt_physics")
        if dt is not None and abs(v / dt - round(v / dt)) > 1e-9:
            raise ValueError("dt_control must be an integer multiple of dt_physics")
        return v

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


class DisturbanceMetrics(BaseModel):
    t_start: float
    peak: float | None              # None when the run ended before the disturbance
    t_peak: float | None
    first_below: float | None       # first time after the peak under 5% of it
    settling_time: float | None     # from the peak until the error stays under 5%


class Metrics(BaseModel):
    scenario: str
    controller: str
    fault: str | None
    duration: float
    samples: int
    momentum_error_final: float
    momentum_error_max: float
    robot_linear_error_max: float
    robot_angular_error_max: float
    mixed_error_max: float
    theta_min: float
    theta_max: float
    theta_abs_max: float
    com_rmse: float
    com_error_max: float
    max_coupling_residual: float
    max_rolling_residual: float
    max_kkt_residual: float
    qp_non_optimal_ticks: int
    disturbances: list[DisturbanceMetrics]


# ---------------------------------------------------------------------------
# loading

def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def parse_scenario(raw: dict, base_dir: Path | None = None) -> Scenario:
    try:
        scenario = Scenario.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioError(_format_errors(exc)) from exc
    _check_model_reference(scenario, base_dir)
    return scenario


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists() and (SCENARIO_DIR / f"{path}.json").exists():
        p = SCENARIO_DIR / f"{path}.json"
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: malformed JSON: {exc}") from exc
    return parse_scenario(raw, p.parent)


def _check_model_reference(scenario: Scenario, base_dir: Path | None):
    ref = Path(scenario.model)
    candidates = [ref, MODEL_DIR / f"{scenario.model}.json"]
    if base_dir is not None and not ref.is_absolute():
        candidates.append(base_dir / ref)
    if not any(c.exists() for c in candidates):
        raise ScenarioError(f"model: file {scenario.model!r} does not exist")


def _resolve_model(scenario: Scenario, base_dir: Path | None = None) -> RobotModel:
    ref = Path(scenario.model)
    if base_dir is not None and not ref.is_absolute() and (base_dir / ref).exists():
        return load_model(base_dir / ref)
    return load_model(scenario.model)


# ---------------------------------------------------------------------------
# running

def build(scenario: Scenario, base_dir: Path | None = None):
    """Model, seesaw parameters, initial world and controller for a scenario."""
    model = _resolve_model(scenario, base_dir)
    q = model.nominal_posture.copy()
    names = [j.name for j in model.joints]
    for name, value in scenario.initial_posture.items():
        if name not in names:
            raise ScenarioError(f"initial_posture.{name}: unknown joint")
        q[names.index(name)] = value
    mode = CONTROLLERS[scenario.controller]
    if (scenario.support == "rigid") != (mode is ControllerMode.RIGID):
        raise ScenarioError("controller: the rigid controller needs rigid support and vice versa")
    params = scenario.seesaw.params() if scenario.support == "seesaw" else None
    world, params = initial_world(model, params, q, SEESAW if params is not None else RIGID,
                                  theta=scenario.seesaw.initial_roll)
    com0 = robot_terms(model, world.robot).com
    r = scenario.reference
    amplitude = r.amplitude if r.kind == "sinusoid" else 0.0
    reference = CoMTrajectory(com0 + np.asarray(r.offset), q, r.axis, amplitude, r.frequency, r.ramp)
    config = ControllerConfig(mode, scenario.gains.gains(model.n), scenario.contact.limits())
    controller = BalanceController(model, config, reference, params)
    return model, params, world, controller


def null_space_wrench(norm: float, seed: int) -> np.ndarray | None:
    """Fixed random wrench of the given norm, or None to let the QP choose."""
    if norm <= 0:
        return None
    v = np.random.default_rng(seed).standard_normal(12)
    return norm * v / np.linalg.norm(v)


def run_scenario(scenario: Scenario, base_dir: Path | None = None) -> tuple[SimLog, Metrics]:
    model, params, world, controller = build(scenario, base_dir)
    config = SimConfig(scenario.dt_physics, scenario.dt_control, scenario.alpha, scenario.beta)
    disturbances = [Disturbance(d.frame, np.r_[d.force, d.torque], d.t_start, d.duration)
                    for d in scenario.disturbances]
    for d in disturbances:
        model.frame(d.frame)  # unknown frames fail before the run starts
    log.info("running %s (%s controller, %.1f s)", scenario.name, scenario.controller,
             scenario.duration)
    sim_log = run(model, params, world, controller, scenario.duration, config, disturbances,
                  f0=null_space_wrench(scenario.null_space_force, scenario.seed))
    return sim_log, compute_metrics(scenario, sim_log)


def controlled_error(scenario: Scenario, sim_log: SimLog) -> np.ndarray:
    """Norm of the momentum error the selected controller regulates."""
    if scenario.controller == "mixed":
        return sim_log.column("Hm_err_norm")
    return np.hypot(sim_log.column("H_err_lin_norm"), sim_log.column("H_err_ang_norm"))


def settling(t, err, t_start, fraction=SETTLE_FRACTION) -> DisturbanceMetrics:
    after = t >= t_start - 1e-9
    idx = np.flatnonzero(after)
    if idx.size == 0:
        return DisturbanceMetrics(t_start=t_start, peak=None, t_peak=None, first_below=None,
                                  settling_time=None)
    k = idx[np.argmax(err[idx])]
    peak, t_peak = float(err[k]), float(t[k])
    tail_t, tail_e = t[k:], err[k:]
    below = tail_e < fraction * peak
    first = float(tail_t[np.argmax(below)]) if below.any() else None
    above = np.flatnonzero(~below)
    settle = None
    if below.any() and above[-1] < len(tail_t) - 1:
        settle = float(tail_t[above[-1] + 1] - t_peak)
    return DisturbanceMetrics(t_start=t_start, peak=peak, t_peak=t_peak, first_below=first,
                              settling_time=settle)


def compute_metrics(scenario: Scenario, sim_log: SimLog) -> Metrics:
    t = sim_log.column("t")
    err = controlled_error(scenario, sim_log)
    theta = sim_log.column("theta")
    axis = "xyz"[scenario.reference.axis]
    com_err = sim_log.column(f"xc_{axis}") - sim_log.column(f"xcd_{axis}")
    status = sim_log.column("qp_status")
    return Metrics(
        scenario=scenario.name, controller=scenario.controller, fault=sim_log.fault,
        duration=float(t[-1]), samples=len(t),
        momentum_error_final=float(err[-1]), momentum_error_max=float(err.max()),
        robot_linear_error_max=float(sim_log.column("H_err_lin_norm").max()),
        robot_angular_error_max=float(sim_log.column("H_err_ang_norm").max()),
        mixed_error_max=float(sim_log.column("Hm_err_norm").max()),
        theta_min=float(theta.min()), theta_max=float(theta.max()),
        theta_abs_max=float(np.abs(theta).max()),
        com_rmse=float(np.sqrt(np.mean(com_err ** 2))), com_error_max=float(np.abs(com_err).max()),
        max_coupling_residual=sim_log.max_coupling_residual,
        max_rolling_residual=sim_log.max_rolling_residual,
        max_kkt_residual=sim_log.max_kkt_residual,
        qp_non_optimal_ticks=int(np.sum((status != 0) & (status != 3))),
        disturbances=[settling(t, err, d.t_start) for d in scenario.disturbances])


_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "==": operator.eq}


def check_assertions(scenario: Scenario, metrics: Metrics) -> list[str]:
    """Messages for the scenario assertions that fail (empty when all pass)."""
    values = metrics.model_dump()
    failures = []
    for a in scenario.assertions:
        value = values
        for key in a.metric.split("."):
            if isinstance(value, list):
                value = value[int(key)]
            elif isinstance(value, dict) and key in value:
                value = value[key]
            else:
                value = None
                break
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            failures.append(f"{a.metric}: not a numeric metric")
        elif not _OPS[a.op](value, a.value):
            failures.append(f"{a.metric} = {value:.6g} violates {a.op} {a.value:g}")
    return failures


# ---------------------------------------------------------------------------
# output files

def write_log_csv(sim_log: SimLog, path):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(sim_log.columns) + "\n")
        for row in sim_log.rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_outputs(sim_log: SimLog, metrics: Metrics, scenario: Scenario, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"log": out / "log.csv", "metrics": out / "metrics.json",
             "scenario": out / "scenario-resolved.json"}
    write_log_csv(sim_log, paths["log"])
    paths["metrics"].write_text(metrics.model_dump_json(indent=2) + "\n")
    paths["scenario"].write_text(json.dumps(scenario.resolved(), indent=2, sort_keys=True) + "\n")
    return paths


# ---------------------------------------------------------------------------
# rank survey

def _rank_and_gap(A, rtol=1e-8):
    s = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    r = int(np.sum(s > rtol * s[0]))
    kept = s[r - 1] / s[0]
    dropped = s[r] / s[0] if r < s.size else 0.0
    return r, kept, dropped


def sample_state(model: RobotModel, params: SeesawParams, rng, joint_spread=0.15, roll_spread=0.3,
                 velocity_spread=0.2):
    """Random posture and roll angle with the feet attached to the board."""
    q = model.nominal_posture + rng.uniform(-joint_spread, joint_spread, model.n)
    theta = rng.uniform(-roll_spread, roll_spread)
    world, attached = initial_world(model, params, q, SEESAW, theta=theta)
    world.robot.nu = rng.normal(0.0, velocity_spread, model.nv)
    world.seesaw.nu_s[3] = rng.normal(0.0, velocity_spread)
    return world, attached


def rank_survey(model: RobotModel, params: SeesawParams, samples: int, seed: int) -> dict:
    """Rank histograms and singular-value gaps over random valid states."""
    if samples <= 0:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    names = ("A_s", "A_f", "J_s", "Lambda")
    ranks = {k: {} for k in names}
    gaps = {k: {"min_kept": np.inf, "max_dropped": 0.0} for k in names}
    for _ in range(samples):
        world, attached = sample_state(model, params, rng)
        rt = robot_terms(model, world.robot)
        st = seesaw_terms(attached, world.seesaw, model.gravity)
        red = reduce_seesaw_dynamics(st.Ms, st.hs, st.Jr, st.Js, st.Js_dot_nu)
        A_f, _ = task_matrix_Af(rt.Jb, red.A_s)
        Lam = np.linalg.solve(rt.M, rt.J.T)[6:].T
        for name, A in zip(names, (red.A_s, A_f, st.Js, Lam)):
            r, kept, dropped = _rank_and_gap(A)
            ranks[name][r] = ranks[name].get(r, 0) + 1
            gaps[name]["min_kept"] = min(gaps[name]["min_kept"], float(kept))
            gaps[name]["max_dropped"] = max(gaps[name]["max_dropped"], float(dropped))
    return {
        "model": model.name, "samples": samples, "seed": seed,
        "ranks": {k: {str(r): c for r, c in sorted(v.items())} for k, v in ranks.items()},
        "singular_value_gaps": gaps,
    }


