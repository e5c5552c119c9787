"""The data-driven control loop.

Each step solves for an actuation increment against the current Jacobian
estimate, commands it, reads back the features, filters actuation and
features, and corrects the estimate with the realized (filtered) secant pair.
The loop touches the plant only through :class:`PlantFeedback`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ddpmi.core import ActuationVector, DimensionError, FeaturePointSet, FeedbackFeatureVector
from ddpmi.estimator import DELTA_MIN, JacobianEstimate, SecantPair, StalledStepError, broyden_update
from ddpmi.ffv import Curvature, FfvKind, Overlay
from ddpmi.metrics import StepRecord, ymm
from ddpmi.signal import DEFAULT_DT, LowPassFilter
from ddpmi.stepsolver import ConstraintSet, SolverError, solve_step

log = logging.getLogger(__name__)


class PlantFeedback(Protocol):
    """What the controller may do with a plant: move it and look at it."""

    def command(self, delta_theta) -> None: ...

    def observe(self) -> FeaturePointSet: ...


class ControlAbort(RuntimeError):
    """The plant failed mid-run; ``log`` holds the records up to the failure."""

    def __init__(self, message: str, log: list[StepRecord]):
        super().__init__(message)
        self.log = log


@dataclass
class ControllerConfig:
    """Loop parameters.

    ``lambda_features`` may hold one gain pair per point or a single pair that
    is reused for every point. ``None`` disables the corresponding filter.
    ``theta_limits`` (lower, upper) adds per-step rows
    ``dtheta <= upper - theta`` and ``-dtheta <= theta - lower``.
    """

    ffv: FfvKind
    gamma_d: FeedbackFeatureVector
    j_init: JacobianEstimate
    beta: float = 0.7
    epsilon: float = 1.0
    max_steps: int = 1000
    constraints: ConstraintSet | None = None
    lambda_theta: Sequence[float] | None = (2.0, 2.0, 2.0)
    lambda_features: Sequence[float] | None = (2.0, 2.0)
    dt: float = DEFAULT_DT
    theta0: Sequence[float] | None = None
    theta_limits: tuple[Sequence[float], Sequence[float]] | None = None
    delta_min: float = DELTA_MIN

    def __post_init__(self):
        if not isinstance(self.gamma_d, FeedbackFeatureVector):
            self.gamma_d = FeedbackFeatureVector(self.gamma_d)
        if not isinstance(self.j_init, JacobianEstimate):
            self.j_init = JacobianEstimate(self.j_init, self.beta)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        N, n = self.j_init.shape
        if self.ffv.N != N or self.gamma_d.N != N:
            raise DimensionError(f"objective has N={self.ffv.N}, gamma_d {self.gamma_d.N}, Jacobian {N} rows")
        if n < N:
            raise DimensionError(f"need n >= N, got n={n}, N={N}")
        if self.constraints is None:
            self.constraints = ConstraintSet.box(n)
        if self.constraints.n != n:
            raise DimensionError(f"constraints are for n={self.constraints.n}, Jacobian has n={n}")
        if self.lambda_theta is not None and len(self.lambda_theta) != n:
            raise DimensionError(f"lambda_theta needs {n} gains")

    @property
    def n(self) -> int:
        return self.j_init.shape[1]


@dataclass
class ControllerState:
    J: JacobianEstimate
    theta: np.ndarray
    theta_filter: LowPassFilter | None
    feature_filter: LowPassFilter | None
    theta_f: np.ndarray
    features_f: np.ndarray
    gamma_f: np.ndarray
    step: int = 0
    updates: int = 0
    solver_failures: int = 0


@dataclass
class RunResult:
    log: list[StepRecord]
    converged: bool
    final_error: float
    solver_failures: int = 0
    updates: int = 0

    @property
    def steps(self) -> int:
        """Number of commands issued."""
        return self.log[-1].step if self.log else 0


def _feature_gains(cfg: ControllerConfig, M: int) -> np.ndarray | None:
    if cfg.lambda_features is None:
        return None
    lam = np.asarray(cfg.lambda_features, dtype=float).ravel()
    if lam.size == 2 * M:
        return lam
    if lam.size == 2:
        return np.tile(lam, M)
    raise DimensionError(f"lambda_features needs 2 or {2 * M} gains, got {lam.size}")


def _filter(f: LowPassFilter | None, x: np.ndarray) -> np.ndarray:
    return np.array(x, dtype=float) if f is None else f.apply(x)


def tracking_error(cfg: ControllerConfig, gamma) -> float:
    """Distance to the objective tested against ``epsilon``."""
    return cfg.ffv.objective_error(gamma, cfg.gamma_d.values)


def ede_of(cfg: ControllerConfig, features_f: np.ndarray, gamma_f: np.ndarray) -> float:
    """Overlay: pixel distance of the last selected point to its target.
    Curvature: radius-of-curvature error in pixels."""
    if isinstance(cfg.ffv, Overlay):
        return float(np.linalg.norm(gamma_f[-2:] - cfg.gamma_d.values[-2:]))
    err = tracking_error(cfg, gamma_f)
    return err if np.isfinite(err) else float(np.finfo(float).max)


def _record(cfg, state: ControllerState, raw: np.ndarray, delta, updated=False, failed=False) -> StepRecord:
    return StepRecord(
        step=state.step,
        theta=ActuationVector(state.theta),
        features=FeaturePointSet(raw),
        gamma=FeedbackFeatureVector(state.gamma_f),
        ede=ede_of(cfg, state.features_f, state.gamma_f),
        ymm=ymm(state.J),
        delta_theta=delta,
        error=tracking_error(cfg, state.gamma_f),
        updated=updated,
        solver_failed=failed,
    )


def init_state(cfg: ControllerConfig, plant: PlantFeedback) -> tuple[ControllerState, StepRecord]:
    """Read the first measurement and build the step-0 record."""
    raw = np.asarray(plant.observe().values)
    M = raw.size // 2
    cfg.ffv.validate(M)
    theta = np.zeros(cfg.n) if cfg.theta0 is None else np.array(cfg.theta0, dtype=float)
    if theta.size != cfg.n:
        raise DimensionError(f"theta0 has {theta.size} entries, expected {cfg.n}")
    lam_v = _feature_gains(cfg, M)
    tf = None if cfg.lambda_theta is None else LowPassFilter(cfg.lambda_theta, cfg.dt)
    vf = None if lam_v is None else LowPassFilter(lam_v, cfg.dt)
    theta_f = _filter(tf, theta)
    features_f = _filter(vf, raw)
    gamma_f = cfg.ffv.evaluate(FeaturePointSet(features_f)).values
    J = JacobianEstimate(cfg.j_init.matrix, cfg.beta)
    state = ControllerState(J, theta, tf, vf, theta_f, features_f, gamma_f)
    return state, _record(cfg, state, raw, np.zeros(cfg.n))


def step_constraints(cfg: ControllerConfig, theta: np.ndarray) -> ConstraintSet:
    cons = cfg.constraints
    if cfg.theta_limits is None:
        return cons
    lo, hi = (np.asarray(v, dtype=float) for v in cfg.theta_limits)
    eye = np.eye(cfg.n)
    # rounding can put theta a hair outside its limits; keep zero feasible
    b = np.maximum(np.concatenate([hi - theta, theta - lo]), 0.0)
    keep = np.isfinite(b)
    return cons.with_rows(np.vstack([eye, -eye])[keep], b[keep])


def step_once(cfg: ControllerConfig, plant: PlantFeedback, state: ControllerState) -> tuple[StepRecord, ControllerState]:
    """One iteration of the loop; mutates and returns ``state``."""
    target = cfg.gamma_d.values - state.gamma_f
    cons = step_constraints(cfg, state.theta)
    failed = False
    try:
        delta = solve_step(state.J, target, cons).delta_theta.values
    except SolverError as exc:
        log.warning("step %d: %s; commanding zero", state.step + 1, exc)
        delta = np.zeros(cfg.n)
        failed = True
        state.solver_failures += 1

    plant.command(delta)
    state.theta = state.theta + delta
    raw = np.asarray(plant.observe().values)
    theta_f = _filter(state.theta_filter, state.theta)
    features_f = _filter(state.feature_filter, raw)
    gamma_f = cfg.ffv.evaluate(FeaturePointSet(features_f)).values

    pair = SecantPair(theta_f - state.theta_f, gamma_f - state.gamma_f)
    updated = True
    try:
        state.J = broyden_update(state.J, pair, cfg.delta_min)
        state.updates += 1
    except StalledStepError:
        updated = False

    state.theta_f, state.features_f, state.gamma_f = theta_f, features_f, gamma_f
    state.step += 1
    return _record(cfg, state, raw, delta, updated, failed), state


def run_control_loop(cfg: ControllerConfig, plant: PlantFeedback) -> RunResult:
    """Iterate until the objective error is within ``epsilon`` or ``max_steps`` commands."""
    state, first = init_state(cfg, plant)
    records = [first]
    error = first.error
    while not error <= cfg.epsilon and state.step < cfg.max_steps:
        try:
            rec, state = step_once(cfg, plant, state)
        except Exception as exc:  # plant failures end the run; keep what we have
            raise ControlAbort(f"step {state.step + 1}: {exc}", records) from exc
        records.append(rec)
        error = rec.error
    return RunResult(records, bool(error <= cfg.epsilon), float(error), state.solver_failures, state.updates)
