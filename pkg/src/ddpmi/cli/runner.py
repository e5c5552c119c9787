"""Run scenarios and parameter sweeps, writing plot-ready logs.

Outputs of :func:`run_scenario` in ``out_dir``:

``log.csv``
    One row per step (step 0 is the initial measurement).
``summary.json``
    Convergence flag, step count, final errors, phase segmentation.
``config.resolved.json``
    The scenario with every default filled in.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from ddpmi.cli.config import ConfigError, ScenarioConfig, check_sweep, dump_scenario, scenario_to_dict
from ddpmi.controller import ControllerConfig, RunResult, run_control_loop
from ddpmi.core import FeedbackFeatureVector
from ddpmi.estimator import JacobianEstimate
from ddpmi.ffv import Curvature, DegenerateGeometryError, Overlay, three_point_curvature
from ddpmi.metrics import StepRecord, segment_phases
from ddpmi.sim import (
    BehindCameraError,
    CameraModel,
    CmModel,
    Elastic,
    HalfSpace,
    ObstacleSpec,
    Rigid,
    SimPlant,
    SimWorld,
    Sphere,
    VariableStiffness,
)
from ddpmi.stepsolver import ConstraintSet

PRESCAN_GRID = 15
PRESCAN_ROLLS = 5


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    result: RunResult
    log: list[StepRecord]
    gamma_d: np.ndarray
    target_px: np.ndarray | None
    reachable: bool


# -- building blocks --------------------------------------------------------


def build_model(cfg: ScenarioConfig) -> CmModel:
    m = cfg.manipulator
    return CmModel(m.length, m.bend_gain, m.sample_fractions, m.backlash_width)


def build_camera(cfg: ScenarioConfig) -> CameraModel:
    c = cfg.camera
    if c.projection is not None:
        return CameraModel(np.array(c.projection), cfg.noise_sigma)
    return CameraModel.look_at(c.position, c.look_at, c.up, c.focal, c.center, cfg.noise_sigma)


def build_obstacles(cfg: ScenarioConfig) -> list[ObstacleSpec]:
    out = []
    for o in cfg.obstacles:
        geom = HalfSpace(o.point, o.normal) if o.shape == "halfspace" else Sphere(o.center, o.radius)
        s = o.stiffness
        if s.kind == "rigid":
            stiff = Rigid()
        elif s.kind == "elastic":
            stiff = Elastic(s.k_obs)
        else:
            stiff = VariableStiffness(s.k_soft, s.k_stiff, s.depth_threshold)
        out.append(ObstacleSpec(geom, stiff, o.tangential_drag))
    return out


def build_world(cfg: ScenarioConfig) -> SimWorld:
    return SimWorld(
        build_model(cfg),
        build_camera(cfg),
        cfg.manipulator.theta0,
        build_obstacles(cfg),
        cfg.k_cm,
        seed=cfg.seed,
    )


def _free_features(cfg: ScenarioConfig, theta) -> np.ndarray:
    """Noise-free, obstacle-free features at ``theta``: (M, 2)."""
    world = SimWorld(build_model(cfg), CameraModel(build_camera(cfg).P, 0.0), cfg.manipulator.theta0)
    return world.noiseless_features(theta).points


def objective_setup(cfg: ScenarioConfig):
    """FFV kind, desired FFV value and (overlay only) target pixels."""
    obj = cfg.objective
    if obj.kind == "curvature":
        return Curvature(obj.points), np.array([1.0 / obj.radius_px]), None
    if obj.target_px is not None:
        target = np.array(obj.target_px, dtype=float)
    else:
        target = _free_features(cfg, obj.target_theta)[list(obj.points)]
    return Overlay(obj.points), target.ravel(), target


def initial_jacobian(cfg: ScenarioConfig, N: int) -> np.ndarray:
    j = cfg.controller.j_init
    if j.matrix is not None:
        base = np.array(j.matrix, dtype=float)
    elif j.mode == "identity":
        base = np.eye(N, 3)
    else:
        base = np.ones((N, 3))
    return j.scale * base


def controller_config(cfg: ScenarioConfig) -> ControllerConfig:
    c = cfg.controller
    ffv, gamma_d, _ = objective_setup(cfg)
    J0 = initial_jacobian(cfg, ffv.N)
    if c.delta_min is None:
        cons = ConstraintSet.box(3)
    else:
        cons = ConstraintSet(c.delta_min, c.delta_max)
    if c.A:
        cons = cons.with_rows(np.array(c.A), np.array(c.b))
    m = cfg.manipulator
    return ControllerConfig(
        ffv=ffv,
        gamma_d=FeedbackFeatureVector(gamma_d),
        j_init=JacobianEstimate(J0, c.beta),
        beta=c.beta,
        epsilon=c.epsilon,
        max_steps=c.max_steps,
        constraints=cons,
        lambda_theta=c.lambda_theta,
        lambda_features=c.lambda_features,
        dt=c.dt,
        theta0=m.theta0,
        theta_limits=(m.theta_lower, m.theta_upper),
    )


def prescan_reachable(cfg: ScenarioConfig, gamma_d: np.ndarray) -> bool:
    """Coarse free-space workspace check of the objective.

    Overlay: is each target pixel inside the convex hull of the pixels its
    point reaches on a grid over the actuation limits? Curvature: is the
    desired radius within the range seen on the grid?
    """
    m = cfg.manipulator
    lo = np.where(np.isfinite(m.theta_lower), m.theta_lower, -3.0)
    hi = np.where(np.isfinite(m.theta_upper), m.theta_upper, 3.0)
    model = build_model(cfg)
    cam = build_camera(cfg)
    world = SimWorld(model, CameraModel(cam.P, 0.0), m.theta0)
    grids = [np.linspace(lo[0], hi[0], PRESCAN_GRID), np.linspace(lo[1], hi[1], PRESCAN_GRID), np.linspace(lo[2], hi[2], PRESCAN_ROLLS)]
    samples = []
    for a in grids[0]:
        for b in grids[1]:
            for r in grids[2]:
                try:
                    samples.append(world.noiseless_features((a, b, r)).points)
                except BehindCameraError:
                    continue
    if not samples:
        return False
    pts = np.array(samples)
    obj = cfg.objective
    if obj.kind == "curvature":
        radii = []
        for s in pts:
            try:
                k = three_point_curvature(*(s[i] for i in obj.points))
            except DegenerateGeometryError:
                continue
            radii.append(np.inf if k == 0 else 1.0 / k)
        return bool(radii) and min(radii) <= obj.radius_px <= max(radii)
    targets = gamma_d.reshape(-1, 2)
    for idx, t in zip(obj.points, targets):
        cloud = pts[:, idx, :]
        try:
            if Delaunay(cloud).find_simplex(t) < 0:
                return False
        except QhullError:
            return False
    return True


# -- execution --------------------------------------------------------------


def simulate(cfg: ScenarioConfig, prescan: bool = True) -> ScenarioResult:
    """Run the closed loop for ``cfg`` and attach simulator ground truth to the log."""
    world = build_world(cfg)
    plant = SimPlant(world)
    ccfg = controller_config(cfg)
    result = run_control_loop(ccfg, plant)
    truth = plant.truth_log
    log = [replace(rec, contact=t.contact, theta_effective=t.theta_effective) for rec, t in zip(result.log, truth)]
    _, gamma_d, target = objective_setup(cfg)
    reachable = prescan_reachable(cfg, gamma_d) if prescan else True
    return ScenarioResult(cfg, replace(result, log=log), log, gamma_d, target, reachable)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def csv_header(n: int, M: int, N: int) -> list[str]:
    cols = ["step"]
    cols += [f"theta_{i}" for i in range(1, n + 1)]
    cols += [f"theta_eff_{i}" for i in range(1, n + 1)]
    for i in range(1, M + 1):
        cols += [f"v_{i}p", f"v_{i}q"]
    cols += [f"gamma_{i}" for i in range(1, N + 1)]
    cols += ["ede_px", "ymm", "contact", "converged"]
    return cols


def log_csv(res: ScenarioResult) -> str:
    log = res.log
    n = log[0].theta.n
    M = log[0].features.M
    N = log[0].gamma.N
    eps = res.config.controller.epsilon
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(n, M, N))
    for rec in log:
        row = [str(rec.step)]
        row += [_fmt(x) for x in rec.theta.values]
        row += [_fmt(x) for x in rec.theta_effective]
        row += [_fmt(x) for x in rec.features.values]
        row += [_fmt(x) for x in rec.gamma.values]
        row += [_fmt(rec.ede), _fmt(rec.ymm), str(int(rec.contact)), str(int(rec.error <= eps))]
        w.writerow(row)
    return buf.getvalue()


def summary(res: ScenarioResult) -> dict:
    seg = segment_phases(res.log)
    last = res.log[-1]
    out = {
        "name": res.config.name,
        "seed": res.config.seed,
        "converged": res.result.converged,
        "steps": res.result.steps,
        "final_error": res.result.final_error,
        "final_ede_px": last.ede,
        "objective": res.config.objective.kind,
        "gamma_d": res.gamma_d.tolist(),
        "target_reachable": res.reachable,
        "solver_failures": res.result.solver_failures,
        "jacobian_updates": res.result.updates,
        "contact_steps": int(sum(r.contact for r in res.log)),
        "phases": [{"start": a, "end": b, "label": lab} for a, b, lab in seg.segments],
    }
    if res.target_px is not None:
        out["target_px"] = res.target_px.tolist()
    if res.config.objective.kind == "curvature":
        k = float(last.gamma.values[0])
        out["final_radius_px"] = 1.0 / k if k > 0 else None
    return out


def write_outputs(res: ScenarioResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "log.csv").write_text(log_csv(res), encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(summary(res), indent=2) + "\n", encoding="utf-8")
    (out / "config.resolved.json").write_text(dump_scenario(res.config), encoding="utf-8")
    return out


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> ScenarioResult:
    """Simulate ``cfg`` and write log, summary and resolved config to ``out_dir``."""
    res = simulate(cfg)
    write_outputs(res, out_dir)
    return res


# -- sweeps -----------------------------------------------------------------


def with_param(cfg: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    if param == "beta":
        return replace(cfg, controller=replace(cfg.controller, beta=float(value)))
    if param == "j_init_scale":
        return replace(cfg, controller=replace(cfg.controller, j_init=replace(cfg.controller.j_init, scale=float(value))))
    if param == "radius_px":
        if cfg.objective.kind != "curvature":
            raise ConfigError("radius_px sweeps need a curvature objective", "objective.kind")
        return replace(cfg, objective=replace(cfg.objective, radius_px=float(value)))
    raise ConfigError(f"unknown sweep parameter {param!r}", "sweep.param")


def _sweep_item(args) -> dict:
    cfg_dict, param, value, out_dir = args
    from ddpmi.cli.config import scenario_from_dict

    cfg = with_param(scenario_from_dict(cfg_dict), param, value)
    row = {"value": value, "converged": False, "steps": None, "final_error": None, "error": None}
    try:
        res = run_scenario(cfg, out_dir)
    except Exception as exc:  # recorded, the sweep goes on
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(converged=res.result.converged, steps=res.result.steps, final_error=res.result.final_error)
    return row


def run_sweep(
    cfg: ScenarioConfig,
    param: str,
    values: Sequence[float],
    out_dir: str | Path,
    workers: int | None = None,
) -> list[dict]:
    """One run per value on a bounded process pool; writes ``sweep.csv`` and ``sweep.json``."""
    values = [float(v) for v in values]

    def fail(msg):
        raise ConfigError(msg, "sweep.values")

    check_sweep(param, values, fail)
    for v in values:
        with_param(cfg, param, v)  # validate before spawning anything
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = scenario_to_dict(cfg)
    jobs = [(base, param, v, str(out / f"{param}={v:g}")) for v in values]
    if workers is None:
        workers = min(len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        rows = [_sweep_item(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_item, jobs))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "converged", "steps", "final_error", "error"])
    for r in rows:
        fe = "" if r["final_error"] is None else _fmt(r["final_error"])
        w.writerow([_fmt(r["value"]), int(r["converged"]), "" if r["steps"] is None else r["steps"], fe, r["error"] or ""])
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    table = {"scenario": cfg.name, "param": param, "rows": rows}
    (out / "sweep.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    return rows
