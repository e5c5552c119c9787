"""Scenario files: a versioned JSON schema with defaults and validation.

A scenario bundles the manipulator, camera, obstacles, objective and
controller settings for one seeded run. :func:`parse_scenario` applies
defaults; :func:`scenario_to_dict` writes the fully resolved form, which
parses back to an identical config.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1
SWEEP_PARAMS = ("beta", "j_init_scale", "radius_px")


class ConfigError(ValueError):
    """Invalid scenario; ``path`` is the dotted field name, ``line`` its 1-based line (if known)."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = path or "<root>"
        if line is not None:
            where = f"line {line}: {where}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ManipulatorSpec:
    length: float = 40.0
    bend_gain: float = 0.013
    sample_fractions: tuple[float, ...] = (1.0,)
    backlash_width: float = 0.0
    theta0: tuple[float, ...] = (0.0, 0.0, 0.0)
    theta_lower: tuple[float, ...] = (-3.0, -3.0, -math.pi)
    theta_upper: tuple[float, ...] = (3.0, 3.0, math.pi)


@dataclass(frozen=True)
class CameraSpec:
    """Either a look-at pose or an explicit 3x4 projection matrix."""

    position: tuple[float, ...] | None = (0.0, -70.0, 70.0)
    look_at: tuple[float, ...] | None = (0.0, 0.0, 25.0)
    up: tuple[float, ...] | None = (0.0, 0.0, 1.0)
    focal: float = 500.0
    center: tuple[float, ...] = (320.0, 240.0)
    projection: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class StiffnessSpec:
    kind: str = "rigid"
    k_obs: float | None = None
    k_soft: float | None = None
    k_stiff: float | None = None
    depth_threshold: float | None = None


@dataclass(frozen=True)
class ObstacleConfig:
    shape: str
    point: tuple[float, ...] | None = None
    normal: tuple[float, ...] | None = None
    center: tuple[float, ...] | None = None
    radius: float | None = None
    stiffness: StiffnessSpec = field(default_factory=StiffnessSpec)
    tangential_drag: float = 0.0


@dataclass(frozen=True)
class ObjectiveSpec:
    """Overlay: drive ``points`` onto ``target_px`` (or onto the pixels they
    would have at ``target_theta``). Curvature: bend the circle through
    ``points`` to ``radius_px``."""

    kind: str = "overlay"
    points: tuple[int, ...] | None = None
    target_px: tuple[tuple[float, float], ...] | None = None
    target_theta: tuple[float, ...] | None = None
    radius_px: float | None = None


@dataclass(frozen=True)
class JInitSpec:
    mode: str = "ones"
    scale: float = 1.0
    matrix: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class ControllerSpec:
    beta: float = 0.7
    epsilon: float = 1.0
    max_steps: int = 1000
    j_init: JInitSpec = field(default_factory=JInitSpec)
    delta_min: tuple[float, ...] | None = None
    delta_max: tuple[float, ...] | None = None
    A: tuple[tuple[float, ...], ...] = ()
    b: tuple[float, ...] = ()
    lambda_theta: tuple[float, ...] = (2.0, 2.0, 2.0)
    lambda_features: tuple[float, ...] = (2.0, 2.0)
    dt: float = 1.0 / 15.0


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    manipulator: ManipulatorSpec = field(default_factory=ManipulatorSpec)
    camera: CameraSpec = field(default_factory=CameraSpec)
    noise_sigma: float = 0.5
    obstacles: tuple[ObstacleConfig, ...] = ()
    k_cm: float = 1.0
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    sweep: SweepSpec | None = None
    description: str = ""
    schema_version: int = SCHEMA_VERSION

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))


# -- parsing ----------------------------------------------------------------


class _Reader:
    """Typed field access that reports the dotted path and source line on failure."""

    def __init__(self, text: str | None):
        self.text = text

    def line_of(self, path: str) -> int | None:
        """Line of the last key of ``path`` found in order in the source text."""
        if not self.text or not path:
            return None
        pos = None
        start = 0
        for key in path.split("."):
            found = self.text.find(f'"{key.split("[")[0]}"', start)
            if found < 0:
                break
            pos = start = found
        return None if pos is None else self.text.count("\n", 0, pos) + 1

    def fail(self, path: str, message: str):
        raise ConfigError(message, path, self.line_of(path))

    def obj(self, d: Any, path: str) -> dict:
        if not isinstance(d, dict):
            self.fail(path, "expected an object")
        return d

    def check_keys(self, d: dict, allowed, path: str):
        for k in d:
            if k not in allowed:
                self.fail(f"{path}.{k}" if path else k, "unknown field")

    def number(self, d: dict, key: str, path: str, default=None, lo=None, hi=None, lo_open=False):
        p = f"{path}.{key}" if path else key
        if key not in d:
            if default is _REQUIRED:
                self.fail(p, "required field missing")
            return default
        v = d[key]
        if v is None and default is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(p, f"expected a finite number, got {v!r}")
        v = float(v)
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.fail(p, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(p, f"must be <= {hi}, got {v}")
        return v

    def integer(self, d: dict, key: str, path: str, default=None, lo=None):
        p = f"{path}.{key}" if path else key
        if key not in d:
            if default is _REQUIRED:
                self.fail(p, "required field missing")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(p, f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            self.fail(p, f"must be >= {lo}, got {v}")
        return int(v)

    def string(self, d: dict, key: str, path: str, default=None, choices=None):
        p = f"{path}.{key}" if path else key
        if key not in d:
            if default is _REQUIRED:
                self.fail(p, "required field missing")
            return default
        v = d[key]
        if not isinstance(v, str):
            self.fail(p, f"expected a string, got {v!r}")
        if choices is not None and v not in choices:
            self.fail(p, f"must be one of {', '.join(choices)}, got {v!r}")
        return v

    def vector(self, d: dict, key: str, path: str, default=None, length=None, allow_inf=False):
        p = f"{path}.{key}" if path else key
        if key not in d or d[key] is None:
            if default is _REQUIRED:
                self.fail(p, "required field missing")
            return default
        v = d[key]
        if not isinstance(v, list):
            self.fail(p, "expected a list of numbers")
        out = []
        for i, x in enumerate(v):
            if isinstance(x, str) and allow_inf and x in ("inf", "-inf"):
                out.append(float(x))
                continue
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not (allow_inf or math.isfinite(x)):
                self.fail(f"{p}[{i}]", f"expected a finite number, got {x!r}")
            out.append(float(x))
        if length is not None and len(out) != length:
            self.fail(p, f"expected {length} values, got {len(out)}")
        return tuple(out)

    def matrix(self, d: dict, key: str, path: str, default=None, cols=None):
        p = f"{path}.{key}" if path else key
        if key not in d or d[key] is None:
            return default
        rows = d[key]
        if not isinstance(rows, list):
            self.fail(p, "expected a list of rows")
        out = tuple(self.vector({key: r}, key, path, length=cols) for r in rows)
        if out and len({len(r) for r in out}) != 1:
            self.fail(p, "rows have different lengths")
        return out


_REQUIRED = object()


def _parse_manipulator(r: _Reader, d: dict) -> ManipulatorSpec:
    p = "manipulator"
    r.check_keys(d, ManipulatorSpec.__dataclass_fields__, p)
    base = ManipulatorSpec()
    fr = r.vector(d, "sample_fractions", p, base.sample_fractions)
    if not fr or any(not 0 < s <= 1 for s in fr) or any(b <= a for a, b in zip(fr, fr[1:])) or fr[-1] != 1.0:
        r.fail(f"{p}.sample_fractions", "must be strictly increasing in (0, 1] and end at 1")
    lower = r.vector(d, "theta_lower", p, base.theta_lower, 3, allow_inf=True)
    upper = r.vector(d, "theta_upper", p, base.theta_upper, 3, allow_inf=True)
    theta0 = r.vector(d, "theta0", p, base.theta0, 3)
    for i in range(3):
        if lower[i] > upper[i]:
            r.fail(f"{p}.theta_lower", f"entry {i} exceeds theta_upper")
        if not lower[i] <= theta0[i] <= upper[i]:
            r.fail(f"{p}.theta0", f"entry {i} lies outside [theta_lower, theta_upper]")
    return ManipulatorSpec(
        length=r.number(d, "length", p, base.length, lo=0, lo_open=True),
        bend_gain=r.number(d, "bend_gain", p, base.bend_gain, lo=0, lo_open=True),
        sample_fractions=fr,
        backlash_width=r.number(d, "backlash_width", p, base.backlash_width, lo=0),
        theta0=theta0,
        theta_lower=lower,
        theta_upper=upper,
    )


def _parse_camera(r: _Reader, d: dict) -> CameraSpec:
    p = "camera"
    r.check_keys(d, CameraSpec.__dataclass_fields__, p)
    proj = r.matrix(d, "projection", p, None, cols=4)
    if proj is not None:
        if len(proj) != 3:
            r.fail(f"{p}.projection", "expected a 3x4 matrix")
        return CameraSpec(position=None, look_at=None, up=None, projection=proj)
    base = CameraSpec()
    spec = CameraSpec(
        position=r.vector(d, "position", p, base.position, 3),
        look_at=r.vector(d, "look_at", p, base.look_at, 3),
        up=r.vector(d, "up", p, base.up, 3),
        focal=r.number(d, "focal", p, base.focal, lo=0, lo_open=True),
        center=r.vector(d, "center", p, base.center, 2),
    )
    fwd = [b - a for a, b in zip(spec.position, spec.look_at)]
    if math.hypot(*fwd) == 0:
        r.fail(f"{p}.look_at", "coincides with the camera position")
    cross = (
        fwd[1] * spec.up[2] - fwd[2] * spec.up[1],
        fwd[2] * spec.up[0] - fwd[0] * spec.up[2],
        fwd[0] * spec.up[1] - fwd[1] * spec.up[0],
    )
    if math.hypot(*cross) < 1e-12 * math.hypot(*fwd) * max(math.hypot(*spec.up), 1e-300):
        r.fail(f"{p}.up", "is parallel to the viewing direction")
    return spec


def _parse_stiffness(r: _Reader, d: Any, p: str) -> StiffnessSpec:
    d = r.obj(d, p)
    r.check_keys(d, StiffnessSpec.__dataclass_fields__, p)
    kind = r.string(d, "kind", p, "rigid", ("rigid", "elastic", "variable"))
    if kind == "rigid":
        return StiffnessSpec()
    if kind == "elastic":
        return StiffnessSpec("elastic", k_obs=r.number(d, "k_obs", p, _REQUIRED, lo=0, lo_open=True))
    return StiffnessSpec(
        "variable",
        k_soft=r.number(d, "k_soft", p, _REQUIRED, lo=0, lo_open=True),
        k_stiff=r.number(d, "k_stiff", p, _REQUIRED, lo=0, lo_open=True),
        depth_threshold=r.number(d, "depth_threshold", p, _REQUIRED, lo=0, lo_open=True),
    )


def _parse_obstacle(r: _Reader, d: Any, p: str) -> ObstacleConfig:
    d = r.obj(d, p)
    r.check_keys(d, ObstacleConfig.__dataclass_fields__, p)
    shape = r.string(d, "shape", p, _REQUIRED, ("halfspace", "sphere"))
    stiffness = _parse_stiffness(r, d.get("stiffness", {}), f"{p}.stiffness")
    drag = r.number(d, "tangential_drag", p, 0.0, lo=0, hi=1)
    if shape == "halfspace":
        normal = r.vector(d, "normal", p, _REQUIRED, 3)
        norm = math.hypot(*normal)
        if norm == 0:
            r.fail(f"{p}.normal", "must be non-zero")
        return ObstacleConfig(
            "halfspace",
            point=r.vector(d, "point", p, _REQUIRED, 3),
            normal=tuple(x / norm for x in normal),
            stiffness=stiffness,
            tangential_drag=drag,
        )
    return ObstacleConfig(
        "sphere",
        center=r.vector(d, "center", p, _REQUIRED, 3),
        radius=r.number(d, "radius", p, _REQUIRED, lo=0, lo_open=True),
        stiffness=stiffness,
        tangential_drag=drag,
    )


def _parse_objective(r: _Reader, d: dict, M: int) -> ObjectiveSpec:
    p = "objective"
    r.check_keys(d, ObjectiveSpec.__dataclass_fields__, p)
    kind = r.string(d, "kind", p, "overlay", ("overlay", "curvature"))
    pts = d.get("points")
    if pts is not None:
        if not isinstance(pts, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in pts):
            r.fail(f"{p}.points", "expected a list of integer point indices")
        if any(not 0 <= i < M for i in pts):
            r.fail(f"{p}.points", f"indices must lie in [0, {M - 1}]")
        pts = tuple(pts)
    if kind == "curvature":
        if pts is None:
            if M < 3:
                r.fail(f"{p}.points", "curvature needs three tracked points")
            pts = (M - 3, M - 2, M - 1)
        if len(pts) != 3 or len(set(pts)) != 3:
            r.fail(f"{p}.points", "curvature needs three distinct points")
        return ObjectiveSpec("curvature", pts, radius_px=r.number(d, "radius_px", p, _REQUIRED, lo=0, lo_open=True))
    if pts is None:
        pts = (M - 1,)
    if any(b <= a for a, b in zip(pts, pts[1:])) or not pts:
        r.fail(f"{p}.points", "overlay indices must be non-empty and strictly increasing")
    has_px = d.get("target_px") is not None
    has_theta = d.get("target_theta") is not None
    if has_px == has_theta:
        r.fail(f"{p}.target_px", "give exactly one of target_px and target_theta")
    if has_px:
        rows = r.matrix(d, "target_px", p, cols=2)
        if len(rows) != len(pts):
            r.fail(f"{p}.target_px", f"expected {len(pts)} target pixels, got {len(rows)}")
        return ObjectiveSpec("overlay", pts, target_px=rows)
    return ObjectiveSpec("overlay", pts, target_theta=r.vector(d, "target_theta", p, length=3))


def _parse_controller(r: _Reader, d: dict, N: int) -> ControllerSpec:
    p = "controller"
    r.check_keys(d, ControllerSpec.__dataclass_fields__, p)
    base = ControllerSpec()
    n = 3
    jd = r.obj(d.get("j_init", {}), f"{p}.j_init")
    r.check_keys(jd, JInitSpec.__dataclass_fields__, f"{p}.j_init")
    mat = r.matrix(jd, "matrix", f"{p}.j_init", None, cols=n)
    if mat is not None:
        if len(mat) != N:
            r.fail(f"{p}.j_init.matrix", f"expected {N} rows (one per objective component)")
        j_init = JInitSpec("matrix", r.number(jd, "scale", f"{p}.j_init", 1.0), mat)
    else:
        j_init = JInitSpec(
            r.string(jd, "mode", f"{p}.j_init", "ones", ("ones", "identity", "matrix")),
            r.number(jd, "scale", f"{p}.j_init", 1.0),
        )
        if j_init.mode == "matrix":
            r.fail(f"{p}.j_init.matrix", "mode 'matrix' needs a matrix")
    lo = r.vector(d, "delta_min", p, None, n, allow_inf=True)
    hi = r.vector(d, "delta_max", p, None, n, allow_inf=True)
    if (lo is None) != (hi is None):
        r.fail(f"{p}.delta_min" if lo is None else f"{p}.delta_max", "delta_min and delta_max go together")
    if lo is not None:
        for i in range(n):
            if lo[i] > hi[i]:
                r.fail(f"{p}.delta_min", f"entry {i} ({lo[i]}) exceeds delta_max ({hi[i]})")
            if lo[i] > 0 or hi[i] < 0:
                r.fail(f"{p}.delta_min", f"entry {i}: the zero step must lie within the bounds")
    A = r.matrix(d, "A", p, (), cols=n)
    b = r.vector(d, "b", p, ())
    if len(A) != len(b):
        r.fail(f"{p}.b", f"A has {len(A)} rows but b has {len(b)} entries")
    if any(x < 0 for x in b):
        r.fail(f"{p}.b", "entries must be >= 0 so the zero step is feasible")
    lam_t = r.vector(d, "lambda_theta", p, base.lambda_theta, n)
    lam_v = r.vector(d, "lambda_features", p, base.lambda_features)
    for key, lam in (("lambda_theta", lam_t), ("lambda_features", lam_v)):
        if any(x <= 0 for x in lam):
            r.fail(f"{p}.{key}", "gains must be positive")
    return ControllerSpec(
        beta=r.number(d, "beta", p, base.beta, lo=0, hi=1),
        epsilon=r.number(d, "epsilon", p, base.epsilon, lo=0, lo_open=True),
        max_steps=r.integer(d, "max_steps", p, base.max_steps, lo=0),
        j_init=j_init,
        delta_min=lo,
        delta_max=hi,
        A=A,
        b=b,
        lambda_theta=lam_t,
        lambda_features=lam_v,
        dt=r.number(d, "dt", p, base.dt, lo=0, lo_open=True),
    )


def _parse_sweep(r: _Reader, d: Any) -> SweepSpec:
    p = "sweep"
    d = r.obj(d, p)
    r.check_keys(d, ("param", "values"), p)
    param = r.string(d, "param", p, _REQUIRED, SWEEP_PARAMS)
    values = r.vector(d, "values", p, _REQUIRED)
    check_sweep(param, values, lambda msg: r.fail(f"{p}.values", msg))
    return SweepSpec(param, values)


def check_sweep(param: str, values, fail) -> None:
    if param not in SWEEP_PARAMS:
        fail(f"unknown sweep parameter {param!r} (expected one of {', '.join(SWEEP_PARAMS)})")
    if len(values) == 0:
        fail("empty list of sweep values")
    if any(not math.isfinite(v) for v in values):
        fail("sweep values must be finite")
    if param == "beta" and any(not 0 <= v <= 1 for v in values):
        fail("beta values must lie in [0, 1]")
    if param in ("j_init_scale", "radius_px") and any(v <= 0 for v in values):
        fail(f"{param} values must be positive")


def scenario_from_dict(data: Any, text: str | None = None) -> ScenarioConfig:
    """Validate a decoded scenario document and apply defaults."""
    r = _Reader(text)
    data = r.obj(data, "")
    r.check_keys(data, ScenarioConfig.__dataclass_fields__, "")
    version = r.integer(data, "schema_version", "", _REQUIRED)
    if version != SCHEMA_VERSION:
        r.fail("schema_version", f"unsupported schema version {version} (expected {SCHEMA_VERSION})")
    name = r.string(data, "name", "", _REQUIRED)
    seed = r.integer(data, "seed", "", _REQUIRED, lo=0)
    if seed >= 2**64:
        r.fail("seed", "must fit in 64 bits")
    manip = _parse_manipulator(r, r.obj(data.get("manipulator", {}), "manipulator"))
    camera = _parse_camera(r, r.obj(data.get("camera", {}), "camera"))
    obstacles = data.get("obstacles", [])
    if not isinstance(obstacles, list):
        r.fail("obstacles", "expected a list")
    obstacles = tuple(_parse_obstacle(r, o, f"obstacles[{i}]") for i, o in enumerate(obstacles))
    M = len(manip.sample_fractions)
    objective = _parse_objective(r, r.obj(data.get("objective", {}), "objective"), M)
    N = 1 if objective.kind == "curvature" else 2 * len(objective.points)
    controller = _parse_controller(r, r.obj(data.get("controller", {}), "controller"), N)
    if len(controller.lambda_features) not in (2, 2 * M):
        r.fail("controller.lambda_features", f"expected 2 or {2 * M} gains")
    sweep = _parse_sweep(r, data["sweep"]) if data.get("sweep") is not None else None
    return ScenarioConfig(
        name=name,
        seed=seed,
        manipulator=manip,
        camera=camera,
        noise_sigma=r.number(data, "noise_sigma", "", 0.5, lo=0),
        obstacles=obstacles,
        k_cm=r.number(data, "k_cm", "", 1.0, lo=0, lo_open=True),
        objective=objective,
        controller=controller,
        sweep=sweep,
        description=r.string(data, "description", "", ""),
        schema_version=version,
    )


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse scenario JSON text; errors carry the offending field and line."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return scenario_from_dict(data, text)


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


# -- serialization ----------------------------------------------------------


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if hasattr(value, "__dataclass_fields__"):
        return {k: _plain(getattr(value, k)) for k in value.__dataclass_fields__}
    return value


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Fully resolved form; ``None`` fields are dropped."""

    def prune(x):
        if isinstance(x, dict):
            return {k: prune(v) for k, v in x.items() if v is not None}
        if isinstance(x, list):
            return [prune(v) for v in x]
        return x

    return prune(_plain(cfg))


def dump_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(cfg), indent=2) + "\n"
