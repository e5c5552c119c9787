"""Quasi-static ground-truth plant.

A constant-curvature continuum manipulator with two orthogonal bending
channels and a roll channel, play-operator backlash on the bending tendons,
per-point obstacle contact, and a pin-hole camera that returns (optionally
noisy) pixel coordinates of tracked points along the backbone.

Nothing here is visible to the controller except through
:class:`SimPlant`, which only exposes ``command`` and ``observe``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ddpmi.core import (
    ActuationDelta,
    ActuationVector,
    CartesianPointSet,
    DimensionError,
    FeaturePointSet,
    as_matrix,
)

#: Curvature below which the backbone is treated as straight (1/mm).
KAPPA_EPS = 1e-9
#: Signed distance at or below which a resolved point counts as touching.
CONTACT_TOL = 1e-9


class BehindCameraError(ValueError):
    """A point projected with non-positive camera depth."""


# -- manipulator ------------------------------------------------------------


@dataclass(frozen=True)
class CmModel:
    """Constant-curvature manipulator.

    ``bend_gain`` maps a bending input to curvature (rad/mm per unit);
    ``sample_fractions`` are arc-length fractions of the tracked points, the
    last of which (1.0) is the tip.
    """

    length: float = 40.0
    bend_gain: float = 0.013
    sample_fractions: tuple[float, ...] = (1.0,)
    backlash_width: float = 0.0

    def __post_init__(self):
        fr = tuple(float(s) for s in self.sample_fractions)
        object.__setattr__(self, "sample_fractions", fr)
        if not self.length > 0:
            raise ValueError("length must be positive")
        if not fr or any(not 0 < s <= 1 for s in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
            raise ValueError(f"sample fractions must be strictly increasing in (0, 1], got {fr}")
        if fr[-1] != 1.0:
            raise ValueError("the last sample fraction must be 1 (the tip)")
        if self.backlash_width < 0:
            raise ValueError("backlash width must be non-negative")

    @property
    def M(self) -> int:
        return len(self.sample_fractions)


@dataclass(frozen=True)
class CmState:
    """Commanded and post-backlash actuation (theta_a, theta_b, roll)."""

    theta_commanded: ActuationVector
    theta_effective: ActuationVector

    @classmethod
    def at(cls, theta) -> "CmState":
        v = ActuationVector(theta)
        if v.n != 3:
            raise DimensionError(f"manipulator has 3 inputs, got {v.n}")
        return cls(v, v)


def apply_backlash(state: CmState, commanded, width: float) -> CmState:
    """Play operator on the two bending channels; roll passes through."""
    cmd = np.asarray(getattr(commanded, "values", commanded), dtype=float)
    if cmd.size != 3:
        raise DimensionError(f"manipulator has 3 inputs, got {cmd.size}")
    eff = cmd.copy()
    half = 0.5 * width
    prev = state.theta_effective.values
    eff[:2] = np.clip(prev[:2], cmd[:2] - half, cmd[:2] + half)
    return CmState(ActuationVector(cmd), ActuationVector(eff))


def forward_kinematics(model: CmModel, theta) -> CartesianPointSet:
    """Backbone points for effective actuation ``theta``; base at the origin, initially along +z."""
    th = np.asarray(getattr(theta, "theta_effective", theta), dtype=float)
    th = np.asarray(getattr(th, "values", th), dtype=float)
    a, b, roll = th
    kappa = model.bend_gain * np.hypot(a, b)
    ell = model.length * np.asarray(model.sample_fractions)
    if kappa < KAPPA_EPS:
        pts = np.column_stack([np.zeros_like(ell), np.zeros_like(ell), ell])
    else:
        phi = np.arctan2(b, a) + roll
        # 1 - cos(x) = 2 sin^2(x/2), without cancellation at small curvature
        radial = 2.0 * np.sin(0.5 * kappa * ell) ** 2 / kappa
        pts = np.column_stack([radial * np.cos(phi), radial * np.sin(phi), np.sin(kappa * ell) / kappa])
    return CartesianPointSet(pts.ravel())


# -- camera -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pin-hole camera ``v ~ P [r; 1]``; the third row of ``P`` gives camera depth."""

    P: np.ndarray
    pixel_noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "P", as_matrix(self.P, (3, 4), "projection matrix"))
        if self.pixel_noise_sigma < 0:
            raise ValueError("pixel noise sigma must be non-negative")

    @classmethod
    def look_at(
        cls,
        position,
        target,
        up=(0.0, 0.0, 1.0),
        focal: float = 500.0,
        center=(0.0, 0.0),
        pixel_noise_sigma: float = 0.0,
    ) -> "CameraModel":
        """Camera at ``position`` with its optical axis through ``target``.

        Image p grows along the camera x axis (right), q along camera y (down).
        """
        c = np.asarray(position, dtype=float)
        forward = np.asarray(target, dtype=float) - c
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("up vector is parallel to the viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.vstack([right, down, forward])
        K = np.array([[focal, 0.0, center[0]], [0.0, focal, center[1]], [0.0, 0.0, 1.0]])
        P = K @ np.hstack([R, (-R @ c)[:, None]])
        return cls(P, pixel_noise_sigma)

    def depth(self, points: CartesianPointSet) -> np.ndarray:
        pts = points.points
        return pts @ self.P[2, :3] + self.P[2, 3]


def project_points(camera: CameraModel, points: CartesianPointSet, rng: np.random.Generator | None = None) -> FeaturePointSet:
    """Perspective projection with optional Gaussian pixel noise drawn from ``rng``."""
    pts = points.points
    hom = pts @ camera.P[:, :3].T + camera.P[:, 3]
    z = hom[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError(f"point(s) {np.flatnonzero(z <= 0).tolist()} behind the camera")
    uv = hom[:, :2] / z[:, None]
    if camera.pixel_noise_sigma > 0:
        if rng is None:
            raise ValueError("noisy camera needs a random generator")
        uv = uv + rng.normal(0.0, camera.pixel_noise_sigma, size=uv.shape)
    return FeaturePointSet(uv.ravel())


# -- obstacles --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Obstacle occupying ``normal . (x - point) < 0``; ``normal`` points out of it."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("half-space normal must be unit length")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "normal", n)

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return (x - self.point) @ self.normal

    def outward_normal(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.normal, x.shape)


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def outward_normal(self, x: np.ndarray) -> np.ndarray:
        r = x - self.center
        norm = np.linalg.norm(r, axis=-1, keepdims=True)
        # the center itself gets an arbitrary but fixed direction
        return np.where(norm > 0, r / np.where(norm > 0, norm, 1.0), np.array([0.0, 0.0, 1.0]))


@dataclass(frozen=True)
class Rigid:
    pass


@dataclass(frozen=True)
class Elastic:
    k_obs: float

    def __post_init__(self):
        if not self.k_obs > 0:
            raise ValueError("stiffness must be positive")


@dataclass(frozen=True)
class VariableStiffness:
    """Soft up to ``depth_threshold`` mm of penetration, stiff beyond."""

    k_soft: float
    k_stiff: float
    depth_threshold: float

    def __post_init__(self):
        if not (self.k_soft > 0 and self.k_stiff > 0 and self.depth_threshold > 0):
            raise ValueError("stiffnesses and depth threshold must be positive")


@dataclass(frozen=True)
class ObstacleSpec:
    geometry: HalfSpace | Sphere
    stiffness: Rigid | Elastic | VariableStiffness = field(default_factory=Rigid)
    tangential_drag: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.tangential_drag <= 1.0:
            raise ValueError("tangential drag must lie in [0, 1]")

    def recovery(self, depth: np.ndarray, k_cm: float) -> np.ndarray:
        """Fraction of the penetration pushed back out, per point."""
        st = self.stiffness
        if isinstance(st, Rigid):
            return np.ones_like(depth)
        if isinstance(st, Elastic):
            return np.full_like(depth, st.k_obs / (st.k_obs + k_cm))
        k = np.where(depth < st.depth_threshold, st.k_soft, st.k_stiff)
        return k / (k + k_cm)


def resolve_contact(
    points: CartesianPointSet,
    obstacle: ObstacleSpec,
    previous_points: CartesianPointSet | None = None,
    k_cm: float = 1.0,
) -> tuple[CartesianPointSet, bool]:
    """Push penetrating points back along the obstacle normal.

    A point that touched the obstacle at the previous step (signed distance
    of its previous resolved position <= CONTACT_TOL) and still touches it
    keeps only ``1 - tangential_drag`` of its tangential motion.
    """
    if not k_cm > 0:
        raise ValueError("k_cm must be positive")
    x = np.array(points.points)
    geom = obstacle.geometry
    sd = geom.signed_distance(x)
    depth = np.maximum(0.0, -sd)
    hit = depth > 0
    if not np.any(hit):
        return points, False
    normal = geom.outward_normal(x)
    rho = obstacle.recovery(depth, k_cm)
    out = x + (rho * depth)[:, None] * normal
    if obstacle.tangential_drag > 0 and previous_points is not None and previous_points.M == points.M:
        prev = previous_points.points
        was = geom.signed_distance(prev) <= CONTACT_TOL
        drag = hit & was
        if np.any(drag):
            disp = out[drag] - prev[drag]
            nrm = normal[drag]
            tangential = disp - np.sum(disp * nrm, axis=1, keepdims=True) * nrm
            out[drag] -= obstacle.tangential_drag * tangential
    return CartesianPointSet(out.ravel()), True


# -- world ------------------------------------------------------------------


@dataclass(frozen=True)
class StepTruth:
    """Ground truth for analysis; never handed to the controller."""

    theta_commanded: np.ndarray
    theta_effective: np.ndarray
    points: np.ndarray
    contact: bool


class SimWorld:
    """Single-owner mutable plant state advanced by :func:`sim_step`."""

    def __init__(
        self,
        model: CmModel,
        camera: CameraModel,
        theta0=(0.0, 0.0, 0.0),
        obstacles: Sequence[ObstacleSpec] = (),
        k_cm: float = 1.0,
        seed: int = 0,
    ):
        self.model = model
        self.camera = camera
        self.obstacles = tuple(obstacles)
        self.k_cm = float(k_cm)
        self.rng = np.random.default_rng(seed)
        self.state = CmState.at(theta0)
        self.points: CartesianPointSet | None = None
        self.features, self.truth = self._settle(None)

    @property
    def n(self) -> int:
        return 3

    def _settle(self, previous: CartesianPointSet | None) -> tuple[FeaturePointSet, StepTruth]:
        pts = forward_kinematics(self.model, self.state)
        contact = False
        for obs in self.obstacles:
            pts, hit = resolve_contact(pts, obs, previous, self.k_cm)
            contact = contact or hit
        self.points = pts
        features = project_points(self.camera, pts, self.rng)
        truth = StepTruth(
            self.state.theta_commanded.values,
            self.state.theta_effective.values,
            pts.points.copy(),
            contact,
        )
        return features, truth

    def noiseless_features(self, theta) -> FeaturePointSet:
        """Free-space, noise-free features at effective actuation ``theta`` (no state change)."""
        pts = forward_kinematics(self.model, np.asarray(theta, dtype=float))
        return project_points(CameraModel(self.camera.P, 0.0), pts)


def sim_step(world: SimWorld, delta_theta) -> tuple[FeaturePointSet, StepTruth]:
    """Command ``theta += delta_theta`` and settle to the new quasi-static equilibrium."""
    delta = delta_theta if isinstance(delta_theta, ActuationDelta) else ActuationDelta(delta_theta)
    if delta.n != 3:
        raise DimensionError(f"manipulator has 3 inputs, got {delta.n}")
    commanded = world.state.theta_commanded.values + delta.values
    world.state = apply_backlash(world.state, commanded, world.model.backlash_width)
    world.features, world.truth = world._settle(world.points)
    return world.features, world.truth


class SimPlant:
    """Feedback-only view of a :class:`SimWorld` for the controller."""

    def __init__(self, world: SimWorld):
        self._world = world
        self.truth_log: list[StepTruth] = [world.truth]

    @property
    def n(self) -> int:
        return self._world.n

    def command(self, delta_theta) -> None:
        _, truth = sim_step(self._world, delta_theta)
        self.truth_log.append(truth)

    def observe(self) -> FeaturePointSet:
        return self._world.features

    @property
    def truth(self) -> StepTruth:
        return self._world.truth


class LinearPlant:
    """Features ``v = A theta + v0``, for controller tests."""

    def __init__(self, A, theta0=None, offset=None):
        self.A = np.asarray(A, dtype=float)
        self.theta = np.zeros(self.A.shape[1]) if theta0 is None else np.array(theta0, dtype=float)
        self.offset = np.zeros(self.A.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        if self.A.shape[0] % 2:
            raise DimensionError("linear plant must produce an even number of feature coordinates")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def command(self, delta_theta) -> None:
        self.theta = self.theta + np.asarray(getattr(delta_theta, "values", delta_theta), dtype=float)

    def observe(self) -> FeaturePointSet:
        return FeaturePointSet(self.A @ self.theta + self.offset)
