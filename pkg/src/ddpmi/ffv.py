"""Feedback feature vectors: what the controller regulates.

Two objectives are provided. :class:`Overlay` stacks selected image points so
they can be driven onto target pixels. :class:`Curvature` fits a circle
through three image points and reports its curvature in 1/pixel.

Point indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ddpmi.core import DimensionError, FeaturePointSet, FeedbackFeatureVector, check_same_length

#: Minimum pairwise pixel distance for the curvature objective.
EPS_GEOM = 1e-6


class DegenerateGeometryError(ValueError):
    """Two curvature markers (nearly) coincide."""


def _cross2(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def three_point_curvature(v1, v2, v3, eps: float = EPS_GEOM) -> float:
    """Curvature of the circle through three 2-D points (0 when collinear)."""
    v1, v2, v3 = (np.asarray(v, dtype=float) for v in (v1, v2, v3))
    a = v1 - v2
    b = v2 - v3
    c = v3 - v1
    la, lb, lc = np.hypot(*a), np.hypot(*b), np.hypot(*c)
    if min(la, lb, lc) < eps:
        raise DegenerateGeometryError(
            f"curvature markers closer than {eps} px (distances {la:.3g}, {lb:.3g}, {lc:.3g})"
        )
    return 2.0 * abs(_cross2(a, b)) / (la * lb * lc)


@dataclass(frozen=True)
class Overlay:
    """Drive the selected feature points onto target pixels."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise DimensionError("overlay needs at least one point index")
        if any(i < 0 for i in idx) or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"overlay indices must be non-negative and strictly increasing, got {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def N(self) -> int:
        return 2 * len(self.indices)

    def validate(self, M: int) -> None:
        if self.indices[-1] >= M:
            raise DimensionError(f"overlay index {self.indices[-1]} out of range for {M} points")

    def evaluate(self, features: FeaturePointSet) -> FeedbackFeatureVector:
        self.validate(features.M)
        return FeedbackFeatureVector(features.points[list(self.indices)].ravel())

    def objective_error(self, gamma, gamma_d) -> float:
        return float(np.linalg.norm(np.asarray(gamma) - np.asarray(gamma_d)))


@dataclass(frozen=True)
class Curvature:
    """Constant-curvature shape objective through three feature points."""

    indices: tuple[int, int, int]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) != 3 or len(set(idx)) != 3 or min(idx) < 0:
            raise ValueError(f"curvature needs three distinct non-negative indices, got {idx}")
        object.__setattr__(self, "indices", idx)

    N = 1

    def validate(self, M: int) -> None:
        if max(self.indices) >= M:
            raise DimensionError(f"curvature index {max(self.indices)} out of range for {M} points")

    def evaluate(self, features: FeaturePointSet) -> FeedbackFeatureVector:
        self.validate(features.M)
        i, j, k = self.indices
        return FeedbackFeatureVector([three_point_curvature(features.point(i), features.point(j), features.point(k))])

    def objective_error(self, gamma, gamma_d) -> float:
        """Radius-of-curvature error in pixels, ``|1/kappa - 1/kappa_d|``."""
        kappa = float(np.asarray(gamma).ravel()[0])
        kappa_d = float(np.asarray(gamma_d).ravel()[0])
        if kappa <= 0.0:
            return float("inf")
        return abs(1.0 / kappa - 1.0 / kappa_d)


FfvKind = Overlay | Curvature


def eval_ffv(kind: FfvKind, features: FeaturePointSet) -> FeedbackFeatureVector:
    return kind.evaluate(features)


def ffv_error(gamma: FeedbackFeatureVector, gamma_d: FeedbackFeatureVector) -> FeedbackFeatureVector:
    """Objective error ``gamma - gamma_d``."""
    check_same_length(gamma, gamma_d, "gamma", "gamma_d")
    return FeedbackFeatureVector(gamma.values - gamma_d.values)


def numerical_feature_jacobian(kind: FfvKind, features: FeaturePointSet, h: float = 1e-4) -> np.ndarray:
    """Central-difference d(gamma)/d(v), shape (N, 2M). Test utility only."""
    if not h > 0:
        raise ValueError("h must be positive")
    v = np.array(features.values)
    out = np.empty((kind.N, v.size))
    for j in range(v.size):
        vp = v.copy()
        vm = v.copy()
        vp[j] += h
        vm[j] -= h
        gp = kind.evaluate(FeaturePointSet(vp)).values
        gm = kind.evaluate(FeaturePointSet(vm)).values
        # the realized step, not 2h, so linear maps come out exact
        out[:, j] = (gp - gm) / (vp[j] - vm[j])
    return out
