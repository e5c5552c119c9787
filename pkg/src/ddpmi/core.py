"""Immutable value types exchanged between the controller and the plant.

Every type stores a read-only float64 numpy array and validates its shape and
finiteness on construction. Units are documented, not enforced.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are empty or mutually incompatible."""


class InputError(ValueError):
    """Raised on non-finite numeric input."""


def as_vector(values, name: str = "values", allow_empty: bool = False) -> np.ndarray:
    """Return a read-only 1-D float64 copy of ``values``, checked finite."""
    arr = np.array(values, dtype=float).ravel()
    if arr.size == 0 and not allow_empty:
        raise DimensionError(f"{name} must not be empty")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def as_matrix(values, shape: tuple[int | None, int | None] = (None, None), name: str = "matrix") -> np.ndarray:
    """Return a read-only 2-D float64 copy, optionally checking its shape."""
    arr = np.array(values, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    for axis, expected in enumerate(shape):
        if expected is not None and arr.shape[axis] != expected:
            raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


class _Vector:
    """Mixin giving array-backed value types numpy interop."""

    values: np.ndarray

    def __array__(self, dtype=None, copy=None):
        out = self.values if dtype is None else self.values.astype(dtype)
        return out.copy() if copy else out

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.all(self.values == other.values))

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.values.tobytes()))

    def tolist(self) -> list:
        return self.values.tolist()


@dataclass(frozen=True, eq=False)
class ActuationVector(_Vector):
    """Actuation input (tendon displacement or roll angle per channel)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", as_vector(self.values, "actuation vector"))

    @property
    def n(self) -> int:
        return self.values.size

    def __add__(self, delta: "ActuationDelta") -> "ActuationVector":
        check_same_length(self, delta, "actuation", "delta")
        return ActuationVector(self.values + delta.values)


@dataclass(frozen=True, eq=False)
class ActuationDelta(_Vector):
    """Actuation increment, same units as :class:`ActuationVector`."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", as_vector(self.values, "actuation delta"))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True, eq=False)
class FeedbackFeatureVector(_Vector):
    """Control objective vector (pixels for overlay, 1/pixel for curvature)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", as_vector(self.values, "feedback feature vector"))

    @property
    def N(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class FeaturePointSet(_Vector):
    """M image points stored flat as (p1, q1, p2, q2, ...) in pixels."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_vector(self.values, "feature points")
        if arr.size % 2:
            raise DimensionError(f"feature vector length {arr.size} is odd")
        object.__setattr__(self, "values", arr)

    @property
    def M(self) -> int:
        return self.values.size // 2

    @property
    def points(self) -> np.ndarray:
        """(M, 2) read-only view."""
        return self.values.reshape(-1, 2)

    def point(self, i: int) -> np.ndarray:
        return self.values[2 * i : 2 * i + 2]


@dataclass(frozen=True, eq=False)
class CartesianPointSet(_Vector):
    """M Cartesian points in mm, stored flat as (x1, y1, z1, x2, ...)."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_vector(self.values, "cartesian points", allow_empty=True)
        if arr.size % 3:
            raise DimensionError(f"cartesian vector length {arr.size} is not a multiple of 3")
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_points(cls, points) -> "CartesianPointSet":
        return cls(np.asarray(points, dtype=float).reshape(-1))

    @property
    def M(self) -> int:
        return self.values.size // 3

    @property
    def points(self) -> np.ndarray:
        """(M, 3) read-only view."""
        return self.values.reshape(-1, 3)


def check_same_length(a, b, name_a: str = "a", name_b: str = "b") -> None:
    if len(a) != len(b):
        raise DimensionError(f"{name_a} has length {len(a)} but {name_b} has length {len(b)}")


def stack_features(points: Iterable[Sequence[float]]) -> FeaturePointSet:
    """Concatenate 2-D pixel points into (p1, q1, ..., pM, qM)."""
    pts = np.array(list(points), dtype=float)
    if pts.size == 0:
        raise DimensionError("at least one feature point is required")
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError(f"expected a sequence of (p, q) pairs, got shape {pts.shape}")
    return FeaturePointSet(pts.reshape(-1))


def unstack_features(features: FeaturePointSet) -> list[tuple[float, float]]:
    return [(float(p), float(q)) for p, q in features.points]
