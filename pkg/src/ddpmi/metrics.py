"""Run evaluation: tracking error, manipulability of the estimate, phase labels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ddpmi.core import ActuationVector, FeaturePointSet, FeedbackFeatureVector

LEARNING = "learning"
CONVERGING = "converging"
SINGULARITY = "singularity"

DEFAULT_WINDOW = 10
DEFAULT_EDE_SLOPE_TOL = 0.5
DEFAULT_STALL_THETA_MIN = 1e-3


@dataclass(frozen=True, eq=False)
class StepRecord:
    """Everything logged for one control step.

    ``features`` are the raw measurements; ``gamma`` and ``ede`` are computed
    from the filtered ones, as the controller sees them. ``contact`` is
    simulator ground truth and is filled in after the run.
    """

    step: int
    theta: ActuationVector
    features: FeaturePointSet
    gamma: FeedbackFeatureVector
    ede: float
    ymm: float
    contact: bool = False
    delta_theta: np.ndarray | None = None
    error: float = float("nan")
    updated: bool = False
    solver_failed: bool = False
    theta_effective: np.ndarray | None = None

    def __post_init__(self):
        if not self.ede >= 0 or not self.ymm >= 0:
            raise ValueError(f"ede and ymm must be non-negative (got {self.ede}, {self.ymm})")

    @property
    def dtheta_norm(self) -> float:
        return 0.0 if self.delta_theta is None else float(np.linalg.norm(self.delta_theta))


@dataclass(frozen=True)
class PhaseSegmentation:
    segments: tuple[tuple[int, int, str], ...] = field(default_factory=tuple)

    @property
    def labels(self) -> list[str]:
        return [label for _, _, label in self.segments]

    def covering(self, label: str) -> list[tuple[int, int]]:
        return [(a, b) for a, b, lab in self.segments if lab == label]


def ede(current, desired) -> float:
    """Euclidean pixel distance between two image points."""
    return float(np.linalg.norm(np.asarray(current, dtype=float) - np.asarray(desired, dtype=float)))


def ymm(J) -> float:
    """Yoshikawa manipulability ``sqrt(det(J J^T))`` from the singular values of ``J``."""
    M = np.asarray(getattr(J, "matrix", J), dtype=float)
    N, n = M.shape
    if N > n:
        return 0.0
    s = np.linalg.svd(M, compute_uv=False)
    return float(np.prod(s))


def segment_phases(
    log: Sequence[StepRecord],
    window: int = DEFAULT_WINDOW,
    ede_slope_tol: float = DEFAULT_EDE_SLOPE_TOL,
    stall_theta_min: float = DEFAULT_STALL_THETA_MIN,
) -> PhaseSegmentation:
    """Label each step learning, converging or singularity and merge runs.

    A step is ``singularity`` if it belongs to some ``window``-step window
    within which EDE varies (max minus min) by less than ``ede_slope_tol``
    while the mean commanded step norm exceeds ``stall_theta_min``. Using the
    spread rather than the endpoint difference keeps the turning point of an
    EDE hump from reading as a stall. Otherwise it is
    ``learning`` if it precedes the EDE maximum of the first half of the run
    and EDE does not fall between it and that maximum (within a window),
    and ``converging`` otherwise.
    """
    if not log:
        raise ValueError("empty log")
    if window < 2:
        raise ValueError("window must be at least 2")
    e = np.array([r.ede for r in log], dtype=float)
    dth = np.array([r.dtheta_norm for r in log], dtype=float)
    L = e.size
    singular = np.zeros(L, dtype=bool)
    for s in range(0, L - window + 1):
        t = s + window - 1
        seg = e[s : t + 1]
        if seg.max() - seg.min() < ede_slope_tol and dth[s + 1 : t + 1].mean() > stall_theta_min:
            singular[s : t + 1] = True

    peak = int(np.argmax(e[: L // 2 + 1]))
    labels = []
    for i in range(L):
        if singular[i]:
            labels.append(SINGULARITY)
        elif i < peak and e[min(i + window, peak)] >= e[i]:
            labels.append(LEARNING)
        else:
            labels.append(CONVERGING)

    steps = [r.step for r in log]
    segments = []
    start = 0
    for i in range(1, L + 1):
        if i == L or labels[i] != labels[start]:
            segments.append((steps[start], steps[i - 1], labels[start]))
            start = i
    return PhaseSegmentation(tuple(segments))
