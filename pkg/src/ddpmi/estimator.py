"""Online Broyden estimation of the combined deformation Jacobian.

The estimate maps actuation increments to feedback-feature increments. Each
update is the rank-1 correction of minimum Frobenius norm that makes the new
estimate reproduce the last observed (actuation, feature) change, scaled by a
constant rate ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ddpmi.core import ActuationDelta, DimensionError, InputError, as_matrix, as_vector

#: Minimum actuation-step norm for which an update is attempted.
DELTA_MIN = 1e-9


class StalledStepError(ValueError):
    """The actuation step was too small to carry Jacobian information.

    The caller should keep its previous estimate.
    """


@dataclass(frozen=True, eq=False)
class JacobianEstimate:
    """N x n estimated combined Jacobian and its update rate ``beta``."""

    matrix: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_matrix(self.matrix, name="jacobian estimate"))
        beta = float(self.beta)
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        object.__setattr__(self, "beta", beta)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def with_matrix(self, matrix) -> "JacobianEstimate":
        return JacobianEstimate(matrix, self.beta)

    def _updated(self, matrix: np.ndarray) -> "JacobianEstimate":
        # fresh array of the right shape; only finiteness can go wrong
        if not np.isfinite(matrix).all():
            raise InputError("Broyden update produced non-finite entries")
        matrix.setflags(write=False)
        out = object.__new__(JacobianEstimate)
        object.__setattr__(out, "matrix", matrix)
        object.__setattr__(out, "beta", self.beta)
        return out


@dataclass(frozen=True, eq=False)
class SecantPair:
    """Realized actuation change ``delta_theta`` and feature change ``delta_gamma``."""

    delta_theta: ActuationDelta
    delta_gamma: np.ndarray

    def __post_init__(self):
        if not isinstance(self.delta_theta, ActuationDelta):
            object.__setattr__(self, "delta_theta", ActuationDelta(self.delta_theta))
        object.__setattr__(self, "delta_gamma", as_vector(self.delta_gamma, "delta_gamma"))


def init_jacobian(n: int, N: int, mode: str = "ones", scale: float = 1.0, beta: float = 1.0) -> JacobianEstimate:
    """Initial estimate for an N-objective, n-input problem.

    ``mode`` is ``"ones"`` (all-ones matrix), ``"identity"`` (ones on the
    main diagonal) or ``"scaled"`` (``scale`` times the all-ones matrix).
    """
    if n < 1 or N < 1:
        raise DimensionError(f"n and N must be positive, got n={n}, N={N}")
    if n < N:
        raise DimensionError(f"need at least as many inputs as objectives, got n={n} < N={N}")
    if mode == "ones":
        matrix = np.ones((N, n))
    elif mode in ("identity", "identity-like"):
        matrix = np.eye(N, n)
    elif mode == "scaled":
        if not np.isfinite(scale) or scale == 0:
            raise ValueError(f"scale must be finite and nonzero, got {scale}")
        matrix = scale * np.ones((N, n))
    else:
        raise ValueError(f"unknown initialization mode {mode!r}")
    return JacobianEstimate(matrix, beta)


def _check_pair(J: JacobianEstimate, pair: SecantPair) -> tuple[np.ndarray, np.ndarray]:
    s = pair.delta_theta.values
    y = pair.delta_gamma
    N, n = J.shape
    if s.size != n or y.size != N:
        raise DimensionError(
            f"secant pair ({s.size}, {y.size}) does not match Jacobian shape {J.shape}"
        )
    return s, y


def broyden_update(J: JacobianEstimate, pair: SecantPair, delta_min: float = DELTA_MIN) -> JacobianEstimate:
    """Return ``J + beta * (dG - J ds) ds^T / (ds^T ds)``.

    Raises :class:`StalledStepError` when ``||ds|| <= delta_min``.
    """
    s, y = _check_pair(J, pair)
    ss = float(s @ s)
    if math.sqrt(ss) <= delta_min:
        raise StalledStepError(f"actuation step norm {math.sqrt(ss):.3e} <= {delta_min:.1e}")
    correction = (y - J.matrix @ s)[:, None] * (s * (J.beta / ss))
    return J._updated(J.matrix + correction)


def secant_residual(J: JacobianEstimate, pair: SecantPair) -> float:
    """Euclidean norm of ``J ds - dG``."""
    s, y = _check_pair(J, pair)
    r = J.matrix @ s - y
    return math.sqrt(float(r @ r))
