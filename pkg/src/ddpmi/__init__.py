"""Model-free Jacobian-learning control of continuum manipulators.

The controller learns the unknown actuation-to-feature Jacobian online with a
Broyden rank-1 update and computes each actuation increment from a box- and
inequality-constrained linear least-squares problem. A quasi-static simulated
plant (constant-curvature manipulator, pin-hole camera, backlash, obstacles)
stands in for the hardware.
"""

from ddpmi.core import (
    ActuationDelta,
    ActuationVector,
    CartesianPointSet,
    DimensionError,
    FeaturePointSet,
    FeedbackFeatureVector,
    InputError,
    stack_features,
    unstack_features,
)
from ddpmi.estimator import (
    JacobianEstimate,
    SecantPair,
    StalledStepError,
    broyden_update,
    init_jacobian,
    secant_residual,
)

__all__ = [
    "ActuationDelta",
    "ActuationVector",
    "CartesianPointSet",
    "DimensionError",
    "FeaturePointSet",
    "FeedbackFeatureVector",
    "InputError",
    "JacobianEstimate",
    "SecantPair",
    "StalledStepError",
    "broyden_update",
    "init_jacobian",
    "secant_residual",
    "stack_features",
    "unstack_features",
]

__version__ = "0.1.0"
