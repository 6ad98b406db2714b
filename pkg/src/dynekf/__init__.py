"""Dynamic EKF SLAM in covariance form and as single Gauss-Newton steps.

Two backends share one state representation: :mod:`dynekf.backend_std`
implements the filter with closed-form covariance updates, and
:mod:`dynekf.backend_opt` builds the same filter from residual terms and
generic Gauss-Newton and marginalization steps.  :mod:`dynekf.sim` holds a
highway scenario and the Monte Carlo harness.
"""

__version__ = "0.1.0"

from .errors import (
    AssociationError,
    DynEKFError,
    LayoutError,
    MarginalizationError,
    MetricError,
    ModelError,
    NumericError,
    SingularityError,
    StateError,
)
from .models import NoiseModel
from .quadcost import (
    EgoPose,
    GaussianBelief,
    ObjectFeature,
    ObjectPose,
    ResidualTerm,
    StaticFeature,
    VariableLayout,
    gauss_newton_step,
    marginalize,
)
from .state import FilterConfig, FilterState, FrameData, NewObject, ObjectObs, Static

__all__ = [
    "AssociationError",
    "DynEKFError",
    "EgoPose",
    "FilterConfig",
    "FilterState",
    "FrameData",
    "GaussianBelief",
    "LayoutError",
    "MarginalizationError",
    "MetricError",
    "ModelError",
    "NewObject",
    "NoiseModel",
    "NumericError",
    "ObjectFeature",
    "ObjectObs",
    "ObjectPose",
    "ResidualTerm",
    "SingularityError",
    "StateError",
    "Static",
    "StaticFeature",
    "VariableLayout",
    "__version__",
    "gauss_newton_step",
    "marginalize",
]
