"""The `mlsteer.domain.entities` subpackage defines the entities used within the library.

Entities are pure python-object which defines the attributes and properties of a domain object.
They do not implement any processing logic (methods), but may implement validation logic (initialization).
"""
from .control import (
    ControllabilityReport,
    ControlLaw,
    HypothesisConstants,
    SteeringMode,
    SteeringProblem,
    SteeringResult,
)
from .mesh import MeshSpec, Trajectory
from .mittag_leffler import DelayedMLEval, LemmaReport, MLMatrixValue, MLQuery
from .stochastic import ContractionReport, DiffusionSpec, PathEnsemble, PicardReport
from .system import InitialFunction, SystemSpec, require_stochastic_order

__all__ = [
    "ContractionReport",
    "ControlLaw",
    "ControllabilityReport",
    "DelayedMLEval",
    "DiffusionSpec",
    "HypothesisConstants",
    "InitialFunction",
    "LemmaReport",
    "MeshSpec",
    "MLMatrixValue",
    "MLQuery",
    "PathEnsemble",
    "PicardReport",
    "SteeringMode",
    "SteeringProblem",
    "SteeringResult",
    "SystemSpec",
    "Trajectory",
    "require_stochastic_order",
]
