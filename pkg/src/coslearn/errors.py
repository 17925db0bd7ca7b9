"""Exception hierarchy.

Two branches matter for the CLI exit-code contract: ``ValidationError``
(bad inputs, exit 1) and ``NumericError`` (runtime numeric failure,
exit 2).
"""


class CoslearnError(Exception):
    """Base class for all library errors."""


class ValidationError(CoslearnError):
    """Invalid user input: files, flags, configs."""


class ConfigError(ValidationError):
    """Malformed or inconsistent experiment configuration."""


class DataFormatError(ValidationError):
    """Malformed dataset, hierarchy, or embedding file."""


class LabelError(ValidationError):
    """Class label outside the known label set."""


class HierarchyError(ValidationError):
    """Structural problem in a class hierarchy."""


class CycleError(HierarchyError):
    """Hierarchy edges contain a cycle; the message lists a witness."""


class ForestError(HierarchyError):
    """Hierarchy has more than one root."""


class DuplicateEdgeError(HierarchyError):
    """The same parent/child edge appears twice."""


class NumericError(CoslearnError):
    """Numeric failure during computation or training."""


class DimensionError(NumericError):
    """Operand shapes incompatible with the requested operation."""


class DegenerateVectorError(NumericError):
    """A vector with (near-)zero norm where a direction is required."""


class NotPsdError(NumericError):
    """Similarity matrix is not positive semidefinite."""


class DegenerateHierarchyError(NumericError):
    """Hierarchy too small to induce similarities (height zero)."""


class TrainingDivergenceError(NumericError):
    """Loss or gradients became non-finite during training."""


class TapeError(NumericError):
    """Misuse of the gradient tape (e.g. backward from a non-scalar)."""
