"""Exception hierarchy shared by every package in the lab."""


class LabError(Exception):
    """Base class for all errors raised by the lab."""


class ConfigError(LabError):
    """Invalid configuration: bad weights, unknown keys, infeasible geometry."""


class LayoutError(LabError):
    """Two parameter vectors (or slots) with different layouts were combined."""


class ShapeError(LabError):
    """Array dimensions do not match what the model or batch expects."""


class DomainError(LabError):
    """An argument lies outside the domain of the operation."""


class NumericError(LabError):
    """A NaN or Inf showed up where finite numbers are required."""

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"{message} (layer {layer})"
        super().__init__(message)
        self.layer = layer


class LearnerDivergedError(NumericError):
    """A base learner produced non-finite parameters."""

    def __init__(self, learner_id, cause=None):
        super().__init__(f"learner {learner_id} diverged: {cause}")
        self.learner_id = learner_id


class FormatError(LabError):
    """A binary file (IDX or checkpoint) does not follow its format."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class VersionError(LabError):
    """Checkpoint written by an unsupported format version."""


class CorruptionError(LabError):
    """Checkpoint truncated or failing its checksum."""
