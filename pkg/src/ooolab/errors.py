"""Exception hierarchy shared by every subpackage."""


class OooLabError(Exception):
    pass


class ContractViolation(OooLabError, ValueError):
    """A caller broke an operation's precondition (shape, range, arity)."""


class ConfigurationError(OooLabError, ValueError):
    pass


class NumericFailure(OooLabError, FloatingPointError):
    """A NaN or infinity appeared; carries the offending node id or step."""

    def __init__(self, message, node_id=None, step=None):
        detail = message
        if node_id is not None:
            detail += f" (node {node_id})"
        if step is not None:
            detail += f" (step {step})"
        super().__init__(detail)
        self.node_id = node_id
        self.step = step


class DegenerateEncoderError(OooLabError):
    """A metric cannot be computed because the representation carries no signal."""


class UndefinedCorrelationError(OooLabError, ValueError):
    pass


class GenerationError(OooLabError, RuntimeError):
    pass


class CheckpointFormatError(OooLabError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass
