"""Exception hierarchy shared across the package."""


class DynBridgeError(Exception):
    """Base class for all package errors."""


class AssumptionViolation(DynBridgeError):
    pass


class QuadratureFailure(DynBridgeError):
    pass


class BracketFailure(DynBridgeError):
    pass


class DomainError(DynBridgeError, ValueError):
    pass


class BackendMismatch(DynBridgeError):
    pass


class StabilityFailure(DynBridgeError):
    pass


class GridTooSmall(DynBridgeError):
    pass


class DriftOverflow(DynBridgeError):
    pass


class DegenerateWeights(DynBridgeError):
    pass


class TailBoundExceeded(DynBridgeError):
    pass


class RootFindFailure(DynBridgeError):
    pass


class SingularDesign(DynBridgeError):
    pass


class TooFewSamples(DynBridgeError, ValueError):
    pass


class ScenarioError(DynBridgeError, ValueError):
    """Malformed scenario file; ``where`` carries field path and line."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{where}: {message}")
        self.where = where
