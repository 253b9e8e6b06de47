"""Exception types raised across the package."""


class GfmSatError(Exception):
    """Base class for all package errors."""


class DomainError(GfmSatError, ValueError):
    """An argument lies outside the domain of a control law or formula."""


class NetworkError(GfmSatError):
    """Malformed or disconnected network description."""


class ReductionError(NetworkError):
    """Kron reduction failed because the eliminated block is singular."""

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class AugmentationError(NetworkError):
    """``I + Y_c z_v`` is singular."""


class EventError(NetworkError):
    """An event references an unknown node, branch or fault."""


class SolverError(GfmSatError):
    """An iterative solve did not converge within its budget."""

    def __init__(self, message, residual=float("nan"), iterations=0, snapshot=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.snapshot = snapshot


class ApplicabilityError(GfmSatError):
    """Closed-form result requested outside its preconditions."""


class ScenarioError(GfmSatError):
    """Scenario file violates the schema or contains dangling references."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer
