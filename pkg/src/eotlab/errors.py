"""Exception hierarchy shared by every eotlab module."""


class EotLabError(Exception):
    """Base class for all errors raised by eotlab."""


class ParameterError(EotLabError, ValueError):
    pass


class DomainError(EotLabError, ValueError):
    """A query point lies outside the region where a field is defined."""


class BoundViolationError(EotLabError, ValueError):
    def __init__(self, node, value, lower, upper):
        self.node = node
        self.value = value
        super().__init__(
            f"density {value!r} at node {tuple(node)} violates bounds [{lower}, {upper}]"
        )


class DegenerateDomainError(EotLabError, ValueError):
    pass


class MarginTooLargeError(EotLabError, ValueError):
    pass


class NonConvergenceError(EotLabError, RuntimeError):
    def __init__(self, epsilon, residual_trace, max_iter):
        self.epsilon = epsilon
        self.residual_trace = list(residual_trace)
        self.max_iter = max_iter
        last = self.residual_trace[-1] if self.residual_trace else float("nan")
        super().__init__(
            f"Sinkhorn did not converge at epsilon={epsilon!r}: "
            f"residual {last:.3e} after {max_iter} iterations"
        )


class EmptySubsetError(EotLabError, ValueError):
    pass


class NormalizationError(EotLabError, ValueError):
    pass


class MethodError(EotLabError, ValueError):
    pass


class CapacityError(EotLabError, ValueError):
    pass


class InternalError(EotLabError, RuntimeError):
    pass


class ResolutionError(EotLabError, ValueError):
    pass


class InsufficientDataError(EotLabError, ValueError):
    pass


class DualityViolationError(EotLabError, ValueError):
    pass


class PreconditionError(EotLabError, ValueError):
    def __init__(self, message, worst_pair=None):
        self.worst_pair = worst_pair
        super().__init__(message)


class LogDomainError(EotLabError, ValueError):
    pass


class InstanceError(EotLabError, ValueError):
    pass


class ConfigParseError(EotLabError, ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


class ConfigValidationError(EotLabError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
