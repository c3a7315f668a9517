"""Exception hierarchy shared by the library and the CLI (which maps it to exit codes)."""


class QpercError(Exception):
    pass


class ParameterError(QpercError, ValueError):
    """Invalid user input: generator parameters, weights out of range, unknown names."""


class NetworkFormatError(ParameterError):
    pass


class SizeLimitError(ParameterError):
    """An enumeration or recursion guard was hit."""


class NotSeriesParallelError(QpercError):
    def __init__(self, blocking_node, message: str = None):
        self.blocking_node = blocking_node
        super().__init__(message or f"network is not series-parallel: node {blocking_node} cannot be reduced")


class NumericalError(QpercError, RuntimeError):
    def __init__(self, message: str, residual: float = None, partial_order=None):
        self.residual = residual
        self.partial_order = list(partial_order or [])
        super().__init__(message)
