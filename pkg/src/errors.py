"""
Errors
Exception hierarchy shared by the generator, collector, harness and reports
"""


class GroundingError(Exception):
    """Base class for every error raised on purpose by this project"""


class InvalidArgumentError(GroundingError, ValueError):
    """An argument is outside the domain an operation accepts"""


class SchemaError(GroundingError):
    """A dataset file does not follow the JSONL schema"""


class CapacityError(GroundingError):
    """Text does not fit in the editor layout"""

    def __init__(self, message: str, line_number: int):
        super().__init__(message)
        self.line_number = line_number


class GenerationError(GroundingError):
    """The corpus cannot satisfy the requested dataset composition"""


class ConfigurationError(GroundingError):
    """Configuration is missing, malformed or contradictory"""


class EmptyInputError(GroundingError):
    """An aggregation was asked to summarise nothing"""


class ComparisonError(GroundingError):
    """Runs cannot be compared (different datasets)"""


class BridgeError(GroundingError):
    """Base class for extension-host / renderer bridge failures"""


class BridgeStartupError(BridgeError):
    """The bridge could not bind its port"""


class BridgeTimeoutError(BridgeError):
    """A request stayed unanswered past the request timeout"""


class BridgeTransportError(BridgeError):
    """The renderer connection went away"""


class BridgeBusyError(BridgeError):
    """A request was issued while another one is still in flight"""


class RendererError(BridgeError):
    """The renderer answered with an error instead of a result"""


class BackendError(GroundingError):
    """Base class for model backend failures"""


class BackendAuthError(BackendError, ConfigurationError):
    """The endpoint rejected the credentials"""


class BackendTransportError(BackendError):
    """The endpoint could not be reached or kept failing"""


class TransientBackendError(BackendTransportError):
    """A failure worth retrying (rate limit, 5xx, dropped connection)"""
