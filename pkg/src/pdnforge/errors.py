"""Exception types shared across the toolkit."""


class PdnForgeError(Exception):
    """Base class for all toolkit errors."""


class DegenerateGeometryError(PdnForgeError):
    """Generated geometry is unusable (collinear points, empty mask, ...)."""


class CapacityError(PdnForgeError):
    """A board mask cannot host the requested number of ports."""


class NumericalFailureError(PdnForgeError):
    """A linear solve failed or produced an untrustworthy result."""

    def __init__(self, message, condition=None, frequency_hz=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        if frequency_hz is not None:
            message = f"{message} at f={frequency_hz:.6g} Hz"
        super().__init__(message)
        self.condition = condition
        self.frequency_hz = frequency_hz


class RecordFormatError(PdnForgeError):
    """A dataset file is malformed or truncated."""

    def __init__(self, message, record_index=None, byte_offset=None):
        details = []
        if record_index is not None:
            details.append(f"record {record_index}")
        if byte_offset is not None:
            details.append(f"byte offset {byte_offset}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.record_index = record_index
        self.byte_offset = byte_offset


class ContractError(PdnForgeError):
    """An array did not have the shape or dtype an interface requires."""
