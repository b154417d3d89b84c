from typing import Any, Dict, Optional


class CoordcapError(Exception):
    """Base error. Not a ValueError, so pydantic validators re-raise it unchanged."""

    error_code = "coordcap_error"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class InputError(CoordcapError):
    """Malformed arguments: bad distributions, alphabet mismatch, length mismatch."""

    error_code = "input_error"
    exit_code = 3


class SpecError(InputError):
    """Channel specification could not be parsed or validated."""

    error_code = "spec_error"
    exit_code = 3


class PreconditionError(CoordcapError):
    """An operation's precondition (typicality tier, pre-image membership) does not hold."""

    error_code = "precondition_error"
    exit_code = 4


class ResourceGuardError(CoordcapError):
    """A codebook, lattice or enumeration would exceed its configured guard."""

    error_code = "resource_guard"
    exit_code = 5
