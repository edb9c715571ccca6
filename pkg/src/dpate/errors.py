"""Exception hierarchy shared by all modules."""


class DpateError(Exception):
    """Base class for library errors."""


class ConfigurationError(DpateError, ValueError):
    """Invalid parameters, sizes or configuration files."""


class InputError(DpateError, ValueError):
    """Invalid data values (non-finite outcomes, empty groups, ...)."""


class ProtocolError(DpateError, ValueError):
    """Secure-aggregation session violated its contract."""


class CalibrationError(DpateError, ValueError):
    """No mechanism parameters satisfy the requested privacy target."""
