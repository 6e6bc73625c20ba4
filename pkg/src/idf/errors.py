"""Exception hierarchy shared by every idf module."""


class IDFError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    category = "error"


class IngestionError(IDFError):
    category = "ingestion"


class ImageFormatError(IDFError):
    category = "format"


class ParameterError(IDFError, ValueError):
    category = "parameter"


class DimensionError(IDFError, ValueError):
    category = "dimension"


class ContractViolation(IDFError, ValueError):
    category = "contract"


class StateError(IDFError):
    category = "state"


class ConfigError(IDFError, ValueError):
    category = "config"


class ProtocolError(IDFError, ValueError):
    category = "protocol"
