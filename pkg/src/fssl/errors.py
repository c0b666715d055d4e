"""Exception types raised across the package."""


class FsslError(Exception):
    """Base class for all package errors."""


class ContractError(FsslError, ValueError):
    """A caller violated an operation precondition."""


class ShapeError(FsslError, ValueError):
    pass


class ShortClip(FsslError, ValueError):
    """Clip too short to hold a single analysis window."""


class EmptyCorpus(FsslError, ValueError):
    pass


class DimMismatch(FsslError, ValueError):
    pass


class EmptyTargets(FsslError, ValueError):
    """Every APC prediction step falls past the end of the input."""


class ConfigError(FsslError, ValueError):
    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class IngestionError(FsslError):
    """Base for manifest/WAV ingestion problems; carries the 1-based row number."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MalformedRow(IngestionError):
    pass


class MissingAudio(IngestionError):
    pass


class UnsupportedAudio(IngestionError):
    pass


class DegenerateLabels(FsslError, ValueError):
    """PR analysis needs at least one positive and one negative."""


class ReportError(FsslError, ValueError):
    pass


class FormatError(FsslError, ValueError):
    """Corrupt or unrecognized binary record."""
