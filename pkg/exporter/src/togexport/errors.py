class ExportError(Exception):
    """Base class for exporter failures."""


class ModelUnavailable(ExportError):
    """The requested backend's model weights are not available."""


class BadImage(ExportError):
    """The input image cannot be decoded."""


class InvalidJob(ExportError):
    """The export job is malformed (e.g. no requested outputs)."""
