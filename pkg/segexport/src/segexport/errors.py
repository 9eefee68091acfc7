class ExportError(Exception):
    """Base for everything this adapter raises on purpose."""


class MissingInput(ExportError):
    """A referenced file or directory does not exist."""


class ModelUnavailable(ExportError):
    """No local runtime can serve the requested model id."""


class FrameDecodeError(ExportError):
    """A frame image could not be loaded or fails the shape/value checks."""
