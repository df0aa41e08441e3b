"""Exception types shared across the package."""


class GraphLoadError(Exception):
    """A dataset directory is missing a required file or a file is unreadable."""


class GraphIntegrityError(Exception):
    """A triple file references an entity or relation absent from the vocabularies."""

    def __init__(self, message, path=None, line_no=None):
        if path is not None:
            message = f"{path}:{line_no}: {message}"
        super().__init__(message)
        self.path = path
        self.line_no = line_no


class EncodingError(ValueError):
    """A triple cannot be encoded (e.g. a description tokenizes to nothing)."""


class SamplingError(RuntimeError):
    """Too few admissible corruption candidates for a positive triple."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
