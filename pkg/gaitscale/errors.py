class GaitscaleError(Exception):
    """Base class for all gaitscale errors."""

    def __reduce__(self):
        """Support for pickling the exception when passing between processes."""
        return self.__class__, (str(self),)


class ConfigInvalid(GaitscaleError, ValueError):
    """Configuration failed validation."""


class TripleFailure(GaitscaleError):
    """A (context, modality, architecture) triple failed inside a worker."""

    def __init__(self, message, triple=None, traceback_str=None):
        self.raw_message = message
        super().__init__(message)
        self.triple = triple
        self.traceback_str = traceback_str

    def __reduce__(self):
        """Support for pickling the exception when passing between processes."""
        return self.__class__, (self.raw_message, self.triple, self.traceback_str)

    def __str__(self):
        if self.traceback_str:
            return f"{super().__str__()}\nTraceback: {self.traceback_str}"
        return super().__str__()
