class SpecReconError(Exception):
    """Base class for all errors raised by specrecon."""


class ShapeError(SpecReconError, ValueError):
    """Array dimensions do not satisfy an operation's contract.

    ``axis`` names the offending axis when a single one is to blame.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class FormatError(SpecReconError, ValueError):
    """A binary or text file failed validation.

    ``offset`` is the byte offset (binary files) or line number (text files)
    where parsing stopped.
    """

    def __init__(self, message, offset=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.path = path


class CoverageError(SpecReconError, ValueError):
    """A spectral response does not cover the bands it is applied to."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"response does not cover bands (nm): {self.missing}")


class TrainingDiverged(SpecReconError, RuntimeError):
    """Loss became NaN or Inf during training."""

    def __init__(self, iteration, loss):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss
