class NLCNNError(Exception):
    """Base class for errors raised by nlcnn."""


class ShapeError(NLCNNError, ValueError):
    """An input tensor has the wrong rank, shape or contents for an op."""


class ConfigError(NLCNNError, ValueError):
    """Hyper-parameters or run settings describe an impossible configuration."""


class DatasetFormatError(NLCNNError):
    """A dataset file does not follow its binary layout."""

    def __init__(self, msg, path=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.path = path
        self.offset = offset


class ModelFileError(NLCNNError):
    """A weight file is malformed, truncated or tampered with."""


class NumericError(NLCNNError, FloatingPointError):
    """Training produced a non-finite value."""
