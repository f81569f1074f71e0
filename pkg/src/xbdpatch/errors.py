"""Exception hierarchy shared by the pipeline stages.

Anything deriving from :class:`DataError` maps to CLI exit code 2; plain
``OSError`` maps to 3.
"""


class DataError(Exception):
    """Input data could not be parsed or failed a schema check."""


class MalformedWkt(DataError):
    pass


class MultiPolygonUnsupported(DataError):
    pass


class LabelParseError(DataError):
    pass


class DecodeError(DataError):
    pass


class SchemaError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownSampleId(DataError):
    def __init__(self, sample_id):
        super().__init__(f"unknown sample id {sample_id!r}")
        self.sample_id = sample_id


class EmptyMatrix(DataError):
    pass


class NonFiniteLoss(DataError):
    pass
