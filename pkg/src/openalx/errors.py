class OpenALError(Exception):
    """Base class for every error raised by openalx."""


class SchemaError(OpenALError):
    pass


class ParseError(OpenALError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class FormatError(OpenALError):
    pass


class DatasetError(OpenALError):
    pass


class StratificationError(OpenALError):
    pass


class IntegrityError(OpenALError):
    pass


class FitError(OpenALError):
    pass


class DimensionError(OpenALError):
    pass


class SamplerError(OpenALError):
    pass


class MetricError(OpenALError):
    pass


class ConfigError(OpenALError):
    pass
