"""Exception hierarchy shared by every module."""


class CrossSplitError(Exception):
    pass


class ConfigError(CrossSplitError, ValueError):
    """Invalid sizes, ranges or cross-field constraints."""


class DimensionError(CrossSplitError, ValueError):
    pass


class ContractError(CrossSplitError, ValueError):
    """A documented precondition was violated by the caller."""


class TrainingDivergedError(CrossSplitError, FloatingPointError):
    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class DatasetParseError(CrossSplitError, ValueError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field
