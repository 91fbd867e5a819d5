"""Exception hierarchy shared by every module of the package."""


class AstsumError(Exception):
    """Base class for all package errors."""


class LexError(AstsumError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class ParseError(AstsumError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class SchemaError(AstsumError):
    pass


class StructureError(AstsumError):
    pass


class KindMismatch(AstsumError):
    pass


class EmptyInput(AstsumError):
    pass


class ConfigError(AstsumError):
    pass


class ShapeError(AstsumError):
    pass


class EmptyRowError(AstsumError):
    """An attention row with no allowed key."""


class AllPadError(AstsumError):
    pass


class NonFiniteError(AstsumError):
    pass


class NonFiniteGradientError(NonFiniteError):
    pass


class VocabError(AstsumError):
    pass


class LengthError(AstsumError):
    pass


class EmptyCorpus(AstsumError):
    pass


class CheckpointError(AstsumError):
    pass


class CheckpointIOError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass
