"""Exception types raised across the package."""


class PDLossError(Exception):
    """Base class for all package errors."""


class DimensionError(PDLossError, ValueError):
    """Operand shapes do not agree."""


class EmptySetError(PDLossError, ValueError):
    """A reduction or statistic was requested over an empty set."""


class ContractError(PDLossError, ValueError):
    """A caller violated a documented precondition."""


class LabelError(PDLossError, ValueError):
    """A class label is outside ``[0, C)``."""


class BatchCompositionError(PDLossError, ValueError):
    """A batch lacks the genuine/impostor structure a loss needs."""


class InsufficientDataError(PDLossError, ValueError):
    pass


class MissingClassError(PDLossError, ValueError):
    pass


class SamplerError(PDLossError, ValueError):
    pass


class ConfigError(PDLossError, ValueError):
    """Invalid configuration (CLI exit code 2)."""


class FormatError(PDLossError, ValueError):
    """Malformed input file."""


class EmptyDatasetError(PDLossError, ValueError):
    pass
