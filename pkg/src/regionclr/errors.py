"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, corpus, or checkpoint (CLI exit status 2)."""


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested tensor operation."""


class ContractError(RuntimeError):
    """A caller violated an operation precondition."""


class InputError(ValueError):
    """Invalid data input: unknown token ids, out-of-range pixels, bad indices."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where training cannot continue (exit status 3)."""


class UndefinedMetricError(ValueError):
    """The metric has no defined value on the given labels (e.g. single-class AUROC)."""


class DegenerateRowWarning(UserWarning):
    """A row with near-zero norm passed through L2 normalization unchanged."""


class TruncationWarning(UserWarning):
    """A token sequence was truncated to the maximum context length."""


class EmptyRegionWarning(UserWarning):
    """Cross-modal fusion ran with no selected regions, class token only."""


class DegenerateMetricWarning(UserWarning):
    """A confusion-matrix metric had a zero denominator and was reported as 0."""
