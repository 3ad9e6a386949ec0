"""Exception hierarchy."""


class ArchGrowError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(ArchGrowError, ValueError):
    pass


class NumericError(ArchGrowError, ArithmeticError):
    """Non-finite values or mismatched shapes inside a numeric kernel."""


class ShapeError(NumericError):
    pass


class StructuralError(ArchGrowError):
    """A graph mutation would break one of the layer-graph rules.

    ``rule`` names the violated rule so callers can branch on it.
    """

    def __init__(self, rule, message):
        super().__init__(f"{rule}: {message}")
        self.rule = rule


class ForbiddenRemovalError(StructuralError):
    def __init__(self, message):
        super().__init__("forbidden-removal", message)


class LayerNotFoundError(ArchGrowError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "layer not found"


class DeadlockError(ArchGrowError):
    """A layer never received all of its incoming signals."""


class StaleActionError(ArchGrowError):
    """The action references layers that no longer exist."""


class TerminalNodeError(ArchGrowError):
    """No legal action is available."""


class DatasetError(ArchGrowError, ValueError):
    pass


class FormatError(DatasetError):
    """Malformed file on disk (IDX, time-series CSV)."""


class ModelLoadError(ArchGrowError):
    pass


class TrainingError(ArchGrowError):
    def __init__(self, generation, cause):
        super().__init__(f"generation {generation}: {cause}")
        self.generation = generation
        self.cause = cause
