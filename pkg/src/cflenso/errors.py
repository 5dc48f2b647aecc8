"""Exception hierarchy shared by the pipeline and the command line front end."""


class CflError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class ConfigError(CflError, ValueError):
    """Invalid or inconsistent run configuration."""

    exit_code = 1


class DataError(CflError, ValueError):
    """Malformed, misaligned or non-finite input data."""

    exit_code = 2


class ComputationError(CflError, RuntimeError):
    """A numerical stage failed (divergence, undersized cells, ...)."""

    exit_code = 3


class DivergenceError(ComputationError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class CellSizeError(ComputationError):
    def __init__(self, cell: int, size: int, required: int, hint: str = ""):
        msg = f"cell {cell} has {size} member(s), at least {required} required"
        if hint:
            msg = f"{msg}; {hint}"
        super().__init__(msg)
        self.cell = cell
        self.size = size
        self.required = required
