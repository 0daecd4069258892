"""Exception hierarchy shared across the toolkit."""


class GridSynthError(Exception):
    """Base class for all toolkit errors."""


class ParseError(GridSynthError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class ValidationError(GridSynthError):
    """Input violates a documented invariant."""


class InsufficientDataError(GridSynthError):
    """Not enough observations to run the requested operation."""


class SchemaError(GridSynthError):
    """Column layout or feature schema mismatch."""


class DivergenceError(GridSynthError):
    """Training produced non-finite losses; carries the epoch index."""

    def __init__(self, epoch, message="training diverged (non-finite loss)"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")


class FitError(GridSynthError):
    """A model cannot be fitted on the given data."""


class ConfigError(GridSynthError):
    """Run configuration is invalid or incomplete."""
