"""Exception types shared across the package."""


class SdcfError(Exception):
    """Base class for all package errors."""


class SingularTransformError(SdcfError, ArithmeticError):
    """A transform lost numerical rank, so its log-det is undefined."""

    def __init__(self, sigma_min, tol, where=None):
        self.sigma_min = float(sigma_min)
        self.tol = float(tol)
        self.where = where
        loc = f" in {where}" if where else ""
        super().__init__(
            f"singular transform{loc}: smallest singular value {self.sigma_min:.3e} <= {self.tol:.1e}"
        )


class DivergenceError(SdcfError, ArithmeticError):
    """Training produced a non-finite or exploding objective."""

    def __init__(self, epoch, loss, initial):
        self.epoch = epoch
        self.loss = loss
        self.initial = initial
        super().__init__(
            f"training diverged at epoch {epoch}: loss={loss!r} (initial {initial!r})"
        )


class ConfigError(SdcfError, ValueError):
    """Invalid architecture, protocol or run configuration."""


class FormatError(SdcfError, ValueError):
    """Malformed input data file."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
