"""Exception hierarchy for the training engine and benchmark harness."""

from collections.abc import Iterable
from pathlib import Path


class MLPInitError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MLPInitError, ValueError):
    """Operand dimensions do not agree."""


class StructureError(MLPInitError, ValueError):
    """A sparse matrix is not in canonical CSR form."""


class ParseError(MLPInitError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, path: str | Path, line: int, message: str) -> None:
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class RangeError(MLPInitError, ValueError):
    """An index is outside its valid range."""


class ConsistencyError(MLPInitError, ValueError):
    """Dataset parts disagree with each other (row counts, split overlap)."""


class FormatError(MLPInitError, ValueError):
    """A binary file has the wrong magic bytes, version or length."""


class ConfigError(MLPInitError, ValueError):
    """A configuration value is invalid for the requested operation."""


class SamplingError(MLPInitError, ValueError):
    """A sampler cannot satisfy the requested sample size."""


class NumericError(MLPInitError, ArithmeticError):
    """A forward pass produced a non-finite value."""

    def __init__(self, layer: int, message: str = "non-finite activation") -> None:
        self.layer = layer
        super().__init__(f"layer {layer}: {message}")


class TransferError(MLPInitError, ValueError):
    """Source weights do not fit the target architecture."""

    def __init__(self, offending: Iterable[str]) -> None:
        self.offending = list(offending)
        super().__init__("cannot transfer weights: " + "; ".join(self.offending))


class DivergenceError(MLPInitError, ArithmeticError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch: int, loss: float) -> None:
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class DegenerateError(MLPInitError, ValueError):
    """Input is empty or has no variance to analyse."""
