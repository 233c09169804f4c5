"""Exception types raised by the library.

The CLI maps them onto its exit-code contract: FormatError -> 2,
ShapeError / SpecError -> 3, DivergenceError -> 4.
"""

from __future__ import annotations


class ShapeError(ValueError):
    """A tensor, cube or checkpoint has extents that violate an operator contract."""


class FormatError(ValueError):
    """A cube, checkpoint or config file is malformed or truncated."""


class SpecError(ValueError):
    """A dataset or training protocol setting is inconsistent."""


class DivergenceError(RuntimeError):
    def __init__(self, message: str, *, epoch: int | None = None, batch: int | None = None):
        location = []
        if epoch is not None:
            location.append(f"epoch {epoch}")
        if batch is not None:
            location.append(f"batch {batch}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.epoch = epoch
        self.batch = batch
