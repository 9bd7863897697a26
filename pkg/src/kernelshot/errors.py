"""Exception hierarchy shared by all kernelshot modules.

Errors fall into two broad families used by the CLI for exit codes:
``DataError`` (malformed inputs, files, labels) and ``NumericalError``
(failed factorizations, diverged optimization, failed gradient checks).
"""


class KernelshotError(Exception):
    """Base class for all library errors."""


class DataError(KernelshotError):
    """Malformed or inconsistent input data."""


class NumericalError(KernelshotError):
    """Numerical failure (factorization, divergence, gradient check)."""


# -- core types ---------------------------------------------------------------

class ZeroNormRow(DataError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"row {index} has (near-)zero norm, cannot normalize")


class LabelOutOfRange(DataError):
    def __init__(self, index: int, value: int):
        self.index = index
        self.value = value
        super().__init__(f"label {value} at position {index} is out of range")


class InsufficientShots(DataError):
    def __init__(self, cls: int, available: int, requested: int):
        self.cls = cls
        self.available = available
        self.requested = requested
        super().__init__(
            f"class {cls} has {available} rows, {requested} shots requested"
        )


# -- kernels ------------------------------------------------------------------

class DimensionMismatch(DataError):
    pass


class BlockCountMismatch(DataError):
    pass


class EmptyComposite(DataError):
    pass


class MissingTextAnchors(DataError):
    pass


# -- krr ----------------------------------------------------------------------

class NotPositiveDefinite(NumericalError):
    def __init__(self, jitter: float):
        self.jitter = jitter
        super().__init__(
            f"K + lambda*I not positive definite even with jitter {jitter:g}"
        )


# -- anchors ------------------------------------------------------------------

class WrongKind(DataError):
    pass


class CountMismatch(DataError):
    pass


class MissingLabels(DataError):
    pass


class UnbalancedSupport(DataError):
    pass


class EmptyClass(DataError):
    def __init__(self, cls: int):
        self.cls = cls
        super().__init__(f"class {cls} has no rows")


# -- logits / methods ---------------------------------------------------------

class MissingAnchors(DataError):
    pass


class ConfigAnchorMismatch(DataError):
    pass


class DegenerateSoftmax(NumericalError):
    pass


# -- trainer ------------------------------------------------------------------

class KernelMismatch(DataError):
    pass


class DivergedLoss(NumericalError):
    pass


# -- harness I/O --------------------------------------------------------------

class BadMagic(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class CorruptLabels(DataError):
    pass


class EmptyBundle(DataError):
    pass


class IoFailure(DataError):
    pass
