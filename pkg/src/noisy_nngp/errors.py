"""Exception hierarchy shared across the package."""


class NNGPError(Exception):
    """Base class for all errors raised by noisy_nngp."""


class KernelParamError(NNGPError, ValueError):
    """Invalid kernel or noise parameters."""


class InvariantError(NNGPError, ArithmeticError):
    """An internal numerical invariant was breached (indicates a bug or bad input)."""


class DatasetError(NNGPError, ValueError):
    """Malformed, truncated or inconsistent dataset."""


class KernelOverflowError(NNGPError, OverflowError):
    """The layer recursion produced a non-finite value."""

    def __init__(self, layer, regime):
        self.layer = layer
        self.regime = regime
        super().__init__(f"kernel overflow at layer {layer} (regime {regime})")


class FactorisationError(NNGPError, ArithmeticError):
    """Cholesky factorisation failed even at the largest jitter."""

    def __init__(self, message, min_eigenvalue=None):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(message)


class ExperimentError(NNGPError, ValueError):
    """An experiment cannot be evaluated as configured (e.g. too few cells)."""
