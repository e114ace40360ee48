"""Exception hierarchy shared by all modules.

Each error carries a stable ``code`` so the command line layer can map
failures to exit statuses without string matching.
"""

from __future__ import annotations


class ZipperError(Exception):
    """Base class for all library errors."""

    code = "zipper_error"


class NormTooLarge(ZipperError, ValueError):
    code = "norm_too_large"


class SingularBeta(ZipperError, ArithmeticError):
    code = "singular_beta"


class ZeroSpectralParameter(ZipperError, ValueError):
    code = "zero_spectral_parameter"


class InsufficientWindow(ZipperError, IndexError):
    code = "insufficient_window"


class DegenerateCocycle(ZipperError, ArithmeticError):
    code = "degenerate_cocycle"


class DimensionTooLarge(ZipperError, ValueError):
    code = "dimension_too_large"


class EmptyInterval(ZipperError, ValueError):
    code = "empty_interval"


class BoundaryNotUnitary(ZipperError, ValueError):
    code = "boundary_not_unitary"


class ParityMismatch(ZipperError, ValueError):
    code = "parity_mismatch"


class DimensionMismatch(ZipperError, ValueError):
    code = "dimension_mismatch"


class WindowTooSmall(ZipperError, ValueError):
    code = "window_too_small"


class SplitOutOfRange(ZipperError, IndexError):
    code = "split_out_of_range"


class SolveFailure(ZipperError, ArithmeticError):
    code = "solve_failure"


class IllConditionedE(ZipperError, ArithmeticError):
    code = "ill_conditioned_e"


class SingularGamma(ZipperError, ArithmeticError):
    code = "singular_gamma"


class InvertibilityViolation(ZipperError, ArithmeticError):
    """Raised by the Schur analysis; ``which`` names the failing quantity."""

    code = "invertibility_violation"

    def __init__(self, which: str, smallest_singular_value: float):
        super().__init__(f"{which} is not invertible (smallest singular value {smallest_singular_value:.3e})")
        self.which = which
        self.smallest_singular_value = smallest_singular_value


class ThresholdViolated(ZipperError, ValueError):
    code = "threshold_violated"

    def __init__(self, margin: float):
        super().__init__(f"W-invertibility threshold violated: |z| a q / (1 - a^2) = {margin:.6g} >= 1")
        self.margin = margin


class InsufficientData(ZipperError, ValueError):
    code = "insufficient_data"


class QuadratureUnderResolved(ZipperError, ValueError):
    code = "quadrature_under_resolved"


class SingularSample(ZipperError, ArithmeticError):
    code = "singular_sample"


class ConfigInvalid(ZipperError, ValueError):
    code = "config_invalid"
    exit_status = 2


class NumericalFailureBudgetExceeded(ZipperError, RuntimeError):
    code = "numerical_failure_budget_exceeded"
    exit_status = 3


class InvariantFailure(ZipperError, AssertionError):
    code = "invariant_failure"
    exit_status = 4


class MissingInput(ZipperError, FileNotFoundError):
    code = "missing_input"
