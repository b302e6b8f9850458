"""Exception types raised across the package.

Two broad families matter to callers: ``ValidationError`` (bad inputs or
data that violates a documented invariant) and ``ConvergenceError``
(numerical procedures that failed to reach their target). The CLI maps
these to exit codes 2 and 3 respectively.
"""


class PseudopopError(Exception):
    """Base class for all package errors."""


class ValidationError(PseudopopError, ValueError):
    """Input data or arguments violate a documented invariant."""


class ConvergenceError(PseudopopError, RuntimeError):
    """A numerical procedure failed to converge or could not proceed."""


# ---------------------------------------------------------------- data layer


class MissingColumnError(ValidationError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"required column {column!r} not found in input file")


class EmptyCellError(ValidationError):
    """Some study/group combination has no subjects (positivity failure)."""

    def __init__(self, study: int, group: int):
        self.study = study
        self.group = group
        super().__init__(f"no subjects observed for study {study}, group {group}")


class NonFiniteValueError(ValidationError):
    def __init__(self, matrix: str, row: int, col: int):
        self.matrix = matrix
        self.row = row
        self.col = col
        super().__init__(
            f"non-finite value in {matrix} at row {row}, column {col} (0-based)"
        )


class DimensionMismatchError(ValidationError):
    pass


class MissingGroupPrevalenceError(ValidationError):
    def __init__(self):
        super().__init__("naturalGroupProp required for FLEXOR weights")


class EmptyGroupError(ValidationError):
    def __init__(self, group: int):
        self.group = group
        super().__init__(f"group {group} has no subjects")


class ZeroDenominatorError(ValidationError):
    pass


class AllZeroWeightsError(ValidationError):
    pass


# ----------------------------------------------------------- numerical layer


class NonConvergenceError(ConvergenceError):
    def __init__(self, max_iter: int, grad_norm: float):
        self.max_iter = max_iter
        self.grad_norm = grad_norm
        super().__init__(
            f"optimizer did not converge within {max_iter} iterations "
            f"(scaled gradient norm {grad_norm:.3e})"
        )


class SingularUpdateError(ConvergenceError):
    """Line search cannot make progress; typically severe separation in the
    propensity model. Raising the ridge penalty usually resolves it."""


class NoFeasibleGammaError(ConvergenceError):
    def __init__(self, n_studies: int, gamma_min: float, gamma_max: float):
        super().__init__(
            f"no probability vector of length {n_studies} fits inside "
            f"[{gamma_min}, {gamma_max}]^{n_studies}"
        )


class ResampleExhaustedError(ConvergenceError):
    def __init__(self, max_redraws: int):
        self.max_redraws = max_redraws
        super().__init__(
            f"could not draw a bootstrap sample with all study/group cells "
            f"nonempty after {max_redraws} attempts"
        )


class BisectionFailureError(ConvergenceError):
    pass
