"""
Exception hierarchy for surroval.

Input problems (bad files, bad config) derive from InputError and map to
CLI exit status 1. Numerical problems derive from NumericalError.
"""


class SurrovalError(Exception):
    """Root of every error raised by this package."""


# -------------------------
# Input errors
# -------------------------


class InputError(SurrovalError):
    """Data or configuration the user supplied cannot be used."""


class ConfigError(InputError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingColumn(InputError):
    def __init__(self, column: str, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing mandatory column '{column}'{where}")


class NonNumericCell(InputError):
    def __init__(self, row: int, column: str, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column '{column}': non-numeric or missing value {value!r}")


class InvariantViolation(InputError):
    def __init__(self, message: str, record=None):
        self.record = record
        detail = f" (first offending record: {record})" if record is not None else ""
        super().__init__(f"{message}{detail}")


class OrphanMeasurement(InputError):
    def __init__(self, subject_id):
        self.subject_id = subject_id
        super().__init__(f"measurement for id {subject_id} has no row in the survival table")


class DuplicateSurvivalRow(InputError):
    def __init__(self, subject_id):
        self.subject_id = subject_id
        super().__init__(f"id {subject_id} appears more than once in the survival table")


class KnotRangeError(InputError):
    def __init__(self, n_knots: int, low: int, high: int):
        self.n_knots = n_knots
        super().__init__(f"number of knots {n_knots} outside the allowed range [{low}, {high}]")


class DegenerateData(InputError):
    """Times cannot support a spline basis (all equal, or tied quantile knots)."""


class MediationLinkError(InputError):
    """The shared random-effects link cannot carry a mediated effect."""


class MediationPresent(InputError):
    """The closed-form Kendall τ only holds without a mediation function."""


# -------------------------
# Numerical errors
# -------------------------


class NumericalError(SurrovalError):
    """A computation could not produce a finite, valid result."""


class OutOfSupport(NumericalError):
    def __init__(self, t, lower: float, upper: float):
        self.t = t
        super().__init__(f"time {t} outside the spline support [{lower}, {upper}]")


class OrderTooLow(NumericalError):
    def __init__(self, order: int):
        self.order = order
        super().__init__(f"curvature penalty needs spline order >= 3, got {order}")


class NodeCountError(NumericalError):
    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        super().__init__(f"Gauss-Hermite node count must be in [1, 128], got {n_nodes}")


class BadCurvature(NumericalError):
    def __init__(self, curvature):
        self.curvature = curvature
        super().__init__(f"adaptive quadrature needs a positive curvature, got {curvature}")


class NotPositiveDefinite(NumericalError):
    def __init__(self, what: str = "covariance matrix"):
        self.what = what
        super().__init__(f"{what} is not positive definite")


class NonFiniteContribution(NumericalError):
    def __init__(self, subject_id, value):
        self.subject_id = subject_id
        self.value = value
        super().__init__(f"subject {subject_id}: non-finite log-likelihood contribution {value}")


class NumericalUnderflow(NumericalError):
    def __init__(self, trial_id):
        self.trial_id = trial_id
        super().__init__(f"trial {trial_id}: likelihood underflowed after log-space rescaling")


class NonFiniteObjective(NumericalError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"objective is not finite at the starting point ({value})")


class SingularHessian(NumericalError):
    """The (damped) Hessian could not be inverted."""


class NoThreshold(NumericalError):
    """The prediction band for the final-endpoint effect never excludes zero."""


class TooManyRejections(NumericalError):
    def __init__(self, rejected: int, requested: int):
        self.rejected = rejected
        self.requested = requested
        super().__init__(f"{rejected} parameter draws rejected for {requested} bootstrap replicates")


class RootFindingFailure(NumericalError):
    def __init__(self, subject, message: str = "cumulative hazard never reaches the target"):
        self.subject = subject
        super().__init__(f"subject {subject}: {message}")
