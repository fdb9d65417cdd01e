"""Exception and warning types shared across the toolkit."""


class NmekitError(Exception):
    """Base class for all toolkit errors."""


class DataError(NmekitError):
    """Problems with input data at ingest or table construction."""


class MissingColumn(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"required column missing from input: {column!r}")


class ParseError(DataError):
    def __init__(self, row, column, detail=""):
        self.row = row
        self.column = column
        msg = f"cannot parse row {row}, column {column!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EmptyTable(DataError):
    """No valid rows remain after ingest filtering."""


class NoFeaturesRemain(DataError):
    """Every candidate feature was dropped during selection."""


class TooFewDrivers(DataError):
    def __init__(self, n_drivers, k):
        self.n_drivers = n_drivers
        self.k = k
        super().__init__(f"cannot split {n_drivers} drivers into {k} folds")


class FeatureMismatch(NmekitError):
    """A table's feature set does not line up with the stats or model it is used with."""


class DomainError(NmekitError):
    """Likelihood kernel called outside its parameter domain."""


class UnsupportedFamily(NmekitError):
    def __init__(self, family):
        self.family = family
        super().__init__(f"unknown model family: {family!r}")


class DegenerateNull(NmekitError):
    """Null log-likelihood is non-negative, so the likelihood ratio is undefined."""


class UnknownDriver(NmekitError):
    def __init__(self, driver_id):
        self.driver_id = driver_id
        super().__init__(f"driver {driver_id!r} has no stored responsibilities")


class ImpossibleDriver(NmekitError):
    def __init__(self, driver_id):
        self.driver_id = driver_id
        super().__init__(
            f"driver {driver_id!r} has zero likelihood under every group"
        )


class AllRestartsFailed(NmekitError):
    """Every EM restart raised or produced a non-finite log-likelihood."""


class GMismatch(NmekitError):
    def __init__(self, g_true, g_fit):
        self.g_true = g_true
        self.g_fit = g_fit
        super().__init__(f"group count mismatch: truth has {g_true}, fit has {g_fit}")


class SupportExhausted(NmekitError):
    """A negative-dispersion pmf lost more mass to truncation than the sampler tolerates."""


class ConfigError(NmekitError):
    """Invalid command-line or configuration input."""


class ZeroVarianceWarning(UserWarning):
    """A feature with no variation was excluded from standardization."""


class SeparationWarning(UserWarning):
    """A fitted coefficient is implausibly large for standardized inputs."""


class NonConvergenceWarning(UserWarning):
    """An optimizer or EM loop stopped on its iteration cap."""


class DegenerateGroupWarning(UserWarning):
    """A mixture group's weight collapsed below the refit threshold."""
