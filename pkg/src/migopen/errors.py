"""Exception and warning types shared across the package."""


class MigopenError(Exception):
    """Base class for all package-specific errors."""


# --- ingest -----------------------------------------------------------------

class SchemaError(MigopenError):
    """An input file violates its documented schema."""


class MissingColumn(SchemaError):
    pass


class DuplicateKey(SchemaError):
    pass


class NegativeStock(SchemaError):
    pass


class BadISO3(SchemaError):
    pass


class BadYear(SchemaError):
    pass


class NonpositiveDistance(SchemaError):
    pass


class NonBinaryDummy(SchemaError):
    pass


class NonpositivePopulation(SchemaError):
    pass


class EmptyPanel(MigopenError):
    """No rows survive the panel build filters."""


# --- estimator --------------------------------------------------------------

class NoConvergence(MigopenError):
    """The alternating-projection sweep failed to demean within tolerance."""


class NonConvergence(MigopenError):
    """IRLS failed to converge; carries the iteration trace."""

    def __init__(self, message: str, iteration_log=None):
        super().__init__(message)
        self.iteration_log = list(iteration_log or [])


class EmptyAfterSeparation(MigopenError):
    """Separation and singleton handling removed every observation."""


class SingularBread(MigopenError):
    """The bread matrix of the sandwich covariance is not invertible."""


class UnknownFELevel(MigopenError):
    """Prediction requested for a fixed-effect combination unseen at fit time."""


class TooLargeForDense(MigopenError):
    """Dense-dummy oracle guard tripped (too many fixed-effect levels)."""


class CollinearRegressorWarning(UserWarning):
    """A collinear regressor was dropped from the design."""


# --- openness ---------------------------------------------------------------

class PanelMismatch(MigopenError):
    """FitResult and panel do not describe the same estimation sample."""


class MissingPopulation(MigopenError):
    """A destination-year lacks the population needed for per-capita measures."""


class CoverageMismatchWarning(UserWarning):
    """Skill matrices cover different destination-years; unmatched rows excluded."""


# --- analysis ---------------------------------------------------------------

class InsufficientData(MigopenError):
    """Too few pairwise-complete observations for a correlation."""


class RankDeficient(MigopenError):
    """The regression design matrix is rank deficient; names the column."""
