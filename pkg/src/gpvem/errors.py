"""Exception types shared across the toolkit."""


class GpvemError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(GpvemError, ValueError):
    """Inputs have incompatible shapes."""


class SingularKernelError(GpvemError):
    """Cholesky factorization failed even at the jitter cap."""

    def __init__(self, message, jitter):
        super().__init__(message)
        self.jitter = jitter


class NonGaussianSiteError(GpvemError, ValueError):
    """A site with second natural parameter >= 0 cannot be read as a Gaussian."""


class PosteriorCollapseError(GpvemError):
    """Posterior precision is not positive definite."""


class CavityCollapseError(GpvemError):
    """Deleting a site produced a non-positive cavity variance."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NewtonDivergenceError(GpvemError):
    """Mode search hit a non-finite objective."""


class EpFailureError(GpvemError):
    """EP could not update a majority of sites in a sweep."""


class OptimizerError(GpvemError):
    """Gradient-based optimizer received non-finite input."""


class TrainingFailureError(GpvemError):
    """Training diverged; the partial trace is attached."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EssBracketError(GpvemError):
    """Elliptical slice bracket shrank below the angular resolution floor."""


class AisFailureError(GpvemError):
    """Fewer than two annealed-importance-sampling replicates survived."""


class DataError(GpvemError, ValueError):
    """Dataset file is malformed or unusable."""


class ConfigError(GpvemError, ValueError):
    """Experiment configuration is invalid."""
