"""Exception types shared across the package."""


class EstimationError(RuntimeError):
    """Base class for numerical failures inside an estimator."""


class DimensionMismatch(ValueError):
    """Array shapes are inconsistent with the model dimensions."""


class SingularFeedthrough(EstimationError):
    """D^T R^-1 D is numerically singular; a sparsity-aware estimator is needed."""


class SingularInputGram(EstimationError):
    """The input Gram matrix of the state-only recursion is singular."""


class SingularHessian(EstimationError):
    """The stacked normal equations of the batch problem are singular."""


class SingularGram(EstimationError):
    """The weighted observability Gram matrix is singular."""


class NonFinite(EstimationError):
    """A NaN or Inf appeared in an iterate."""


class CovarianceBlowup(EstimationError):
    """A covariance norm exceeded the blow-up threshold."""


class RankCollapse(EstimationError):
    """Nothing is left of the measurements after projecting out the initial state."""


class Infeasible(EstimationError):
    """The residual ball does not intersect the range of the measurement matrix."""


class ZeroReference(ValueError):
    """NMSE requested against a reference with zero energy."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
