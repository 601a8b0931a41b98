"""Exception types shared across the package.

Refusal paths raise one of these rather than a bare ValueError so callers and
the command line driver can tell bad input from an exhausted budget from a
numerical breakdown.
"""


class GwlabError(Exception):
    """Base class for all package errors."""


class InvalidDistribution(GwlabError):
    """Offspring table malformed: negative mass, bad normalisation, bad keys."""


class DegenerateModel(GwlabError):
    """Offspring law with no randomness where conditioning is vacuous."""


class SubcriticalModel(GwlabError):
    """Survival or extinction conditioning requested for mean <= 1."""


class NoExtinction(GwlabError):
    """Extinction-conditioned sampling requested where extinction is impossible."""


class SizeCapExceeded(GwlabError):
    """A finite-tree sample outgrew the configured vertex cap."""


class BudgetExceeded(GwlabError):
    """Generation budget exhausted before the request was met."""

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class InsufficientRadius(GwlabError):
    """The generated ball is too small for the requested horizon."""


class InsufficientRegion(GwlabError):
    """The operator region is too small for the requested computation."""


class HorizonTooShort(GwlabError):
    """A discrete curve does not reach far enough for the continuous horizon."""


class NotATree(GwlabError):
    """Host interior graph contains a cycle where a tree is required."""


class TooLarge(GwlabError):
    """Exhaustive or dense computation requested beyond its size cap."""


class UnknownVertex(GwlabError):
    """A vertex id outside the host interior."""


class SearchBudgetExceeded(GwlabError):
    """Exhaustive subset search hit its exploration cap."""


class InfiniteIsland(GwlabError):
    """An island touches the frontier, so its true extent is unknown."""


class MoatViolation(GwlabError):
    """Island decomposition lacks the distance-2 separation from the frontier."""


class SingularSystem(GwlabError):
    """Absorbing linear solve failed; impossible for finite islands, so a bug."""


class EmptyRegion(GwlabError):
    """An operator restriction was requested on an empty vertex set."""


class NonpositiveEstimate(GwlabError):
    """A log-log fit was asked to use nonpositive estimates."""

    def __init__(self, message, offending_times=()):
        super().__init__(message)
        self.offending_times = list(offending_times)


class EigenvalueCollision(GwlabError):
    """A spectral count is ill-posed: an eigenvalue sits on the interval edge."""


class FactorizationBreakdown(GwlabError):
    """Symmetric-indefinite factorisation produced an unusable pivot."""


class SubcriticalLambda(GwlabError):
    """Lifshits bounds need lambda > 1."""


class InvalidParams(GwlabError):
    """Out-of-range parameters for a graph sampler."""


class GridTooCoarse(GwlabError):
    """Energy grid spacing too wide for the requested Laplace accuracy."""


class ConfigError(GwlabError):
    """Experiment configuration rejected (unknown key, bad type, bad value)."""
