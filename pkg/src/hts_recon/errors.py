"""Exception types raised across the package.

Every error derives from :class:`ReconError` (itself a ``ValueError``) so callers
can catch the whole family at once.
"""


class ReconError(ValueError):
    pass


# hierarchy
class CycleDetected(ReconError):
    pass


class DuplicateNode(ReconError):
    pass


class EmptyBottomLevel(ReconError):
    pass


class OrderingViolated(ReconError):
    pass


class HierarchyParseError(ReconError):
    pass


class DimensionMismatch(ReconError):
    pass


# covariance
class TooFewRows(ReconError):
    pass


class NonFiniteInput(ReconError):
    pass


class DegenerateVariance(ReconError):
    pass


class NonSymmetric(ReconError):
    pass


class NotPositiveDefinite(ReconError):
    pass


# reconcile
class SingularGram(ReconError):
    pass


class NotDiagonal(ReconError):
    pass


class RankDeficientReducedGram(ReconError):
    pass


class EmptyPanel(ReconError):
    pass


class AllZeroForecasts(ReconError):
    pass


class MisalignedRows(ReconError):
    pass


class FormMismatch(ReconError):
    """The two closed forms of the trace-minimising map disagree."""


# basemodels
class SeriesTooShort(ReconError):
    pass


class HistoryTooShort(ReconError):
    pass


# simulate
class ModulusOutOfRange(ReconError):
    pass


class RhoOutOfRange(ReconError):
    pass


class UnstableCoefficient(ReconError):
    pass


# evaluate
class ZeroReference(ReconError):
    pass


class EmptyInput(ReconError):
    pass


# cli
class ConfigError(ReconError):
    pass


class MissingInput(ReconError):
    pass


class IncoherentOutput(ReconError):
    pass
