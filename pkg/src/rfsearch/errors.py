"""Exception hierarchy shared by all rfsearch modules."""


class RFSearchError(Exception):
    """Base class for all rfsearch errors."""


class ShapeMismatch(RFSearchError):
    pass


class EvenKernel(RFSearchError):
    pass


class NonFinite(RFSearchError):
    pass


class NonScalarLoss(RFSearchError):
    pass


class DetachedLoss(RFSearchError):
    pass


class MissingGrad(RFSearchError):
    pass


class NegativeSigma(RFSearchError):
    pass


class EdgeCountMismatch(RFSearchError):
    pass


class GenotypeMismatch(RFSearchError):
    pass


class NonFiniteAlpha(RFSearchError):
    pass


class InvalidGenotype(RFSearchError):
    pass


class OutOfBoundsPosition(RFSearchError):
    pass


class ZeroMass(RFSearchError):
    pass


class TruncatedRecord(RFSearchError):
    pass


class LabelOutOfRange(RFSearchError):
    pass


class UnsupportedClassCount(RFSearchError):
    pass


class NonFiniteLoss(RFSearchError):
    pass


class EmptyDataset(RFSearchError):
    pass


class ConfigError(RFSearchError):
    pass
