"""Exception types raised by the estimation toolkit."""


class PcgAugError(Exception):
    """Base class for all errors raised by :mod:`pcgaug`."""


class IllPosedError(PcgAugError):
    """The estimation problem is not well posed (CLI exit code 3)."""


class RankDeficient(IllPosedError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class SingularTriangular(IllPosedError):
    pass


class NotSymmetric(IllPosedError):
    pass


class SingularCovariance(IllPosedError):
    """Cholesky of the covariance failed; use the augmented-system estimator."""


class NullspaceSingular(IllPosedError):
    """The covariance is not positive definite on the null space of X^T."""


class SingularD(IllPosedError):
    pass


class SingularProjectedGram(IllPosedError):
    pass


class TooLarge(PcgAugError):
    pass


class BadMultiplicities(PcgAugError):
    pass


class UnstableSimulation(PcgAugError):
    pass
