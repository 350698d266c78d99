"""Exception hierarchy shared by all modules."""


class KdvDbarError(Exception):
    """Base class for every error raised by the package."""


class NoDecay(KdvDbarError):
    """Potential does not vanish at the ends of its grid."""


class DegenerateSpectrum(KdvDbarError):
    """Two bound states are closer than the requested tolerance."""


class MatchFailure(KdvDbarError):
    """Jost solutions became linearly dependent at a real wavenumber."""


class OrderTooHigh(KdvDbarError):
    """Requested derivative order exceeds the declared smoothness."""


class OutOfTable(KdvDbarError):
    """Evaluation point lies outside the sampled range of a table."""


class SingularSystem(KdvDbarError):
    """The Cauchy-matrix system could not be factorized."""


class PoleHit(KdvDbarError):
    """Evaluation point coincides with a pole of the model solution."""


class NoContraction(KdvDbarError):
    """Neumann iteration increments failed to decrease."""


class BlowUp(KdvDbarError):
    """Direct PDE integration became unstable."""


class DomainTooSmall(KdvDbarError):
    """Radiation reached the edge of the periodic domain."""


class NonPositive(KdvDbarError):
    """Non-positive magnitude handed to a log-log fit."""


class ConfigError(KdvDbarError):
    """Invalid experiment configuration."""
