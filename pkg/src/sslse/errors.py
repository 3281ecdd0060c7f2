"""Exception hierarchy shared across the package."""


class SslseError(Exception):
    """Base class for all domain errors (CLI maps these to exit code 1)."""


class InvalidInput(SslseError):
    """Input violates a precondition (empty signal, non-finite samples, ...)."""


class ShapeError(SslseError):
    """Array shapes are inconsistent with the operation's contract."""


class NumericalError(SslseError):
    """A computation produced non-finite values or hit a degenerate case."""


class FormatError(SslseError):
    """A file does not conform to its declared binary/WAV format."""


class StateError(SslseError):
    """Object state does not permit the requested operation."""


class UnsupportedStride(SslseError):
    """Latent/spectrogram frame-rate ratio outside the supported 2:1 case."""


class UndefinedCorrelation(SslseError):
    """Pearson correlation requested on a constant sequence."""


class PesqUnavailable(SslseError):
    """No external PESQ adapter is configured."""


class AdapterError(SslseError):
    """The external PESQ adapter ran but its output could not be parsed."""
