"""Exception hierarchy shared across the package."""


class SpectrastError(Exception):
    """Base class for all errors raised by this package."""


# --- feature file IO ---

class FeatureIOError(SpectrastError):
    """Base class for feature-file parse/write failures."""


class MalformedHeaderError(FeatureIOError):
    """Magic bytes, version, or header layout is not what the format declares."""


class DimensionMismatchError(FeatureIOError):
    """Declared dimensions do not match the amount of payload data."""


class NonFiniteValuesError(FeatureIOError):
    """Decoded payload contains NaN or infinite values."""


# --- manifest ---

class ManifestError(SpectrastError):
    """Benchmark manifest could not be parsed or a row violates an invariant."""


# --- segmentation / perturbation ---

class SegmentationError(SpectrastError):
    """Invalid segmentation request (e.g. more segments than cells)."""


class MaskSamplingError(SpectrastError):
    """Mask sampling could not satisfy its contract (e.g. empty-mask re-draws exhausted)."""


# --- backend protocol ---

class BackendError(SpectrastError):
    """Base class for backend failures."""


class BackendProtocolError(BackendError):
    """Malformed message, version mismatch, or invalid reply from a backend."""


class BackendLaunchError(BackendError):
    """Backend subprocess could not be started or died prematurely."""


class UnknownFeatureError(BackendError):
    """Request referenced a feature id that was never registered."""


class DuplicateFeatureError(BackendError):
    """A feature id was re-registered with different content."""


class TokenOutOfVocabError(BackendError):
    """A request referenced a token id outside the backend vocabulary."""


# --- word-level probabilities ---

class WordNotFoundError(SpectrastError):
    """Requested word surface does not occur in the hypothesis."""


class PrefixOnlyMatchError(SpectrastError):
    """Word surface occurs only as the prefix of a longer word."""


class DegenerateConditioningError(SpectrastError):
    """Word-boundary aggregation conditioned on zero boundary mass."""


# --- attribution / evaluation ---

class OutOfCoverageError(SpectrastError):
    """Hypothesis contains neither the target nor the foil word."""


class UndefinedCorrelationError(SpectrastError):
    """Pearson correlation requested for a zero-variance input."""


class DegenerateStatisticsError(SpectrastError):
    """Statistical test is undefined for the given samples."""


class ConfigError(SpectrastError):
    """Run configuration is invalid or incomplete."""
