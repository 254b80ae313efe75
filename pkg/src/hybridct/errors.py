"""Exception hierarchy shared by every pipeline stage."""


class HybridCTError(Exception):
    """Base class for all errors raised by hybridct."""


class ConfigError(HybridCTError):
    pass


class EmptyDatasetError(HybridCTError):
    pass


class StratificationError(HybridCTError):
    pass


class ImageLoadError(HybridCTError):
    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"cannot decode image {path}: {reason}")


class ManifestParseError(HybridCTError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class WeightsUnavailableError(HybridCTError):
    pass


class InputShapeError(HybridCTError):
    pass


class TrainingError(HybridCTError):
    pass


class ArtifactNotFoundError(HybridCTError, FileNotFoundError):
    pass


class IntegrityError(HybridCTError):
    """Artifact on disk is corrupted, truncated or incomplete."""


class VersionMismatchError(HybridCTError):
    pass


class AlignmentError(HybridCTError):
    pass


class DimensionError(HybridCTError):
    pass


class UndefinedMetricError(HybridCTError):
    pass


class RenderError(HybridCTError):
    pass


class StaleArtifactError(HybridCTError):
    pass


class UndefinedMetricWarning(UserWarning):
    """A metric hit a zero denominator and was reported as 0."""
