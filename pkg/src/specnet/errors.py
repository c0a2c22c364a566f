"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to the
documented process exit statuses without a lookup table.
"""


class SpecNetError(Exception):
    exit_code = 1


class ModelError(SpecNetError):
    exit_code = 2


class DataError(SpecNetError):
    exit_code = 3


class ConfigError(SpecNetError):
    exit_code = 4


class NumericError(SpecNetError):
    exit_code = 5


# ingestion
class OversizeDocument(DataError):
    pass


class MissingDomain(DataError):
    pass


class DuplicateDomain(DataError):
    pass


class IoFailure(DataError):
    pass


class FileMissing(DataError):
    pass


class EmptyDataset(DataError):
    pass


# embeddings
class EmptyCorpus(DataError):
    pass


class DegenerateVocabulary(DataError, UserWarning):
    pass


# numerics
class ShapeError(NumericError, ValueError):
    pass


class NonFiniteGradient(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class CalibrationDegenerate(NumericError):
    pass


# persistence
class UnsupportedVersion(ModelError):
    pass


class CorruptBundle(ModelError):
    pass
