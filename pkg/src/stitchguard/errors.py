"""Exception hierarchy.

Errors fall into three families that the CLI maps to exit codes:
usage problems (1), bad input data (2) and runtime failures (3).
"""


class StitchGuardError(Exception):
    exit_code = 3


class UsageError(StitchGuardError):
    exit_code = 1


class DataError(StitchGuardError, ValueError):
    exit_code = 2


class RuntimeFailure(StitchGuardError, RuntimeError):
    exit_code = 3


# audio
class UnsupportedFormat(DataError):
    pass


class CorruptHeader(DataError):
    pass


class IoFailure(DataError, OSError):
    pass


class ZeroPowerNoise(DataError):
    pass


class ZeroPowerSpeech(DataError):
    pass


class EmptyRir(DataError):
    pass


# features
class ClipTooShort(DataError):
    pass


class InvalidFeatureConfig(DataError):
    pass


# augment
class BudgetExceedsCandidates(DataError):
    pass


class EmptyManifest(DataError):
    pass


class EncoderNotFound(RuntimeFailure):
    pass


class EncoderFailed(RuntimeFailure):
    pass


# nn / pooling / model
class ShapeMismatch(DataError):
    pass


class BackwardBeforeForward(RuntimeFailure):
    pass


class InvalidProbability(DataError):
    pass


class EmptyInput(DataError):
    pass


class InvalidConfig(DataError):
    pass


class StitchedTrainForbidden(UsageError, ValueError):
    pass


class VersionMismatch(DataError):
    pass


# pipeline / metrics
class EmptyFeatures(DataError):
    pass


class CountTooLarge(DataError):
    pass


class SingleClassManifest(DataError):
    pass


class SingleClassInput(DataError):
    pass


class OutOfRange(DataError):
    pass
