"""Exception types raised across the package.

Config problems map to CLI exit code 1, data problems to 2, numeric
problems to 3 (see ``msmpolicy.cli``).
"""


class MsmPolicyError(Exception):
    """Base class for all package errors."""


class ConfigError(MsmPolicyError):
    """Malformed or inconsistent run configuration."""


class DataError(MsmPolicyError):
    """Invalid input data."""


class NumericError(MsmPolicyError):
    """Numerically invalid state detected during computation."""


# -- data validation ---------------------------------------------------------

class EmptyDataError(DataError):
    pass


class RaggedRowsError(DataError):
    pass


class NonFiniteError(DataError):
    pass


class ArmOutOfRangeError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


# -- folds / nuisance fitting -------------------------------------------------

class BadFoldCountError(ConfigError):
    """Fold count outside 2 <= K <= n."""


class DegenerateArmError(DataError):
    """An arm has no observations in a training split."""


class MissingNuisanceError(ConfigError):
    """Score construction asked for nuisances the model was not fitted with."""


# -- bounds / scores ----------------------------------------------------------

class PropensityOutOfRangeError(NumericError):
    """Propensity outside the open interval (0, 1)."""


class BadLawError(DataError):
    """Invalid finite conditional law."""


class UnorderedInputError(DataError):
    """A (lower, upper) pair arrived out of order."""


class NotBinaryError(ConfigError):
    """Operation defined for two-arm problems only."""


# -- policy search ------------------------------------------------------------

class NeedTwoFeaturesError(ConfigError):
    pass


class BadDepthError(ConfigError):
    pass


class UnsupportedClassForArmsError(ConfigError):
    """Policy class incompatible with the number of arms."""


class UnsupportedClassError(ConfigError):
    """Operation requires an exhaustively optimizable policy class."""
