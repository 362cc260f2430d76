"""Exception hierarchy; each error carries the CLI exit code it maps to."""


class LightFieldError(Exception):
    exit_code = 1


class LightFieldIOError(LightFieldError):
    exit_code = 2


class LightFieldFormatError(LightFieldError):
    exit_code = 3


class ConfigError(LightFieldError):
    exit_code = 4


class InsufficientFeaturesError(LightFieldError):
    exit_code = 5


class BoundsError(LightFieldFormatError, ValueError):
    """Index, template or search window outside the light field / image."""


class ImageTooSmallError(LightFieldFormatError, ValueError):
    pass


class InsufficientSamplesError(LightFieldFormatError, ValueError):
    """Too few curve samples to fit a plane."""
