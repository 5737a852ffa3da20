"""Shared exception bases. Concrete errors live next to the code that raises them."""


class RadarError(Exception):
    """Base class for every radar-specific error."""


class InputError(RadarError):
    """Invalid external input: records, config documents, CLI arguments.

    The CLI maps this family to exit code 2; everything else is exit code 1.
    """
