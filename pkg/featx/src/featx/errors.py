class FeatxError(Exception):
    """Base class for featx failures."""


class InputError(FeatxError):
    """Unusable user input: missing directory, no images, bad flag values."""


class BackboneError(FeatxError):
    """The CNN backbone could not be constructed (e.g. weights unavailable)."""


class FormatError(FeatxError):
    """A .capf file is structurally invalid."""
