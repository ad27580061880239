"""Exception hierarchy shared by every korsketch module."""


class KorError(Exception):
    """Base class for all korsketch errors."""


class InvalidParams(KorError, ValueError):
    pass


class InvalidWeight(KorError, ValueError):
    pass


class UnknownElement(KorError, KeyError):
    def __str__(self):
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class DuplicateElement(KorError, ValueError):
    pass


class ParamsMismatch(KorError, ValueError):
    """Two sketches were produced under different parameter families."""


class PrivacyPreconditionViolated(KorError, ValueError):
    pass


class DegenerateNoise(KorError, ValueError):
    pass


class CalibrationFailed(KorError, RuntimeError):
    pass


class SketchFormatError(KorError, ValueError):
    """Base class for malformed sketch files."""


class CorruptHeader(SketchFormatError):
    pass


class VersionMismatch(SketchFormatError):
    pass


class LengthMismatch(SketchFormatError):
    pass


class CorruptPayload(SketchFormatError):
    pass
