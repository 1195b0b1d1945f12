"""Exception hierarchy shared by every subpackage."""


class CTCMixError(Exception):
    """Base class for all errors raised by ctcmix."""


class ShapeMismatch(CTCMixError, ValueError):
    pass


class EmptyOutput(CTCMixError, ValueError):
    pass


class NotScalar(CTCMixError, ValueError):
    pass


class InfeasibleAlignment(CTCMixError, ValueError):
    """No CTC alignment of the target fits in the available frames."""


class TooLarge(CTCMixError, ValueError):
    pass


class BatchTooSmall(CTCMixError, ValueError):
    pass


class InvalidConfig(CTCMixError, ValueError):
    pass


class InvalidDepth(CTCMixError, ValueError):
    pass


class TooNarrow(CTCMixError, ValueError):
    pass


class UnknownGlyph(CTCMixError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyDataset(CTCMixError, ValueError):
    pass


class MalformedManifest(CTCMixError, ValueError):
    pass


class MalformedPGM(CTCMixError, ValueError):
    pass


class MalformedCheckpoint(CTCMixError, ValueError):
    pass


class LengthMismatch(CTCMixError, ValueError):
    pass


class NonFiniteLoss(CTCMixError, FloatingPointError):
    def __init__(self, batch_id, value):
        super().__init__(f"non-finite loss {value!r} on batch {batch_id}")
        self.batch_id = batch_id
        self.value = value


class ConfigMismatch(CTCMixError, ValueError):
    pass
