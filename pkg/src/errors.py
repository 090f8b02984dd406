"""
Error types for the NLLC codec

Every error raised on a data path derives from NLLCError so the CLI can
report it with a single handler. Most also derive from ValueError because
they describe bad input rather than a programming mistake.
"""


class NLLCError(Exception):
    """Base class for all codec errors"""


class ImageFormatError(NLLCError, ValueError):
    """Image file is malformed, not 8-bit, or not RGB"""


class PatchBoundsError(NLLCError, ValueError):
    """Requested patch does not fit inside the image"""


class CorruptPayloadError(NLLCError, ValueError):
    """A coded payload is truncated, has trailing bytes, or decodes to garbage"""


class SourceExhaustedError(CorruptPayloadError):
    """Range decoder tried to read past the end of its input"""


class ContainerFormatError(CorruptPayloadError):
    """Container header is invalid (magic, version, lengths, tau)"""


class FingerprintMismatchError(NLLCError, ValueError):
    """Container was produced with different model weights"""


class WeightsFormatError(NLLCError, ValueError):
    """Weights or checkpoint file cannot be parsed or fails its checksum"""


class TrainingDivergedError(NLLCError, FloatingPointError):
    """A training loss became NaN or infinite"""


class BoundViolationError(NLLCError):
    """A decoded image differs from its source by more than tau"""
