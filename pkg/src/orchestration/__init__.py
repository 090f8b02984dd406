"""
Near-lossless coding pipeline for NLLC

- NearLosslessCodec / encode / decode / verify: end-to-end coding
- CodedContainer: on-disk bitstream
- estimate_residual_bits: hypothetical code lengths per inference path
"""

from .container import CodedContainer
from .codec_workflow import (
    CodingMode,
    EncodeReport,
    VerifyReport,
    NearLosslessCodec,
    select_mode,
    encode,
    decode,
    verify,
)
from .instrumentation import InstrumentMode, estimate_residual_bits

__all__ = [
    "CodedContainer",
    "CodingMode",
    "EncodeReport",
    "VerifyReport",
    "NearLosslessCodec",
    "select_mode",
    "encode",
    "decode",
    "verify",
    "InstrumentMode",
    "estimate_residual_bits",
]
