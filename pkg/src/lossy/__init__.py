"""
Lossy base layer for NLLC

- LossyCodec / LossyResult: interface every base codec implements
- register_codec / get_codec / available_codecs: codec registry
- BlockDCTCodec / BlockTransformConfig: reference 8x8 block-DCT codec
"""

from .base_codec import (
    LossyCodec,
    LossyResult,
    register_codec,
    get_codec,
    available_codecs,
)
from .block_dct_codec import (
    BlockTransformConfig,
    BlockDCTCodec,
    encode_lossy,
    decode_lossy,
    max_blocks,
    default_steps,
)

__all__ = [
    "LossyCodec",
    "LossyResult",
    "register_codec",
    "get_codec",
    "available_codecs",
    "BlockTransformConfig",
    "BlockDCTCodec",
    "encode_lossy",
    "decode_lossy",
    "max_blocks",
    "default_steps",
]
