"""
Reference block-DCT lossy codec

Each channel is level shifted, split into 8x8 blocks (edge-replicated at the
borders), transformed with an orthonormal type-II DCT and uniformly
quantized. Levels are range coded per channel: zig-zag order inside a block,
DC as a difference to the previous block, each value as a magnitude category
under an adaptive model followed by its raw extra bits. AC runs of zeros up
to the end of a block are closed with an end-of-block category.
"""

import hashlib
import logging
import math
import struct
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from ..coding import AdaptiveModel, FREQ_BITS, FREQ_TOTAL, RangeDecoder, RangeEncoder
from ..coding.range_coder import BitSource, decode_symbol, encode_symbol
from ..errors import CorruptPayloadError, SourceExhaustedError
from ..imaging import Image
from .base_codec import LossyCodec, LossyResult, register_codec

logger = logging.getLogger(__name__)

BLOCK = 8
NUM_CATEGORIES = 16
EOB = NUM_CATEGORIES
NUM_CONTEXTS = 5
FINGERPRINT_BYTES = 4
MODEL_LIMIT = 1 << 13

# Counts sum to at most MODEL_LIMIT with every count >= 1, so each losing
# symbol keeps FREQ_TOTAL // MODEL_LIMIT of the table.
MIN_SYMBOL_BITS = -math.log2(1.0 - NUM_CATEGORIES * (FREQ_TOTAL // MODEL_LIMIT) / FREQ_TOTAL)


def default_steps() -> List[int]:
    """Step 8 + u + v for band (u, v); lands near 39 dB on natural images"""
    return [8 + u + v for u in range(BLOCK) for v in range(BLOCK)]


class BlockTransformConfig(BaseModel):
    """Quantization steps of the block-DCT codec, row-major over (u, v)"""
    steps: List[int] = Field(default_factory=default_steps)

    @field_validator("steps")
    @classmethod
    def _check_steps(cls, v: List[int]) -> List[int]:
        if len(v) != BLOCK * BLOCK:
            raise ValueError(f"expected {BLOCK * BLOCK} quantization steps, got {len(v)}")
        if any(s < 1 for s in v):
            raise ValueError("quantization steps must be >= 1")
        return v

    @property
    def block_size(self) -> int:
        return BLOCK

    @property
    def step_matrix(self) -> np.ndarray:
        return np.asarray(self.steps, dtype=np.float64).reshape(BLOCK, BLOCK)

    def fingerprint(self) -> bytes:
        data = b"BDCT" + struct.pack(f"<{BLOCK * BLOCK}I", *self.steps)
        return hashlib.sha256(data).digest()[:FINGERPRINT_BYTES]


def _dct_matrix(n: int = BLOCK) -> np.ndarray:
    u = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    d = np.cos((2 * x + 1) * u * np.pi / (2.0 * n))
    d[0, :] *= np.sqrt(1.0 / n)
    d[1:, :] *= np.sqrt(2.0 / n)
    return d


_D = _dct_matrix()
_DT = np.ascontiguousarray(_D.T)


def _zigzag_order(n: int = BLOCK) -> np.ndarray:
    cells = sorted(
        ((u, v) for u in range(n) for v in range(n)),
        key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]),
    )
    return np.array([u * n + v for u, v in cells], dtype=np.int64)


ZIGZAG = _zigzag_order()


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).swapaxes(1, 2)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    by, bx = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(by * BLOCK, bx * BLOCK)


def quantize_levels(image: Image, cfg: BlockTransformConfig) -> np.ndarray:
    """Quantized DCT levels, shape (3, blocks_y, blocks_x, 8, 8)"""
    h, w = image.height, image.width
    pad_h = (-h) % BLOCK
    pad_w = (-w) % BLOCK
    padded = np.pad(image.data.astype(np.float64), ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    steps = cfg.step_matrix

    levels = []
    for c in range(3):
        blocks = _to_blocks(padded[:, :, c] - 128.0)
        coef = np.matmul(np.matmul(_D, blocks), _DT)
        levels.append(_round_half_away(coef / steps).astype(np.int64))
    return np.stack(levels)


def reconstruct_levels(
    levels: np.ndarray, cfg: BlockTransformConfig, height: int, width: int
) -> Image:
    """Dequantize and inverse transform; shared by encoder and decoder"""
    steps = cfg.step_matrix
    planes = []
    for c in range(3):
        coef = levels[c].astype(np.float64) * steps
        blocks = np.matmul(np.matmul(_DT, coef), _D)
        plane = _from_blocks(blocks)[:height, :width] + 128.0
        planes.append(np.clip(_round_half_away(plane), 0, 255))
    return Image(np.stack(planes, axis=-1).astype(np.uint8))


def _category(value: int) -> int:
    return int(abs(value)).bit_length()


def _extra_bits(value: int, cat: int) -> int:
    return value if value >= 0 else (1 << cat) - 1 + value


def _from_extra_bits(bits: int, cat: int) -> int:
    return bits if bits >= (1 << (cat - 1)) else bits - ((1 << cat) - 1)


def _context(k: int) -> int:
    return 0 if k == 0 else 1 + min(3, (k - 1) // 16)


def max_blocks(stream_bytes: int) -> int:
    """Most blocks a channel stream of `stream_bytes` bytes can describe

    The coder emits at least I / 8 bytes for I bits of information and every
    block codes at least two symbols of MIN_SYMBOL_BITS or more.
    """
    return int(8 * stream_bytes / (2 * MIN_SYMBOL_BITS))


def _encode_channel(levels: np.ndarray) -> bytes:
    by, bx = levels.shape[:2]
    flat = levels.reshape(by * bx, BLOCK * BLOCK)[:, ZIGZAG]
    models = [AdaptiveModel(NUM_CATEGORIES + 1, limit=MODEL_LIMIT) for _ in range(NUM_CONTEXTS)]
    encoder = RangeEncoder()
    prev_dc = 0

    def put(value: int, ctx: int) -> None:
        cat = _category(value)
        if cat >= NUM_CATEGORIES:
            raise ValueError(f"DCT level {value} exceeds the codable range")
        model = models[ctx]
        encode_symbol(encoder, model.table, cat)
        model.update(cat)
        if cat:
            shift = FREQ_BITS - cat
            encoder.encode(_extra_bits(value, cat) << shift, 1 << shift)

    for block in flat.tolist():
        dc = block[0]
        put(dc - prev_dc, 0)
        prev_dc = dc
        nonzero = [k for k in range(1, BLOCK * BLOCK) if block[k]]
        last = nonzero[-1] if nonzero else 0
        for k in range(1, last + 1):
            put(block[k], _context(k))
        if last < BLOCK * BLOCK - 1:
            model = models[_context(last + 1)]
            encode_symbol(encoder, model.table, EOB)
            model.update(EOB)
    return encoder.finish()


def _decode_channel(stream: bytes, by: int, bx: int) -> np.ndarray:
    source = BitSource(stream)
    decoder = RangeDecoder(source)
    models = [AdaptiveModel(NUM_CATEGORIES + 1, limit=MODEL_LIMIT) for _ in range(NUM_CONTEXTS)]
    out = np.zeros((by * bx, BLOCK * BLOCK), dtype=np.int64)
    prev_dc = 0

    def get(ctx: int):
        model = models[ctx]
        cat = decode_symbol(decoder, model.table)
        model.update(cat)
        if cat == EOB:
            return None
        if cat == 0:
            return 0
        shift = FREQ_BITS - cat
        bits = decoder.target() >> shift
        decoder.consume(bits << shift, 1 << shift)
        return _from_extra_bits(bits, cat)

    for b in range(by * bx):
        diff = get(0)
        if diff is None:
            raise CorruptPayloadError("end-of-block where a DC value was expected")
        prev_dc += diff
        out[b, 0] = prev_dc
        for k in range(1, BLOCK * BLOCK):
            value = get(_context(k))
            if value is None:
                break
            out[b, k] = value

    if source.remaining:
        raise CorruptPayloadError(f"{source.remaining} unread bytes after channel stream")

    blocks = np.zeros_like(out)
    blocks[:, ZIGZAG] = out
    return blocks.reshape(by, bx, BLOCK, BLOCK)


def encode_lossy(x: Image, cfg: BlockTransformConfig) -> Tuple[bytes, Image]:
    """Compress `x` and return (payload, reconstruction)"""
    levels = quantize_levels(x, cfg)
    parts = [cfg.fingerprint(), struct.pack("<II", x.width, x.height)]
    for c in range(3):
        stream = _encode_channel(levels[c])
        parts.append(struct.pack("<I", len(stream)))
        parts.append(stream)
    payload = b"".join(parts)
    x_tilde = reconstruct_levels(levels, cfg, x.height, x.width)
    logger.debug(f"[LOSSY] {x.width}x{x.height} -> {len(payload)} bytes")
    return payload, x_tilde


def decode_lossy(payload: bytes, cfg: BlockTransformConfig) -> Image:
    """Rebuild the reconstruction from a block-DCT payload"""
    header = FINGERPRINT_BYTES + 8
    if len(payload) < header:
        raise CorruptPayloadError(f"lossy payload too short ({len(payload)} bytes)")
    if payload[:FINGERPRINT_BYTES] != cfg.fingerprint():
        raise CorruptPayloadError("lossy payload was produced with a different configuration")
    width, height = struct.unpack_from("<II", payload, FINGERPRINT_BYTES)
    if width == 0 or height == 0:
        raise CorruptPayloadError(f"invalid lossy dimensions {width}x{height}")
    by = -(-height // BLOCK)
    bx = -(-width // BLOCK)

    pos = header
    channels = []
    try:
        for _ in range(3):
            if pos + 4 > len(payload):
                raise CorruptPayloadError("lossy payload truncated in channel header")
            (length,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            if pos + length > len(payload):
                raise CorruptPayloadError("lossy payload truncated in channel stream")
            if by * bx > max_blocks(length):
                raise CorruptPayloadError(
                    f"{width}x{height} needs {by * bx} blocks, more than a {length}-byte stream holds"
                )
            channels.append(_decode_channel(payload[pos:pos + length], by, bx))
            pos += length
    except SourceExhaustedError as e:
        raise CorruptPayloadError(f"lossy channel stream truncated: {e}") from e
    if pos != len(payload):
        raise CorruptPayloadError(f"{len(payload) - pos} trailing bytes in lossy payload")

    return reconstruct_levels(np.stack(channels), cfg, height, width)


@register_codec("block-dct")
class BlockDCTCodec(LossyCodec):
    """8x8 block-DCT base codec"""

    name = "block-dct"
    version = 1

    def __init__(self, config: BlockTransformConfig = None):
        self.config = config or BlockTransformConfig()

    def encode(self, image: Image) -> LossyResult:
        payload, x_tilde = encode_lossy(image, self.config)
        return LossyResult(payload=payload, reconstruction=x_tilde)

    def decode(self, payload: bytes) -> Image:
        return decode_lossy(payload, self.config)

    def reconstruct(self, image: Image) -> Image:
        levels = quantize_levels(image, self.config)
        return reconstruct_levels(levels, self.config, image.height, image.width)
