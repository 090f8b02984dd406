"""
NLLC container format

Layout (little-endian):
    magic "NLLC" (4) | version u8 | width u32 | height u32 | tau u8 | flags u8
    weights fingerprint (32)
    lossy length u32 | lossy payload
    residual length u32 | residual payload

flags bit 0: bias correction was used for the residual stream.
"""

import struct
from dataclasses import dataclass

from ..errors import ContainerFormatError
from ..quantization import MAX_TAU

MAGIC = b"NLLC"
VERSION = 1
FLAG_BIAS_CORRECTION = 0x01
KNOWN_FLAGS = FLAG_BIAS_CORRECTION

_HEADER = struct.Struct("<4sBIIBB32s")
_LENGTH = struct.Struct("<I")


@dataclass
class CodedContainer:
    """One encoded image"""
    width: int
    height: int
    tau: int
    bias_correction: bool
    fingerprint: bytes
    lossy_payload: bytes
    residual_payload: bytes

    @property
    def flags(self) -> int:
        return FLAG_BIAS_CORRECTION if self.bias_correction else 0

    def to_bytes(self) -> bytes:
        if len(self.fingerprint) != 32:
            raise ContainerFormatError(
                f"weights fingerprint must be 32 bytes, got {len(self.fingerprint)}"
            )
        header = _HEADER.pack(
            MAGIC, VERSION, self.width, self.height, self.tau, self.flags, self.fingerprint
        )
        return b"".join([
            header,
            _LENGTH.pack(len(self.lossy_payload)),
            self.lossy_payload,
            _LENGTH.pack(len(self.residual_payload)),
            self.residual_payload,
        ])

    @property
    def num_bytes(self) -> int:
        return _HEADER.size + 2 * _LENGTH.size + len(self.lossy_payload) + len(self.residual_payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodedContainer":
        if len(data) < _HEADER.size:
            raise ContainerFormatError(f"container too short ({len(data)} bytes)")
        magic, version, width, height, tau, flags, fingerprint = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ContainerFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ContainerFormatError(f"unsupported container version {version}")
        if tau > MAX_TAU:
            raise ContainerFormatError(f"tau {tau} exceeds {MAX_TAU}")
        if flags & ~KNOWN_FLAGS:
            raise ContainerFormatError(f"unknown flag bits 0x{flags:02x}")
        if width == 0 or height == 0:
            raise ContainerFormatError(f"invalid dimensions {width}x{height}")

        pos = _HEADER.size
        payloads = []
        for label in ("lossy", "residual"):
            if pos + _LENGTH.size > len(data):
                raise ContainerFormatError(f"container truncated before {label} length")
            (length,) = _LENGTH.unpack_from(data, pos)
            pos += _LENGTH.size
            if pos + length > len(data):
                raise ContainerFormatError(f"container truncated inside {label} payload")
            payloads.append(bytes(data[pos:pos + length]))
            pos += length
        if pos != len(data):
            raise ContainerFormatError(f"{len(data) - pos} trailing bytes after container")

        return cls(
            width=width,
            height=height,
            tau=tau,
            bias_correction=bool(flags & FLAG_BIAS_CORRECTION),
            fingerprint=fingerprint,
            lossy_payload=payloads[0],
            residual_payload=payloads[1],
        )
