"""
Weights file format

Layout (little-endian):
    magic "NLLW" | version u8 | tensor count u32
    per tensor: name length u16 | UTF-8 name | ndim u8 | dims u32 x ndim | float64 values
    SHA-256 over all value bytes in table order (32 bytes)

Checkpoint files ("NLLT") embed a weights blob; load_weights accepts both.
"""

import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
import torch

from ..errors import WeightsFormatError
from .residual_model import ResidualEntropyModel

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"NLLW"
WEIGHTS_VERSION = 1
CHECKPOINT_MAGIC = b"NLLT"
FINGERPRINT_BYTES = 32

PathLike = Union[str, Path]


def _tensor_table(model: ResidualEntropyModel) -> Dict[str, np.ndarray]:
    return {
        name: t.detach().to(torch.float64).cpu().numpy()
        for name, t in model.state_dict().items()
    }


def weights_fingerprint(model: ResidualEntropyModel) -> bytes:
    """32-byte SHA-256 over the float64 tensor values in state_dict order"""
    digest = hashlib.sha256()
    for values in _tensor_table(model).values():
        digest.update(np.ascontiguousarray(values, dtype="<f8").tobytes())
    return digest.digest()


def pack_tensors(table: Dict[str, np.ndarray]) -> Tuple[bytes, bytes]:
    """Serialize a named tensor table; returns (body, value bytes)"""
    body = [struct.pack("<I", len(table))]
    values_all = []
    for name, values in table.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(values, dtype="<f8")
        body.append(struct.pack("<H", len(encoded)) + encoded)
        body.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        raw = arr.tobytes()
        body.append(raw)
        values_all.append(raw)
    return b"".join(body), b"".join(values_all)


def unpack_tensors(data: bytes, pos: int = 0) -> Tuple[Dict[str, np.ndarray], bytes, int]:
    """Parse a tensor table; returns (table, value bytes, end position)"""
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        table: Dict[str, np.ndarray] = {}
        values_all = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            raw = data[pos:pos + nbytes]
            if len(raw) != nbytes:
                raise WeightsFormatError(f"tensor {name!r} truncated")
            pos += nbytes
            table[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            values_all.append(raw)
    except (struct.error, UnicodeDecodeError) as e:
        raise WeightsFormatError(f"malformed tensor table: {e}") from e
    return table, b"".join(values_all), pos


def weights_to_bytes(model: ResidualEntropyModel) -> bytes:
    body, values = pack_tensors(_tensor_table(model))
    header = WEIGHTS_MAGIC + struct.pack("<B", WEIGHTS_VERSION)
    return header + body + hashlib.sha256(values).digest()


def weights_from_bytes(data: bytes, model: ResidualEntropyModel = None) -> ResidualEntropyModel:
    """Parse an NLLW blob into `model` (a fresh float64 model by default)"""
    if data[:4] != WEIGHTS_MAGIC:
        raise WeightsFormatError("not a weights file (bad magic)")
    if len(data) < 5 or data[4] != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported weights version {data[4] if len(data) > 4 else None}")
    table, values, pos = unpack_tensors(data, 5)
    stored = data[pos:pos + FINGERPRINT_BYTES]
    if len(stored) != FINGERPRINT_BYTES or pos + FINGERPRINT_BYTES != len(data):
        raise WeightsFormatError("weights file has a missing or misplaced fingerprint")
    if hashlib.sha256(values).digest() != stored:
        raise WeightsFormatError("weights fingerprint does not match tensor values")

    if model is None:
        model = ResidualEntropyModel().to(torch.float64)
    expected = model.state_dict()
    if set(expected) != set(table):
        missing = sorted(set(expected) - set(table))
        extra = sorted(set(table) - set(expected))
        raise WeightsFormatError(f"tensor names differ: missing {missing}, unexpected {extra}")
    state = {}
    for name, ref in expected.items():
        if tuple(ref.shape) != table[name].shape:
            raise WeightsFormatError(
                f"tensor {name!r} has shape {table[name].shape}, expected {tuple(ref.shape)}"
            )
        state[name] = torch.from_numpy(table[name]).to(ref.dtype)
    model.load_state_dict(state)
    return model


def save_weights(model: ResidualEntropyModel, path: PathLike) -> bytes:
    """Write a weights file and return its fingerprint"""
    blob = weights_to_bytes(model)
    Path(path).write_bytes(blob)
    logger.info(f"[WEIGHTS] Saved {path} ({len(blob)} bytes)")
    return blob[-FINGERPRINT_BYTES:]


def extract_weights_blob(data: bytes) -> bytes:
    """The NLLW blob of a weights file or of a checkpoint file"""
    if data[:4] == WEIGHTS_MAGIC:
        return data
    if data[:4] == CHECKPOINT_MAGIC:
        try:
            (length,) = struct.unpack_from("<Q", data, 5)
        except struct.error as e:
            raise WeightsFormatError(f"checkpoint truncated: {e}") from e
        blob = data[13:13 + length]
        if len(blob) != length:
            raise WeightsFormatError("checkpoint weights blob truncated")
        return blob
    raise WeightsFormatError("unrecognized weights file (expected NLLW or NLLT magic)")


def load_weights(path: PathLike, model: ResidualEntropyModel = None) -> ResidualEntropyModel:
    """Load weights from a weights file or a training checkpoint"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Weights file not found: {path}")
    model = weights_from_bytes(extract_weights_blob(path.read_bytes()), model)
    logger.info(f"[WEIGHTS] Loaded {path}")
    return model
