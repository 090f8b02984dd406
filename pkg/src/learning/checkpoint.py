"""
Training checkpoints

Layout (little-endian):
    magic "NLLT" | version u8
    weights blob length u64 | weights blob (NLLW format)
    optimizer table length u64 | named tensor table
    metadata length u32 | UTF-8 JSON (step, config, config_hash, param_groups)
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import torch

from ..entropy import ResidualEntropyModel, pack_tensors, unpack_tensors, weights_from_bytes, weights_to_bytes
from ..entropy.weights_store import CHECKPOINT_MAGIC
from ..errors import WeightsFormatError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

PathLike = Union[str, Path]


def _optimizer_table(optimizer: torch.optim.Optimizer) -> Dict[str, np.ndarray]:
    table = {}
    for idx, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            table[f"{idx}.{key}"] = torch.as_tensor(value).detach().to(torch.float64).cpu().numpy()
    return table


@dataclass
class Checkpoint:
    """Model weights, Adam state and bookkeeping of a training run"""
    model: ResidualEntropyModel
    step: int
    config: Dict[str, Any]
    config_hash: str
    optimizer_state: Dict[str, np.ndarray]
    param_groups: list

    @classmethod
    def capture(cls, model: ResidualEntropyModel, optimizer: torch.optim.Optimizer,
                step: int, config: Dict[str, Any], config_hash: str) -> "Checkpoint":
        groups = optimizer.state_dict()["param_groups"]
        return cls(
            model=model,
            step=step,
            config=config,
            config_hash=config_hash,
            optimizer_state=_optimizer_table(optimizer),
            param_groups=json.loads(json.dumps(groups)),
        )

    def restore_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        params = [p for group in optimizer.param_groups for p in group["params"]]
        state: Dict[int, Dict[str, torch.Tensor]] = {}
        for name, values in self.optimizer_state.items():
            idx, key = name.split(".", 1)
            idx = int(idx)
            if key == "step":
                tensor = torch.tensor(float(values), dtype=torch.float32)
            else:
                tensor = torch.from_numpy(values).to(params[idx].dtype)
            state.setdefault(idx, {})[key] = tensor
        optimizer.load_state_dict({"state": state, "param_groups": self.param_groups})

    def to_bytes(self) -> bytes:
        weights = weights_to_bytes(self.model)
        table, _ = pack_tensors(self.optimizer_state)
        meta = json.dumps({
            "step": self.step,
            "config": self.config,
            "config_hash": self.config_hash,
            "param_groups": self.param_groups,
        }, sort_keys=True).encode("utf-8")
        return b"".join([
            CHECKPOINT_MAGIC,
            struct.pack("<B", CHECKPOINT_VERSION),
            struct.pack("<Q", len(weights)), weights,
            struct.pack("<Q", len(table)), table,
            struct.pack("<I", len(meta)), meta,
        ])

    def save(self, path: PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())
        logger.info(f"[CHECKPOINT] Saved step {self.step} to {path}")

    @classmethod
    def from_bytes(cls, data: bytes, model: ResidualEntropyModel = None) -> "Checkpoint":
        if data[:4] != CHECKPOINT_MAGIC:
            raise WeightsFormatError("not a checkpoint file (bad magic)")
        if len(data) < 5 or data[4] != CHECKPOINT_VERSION:
            raise WeightsFormatError("unsupported checkpoint version")
        try:
            pos = 5
            (n,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            weights = data[pos:pos + n]
            pos += n
            (n,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            table, _, end = unpack_tensors(data[pos:pos + n])
            if end != n:
                raise WeightsFormatError("optimizer table length mismatch")
            pos += n
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            meta = json.loads(data[pos:pos + n].decode("utf-8"))
            pos += n
        except (struct.error, ValueError) as e:
            if isinstance(e, WeightsFormatError):
                raise
            raise WeightsFormatError(f"malformed checkpoint: {e}") from e
        if pos != len(data):
            raise WeightsFormatError("trailing bytes after checkpoint metadata")

        return cls(
            model=weights_from_bytes(weights, model),
            step=int(meta["step"]),
            config=meta["config"],
            config_hash=meta["config_hash"],
            optimizer_state=table,
            param_groups=meta["param_groups"],
        )

    @classmethod
    def load(cls, path: PathLike, model: ResidualEntropyModel = None) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes(), model)
