"""
Base class for lossy codecs

Any codec that turns an image into a payload and a deterministic
reconstruction can serve as the base layer. Implementations register
themselves by name so tooling can enumerate them.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List

from ..imaging import Image


@dataclass
class LossyResult:
    """Output of a lossy encode"""
    payload: bytes
    reconstruction: Image


class LossyCodec(ABC):
    """
    Base class for lossy base-layer codecs

    Contract:
    1. decode(encode(x).payload) equals encode(x).reconstruction bit for bit
    2. The reconstruction has the same dimensions as the input
    3. Encoding is deterministic
    """

    name: str = "abstract"
    version: int = 0

    @property
    def identifier(self) -> str:
        return f"{self.name}/v{self.version}"

    @abstractmethod
    def encode(self, image: Image) -> LossyResult:
        """Compress `image` and return payload plus reconstruction"""
        pass

    @abstractmethod
    def decode(self, payload: bytes) -> Image:
        """Rebuild the reconstruction from a payload"""
        pass

    def reconstruct(self, image: Image) -> Image:
        """Reconstruction only, no payload

        Override when the reconstruction can be computed without entropy
        coding (the trainer calls this on every patch).
        """
        return self.encode(image).reconstruction


_REGISTRY: Dict[str, Callable[[], LossyCodec]] = {}


def register_codec(name: str):
    """Class decorator adding a codec factory to the registry"""

    def decorator(cls):
        _REGISTRY[name] = cls
        return cls

    return decorator


def get_codec(name: str) -> LossyCodec:
    if name not in _REGISTRY:
        raise ValueError(f"Unknown lossy codec: {name!r}. Available: {available_codecs()}")
    return _REGISTRY[name]()


def available_codecs() -> List[str]:
    return sorted(_REGISTRY)
