"""
Near-lossless encode/decode workflow

Encoding:
1. Lossy layer produces x~ and its payload
2. Residual r = x - x~ is quantized to r^ with error bound tau
3. Features u are computed once from x~
4. Pixels are coded in raster order, channels 1 -> 2 -> 3, each with a
   frequency table built from the (quantized) model PMF
5. Everything is packed into a CodedContainer

Decoding runs step 4 in reverse through the same per-pixel routine, so both
sides build identical tables from x~, tau and already decoded values only.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
import torch

from ..coding import FreqTable, RangeDecoder, RangeEncoder, build_freq_table
from ..coding.range_coder import BitSource, decode_symbol, encode_symbol
from ..entropy import (
    PixelEvaluator,
    ResidualEntropyModel,
    autoregress_means,
    copy_as_float64,
    discrete_pmf_mass,
    image_tensor,
    weights_fingerprint,
)
from ..entropy.context_model import CONTEXT_KERNEL
from ..errors import CorruptPayloadError, FingerprintMismatchError, SourceExhaustedError
from ..imaging.metrics import bpsp, linf, psnr
from ..imaging import Image
from ..lossy import BlockDCTCodec, LossyCodec
from ..observability import traced
from ..quantization import (
    quantize_pmf_batch,
    quantize_residual,
    quantized_alphabet,
    reconstruct_pixel,
    validate_tau,
)
from .container import CodedContainer

logger = logging.getLogger(__name__)

# (table, quantized masses, row, col, channel) -> symbol index
SymbolIO = Callable[[FreqTable, np.ndarray, int, int, int], int]


class CodingMode(Enum):
    """How residual probabilities are inferred"""
    LOSSLESS = "lossless"        # tau = 0, plain model, true context
    UNCORRECTED = "uncorrected"  # plain model on quantized context, then quantize_pmf
    CORRECTED = "corrected"      # tau-conditioned model on quantized context


def select_mode(tau: int, use_bias_correction: bool) -> CodingMode:
    if tau == 0:
        return CodingMode.LOSSLESS
    return CodingMode.CORRECTED if use_bias_correction else CodingMode.UNCORRECTED


@dataclass
class EncodeReport:
    """Rates and distortions of one encode"""
    tau: int
    bias_correction: bool
    bpsp_total: float
    bpsp_lossy: float
    bpsp_residual: float
    psnr_lossy: float
    psnr: float
    linf: int
    model_bits: float
    table_bits: float

    def as_lines(self) -> str:
        def fmt(v):
            if isinstance(v, float):
                return "inf" if math.isinf(v) else f"{v:.6f}"
            if isinstance(v, bool):
                return str(int(v))
            return str(v)

        return "\n".join(f"{k}={fmt(v)}" for k, v in self.__dict__.items())


@dataclass
class VerifyReport:
    linf: int
    psnr: float
    tau: int
    passed: bool


class NearLosslessCodec:
    """
    Lossy layer plus learned residual coder

    The entropy model is copied to float64 on construction; its fingerprint
    is written into every container and checked on decode.
    """

    def __init__(self, model: ResidualEntropyModel, lossy_codec: Optional[LossyCodec] = None):
        self.model = copy_as_float64(model)
        self.lossy = lossy_codec or BlockDCTCodec()
        self.fingerprint = weights_fingerprint(self.model)

    def features(self, x_tilde: Image) -> np.ndarray:
        """u for a whole image as a (64, H, W) float64 array"""
        with torch.no_grad():
            u = self.model.extract_feature(image_tensor(x_tilde.data))
        return u[0].numpy()

    def _evaluator(self, mode: CodingMode, tau: int) -> PixelEvaluator:
        condition = tau if mode is CodingMode.CORRECTED else None
        return self.model.pixel_evaluator(condition)

    def code_residuals(self, x_tilde: Image, tau: int, mode: CodingMode,
                       symbol_io: SymbolIO) -> np.ndarray:
        """Walk every subpixel in coding order

        `symbol_io` encodes or decodes the symbol index for each table. The
        returned plane holds the quantized residuals that were coded.
        """
        evaluator = self._evaluator(mode, tau)
        features = self.features(x_tilde)
        alphabet = quantized_alphabet(tau)
        height, width = x_tilde.height, x_tilde.width
        half = CONTEXT_KERNEL // 2
        padded = np.zeros((3, height + 2 * half, width + 2 * half), dtype=np.float64)

        for row in range(height):
            for col in range(width):
                ctx = evaluator.context_at(padded, row, col)
                params = evaluator.params(features[:, row, col], ctx)
                weights = params.weights
                known = np.zeros(3, dtype=np.float64)
                for c in range(3):
                    means = _channel_means(params, c, known)
                    mass = discrete_pmf_mass(means, params.scales[c], weights[c])
                    qmass = quantize_pmf_batch(mass, tau)
                    table = build_freq_table(qmass)
                    index = symbol_io(table, qmass, row, col, c)
                    known[c] = alphabet[index]
                padded[:, row + half, col + half] = known
        return padded[:, half:half + height, half:half + width].transpose(1, 2, 0).astype(np.int64)

    @traced
    def encode(self, x: Image, tau: int,
               use_bias_correction: bool = True) -> Tuple[CodedContainer, EncodeReport]:
        """Encode `x` so that every decoded subpixel is within tau of the original

        Args:
            x: Image to compress
            tau: Error bound in [0, 5]
            use_bias_correction: Use the tau-conditioned model when tau > 0

        Returns:
            (container, report)
        """
        tau = validate_tau(tau)
        mode = select_mode(tau, use_bias_correction)
        logger.info(f"[ENCODE] {x.width}x{x.height} tau={tau} mode={mode.value}")

        logger.info("[ENCODE] [1/4] Lossy layer")
        lossy = self.lossy.encode(x)
        x_tilde = lossy.reconstruction

        logger.info("[ENCODE] [2/4] Residual quantization")
        r = x.data.astype(np.int64) - x_tilde.data.astype(np.int64)
        r_hat = quantize_residual(r, tau)
        alphabet = quantized_alphabet(tau)
        indices = np.searchsorted(alphabet, r_hat)

        logger.info("[ENCODE] [3/4] Residual coding")
        encoder = RangeEncoder()
        bits = {"model": 0.0, "table": 0.0}

        def emit(table: FreqTable, qmass: np.ndarray, row: int, col: int, c: int) -> int:
            index = int(indices[row, col, c])
            encode_symbol(encoder, table, index)
            p = float(qmass[index])
            bits["model"] += -math.log2(p) if p > 0 else math.inf
            bits["table"] += table.self_information_bits(index)
            return index

        self.code_residuals(x_tilde, tau, mode, emit)
        residual_payload = encoder.finish()

        logger.info("[ENCODE] [4/4] Packing container")
        container = CodedContainer(
            width=x.width,
            height=x.height,
            tau=tau,
            bias_correction=mode is CodingMode.CORRECTED,
            fingerprint=self.fingerprint,
            lossy_payload=lossy.payload,
            residual_payload=residual_payload,
        )
        x_hat = Image(reconstruct_pixel(x_tilde.data, r_hat).astype(np.uint8))
        report = EncodeReport(
            tau=tau,
            bias_correction=container.bias_correction,
            bpsp_total=bpsp(8 * container.num_bytes, x),
            bpsp_lossy=bpsp(8 * len(lossy.payload), x),
            bpsp_residual=bpsp(8 * len(residual_payload), x),
            psnr_lossy=psnr(x, x_tilde),
            psnr=psnr(x, x_hat),
            linf=linf(x, x_hat),
            model_bits=bits["model"],
            table_bits=bits["table"],
        )
        logger.info(
            f"[ENCODE] Done: {report.bpsp_total:.4f} bpsp, linf={report.linf}"
        )
        return container, report

    @traced
    def decode(self, container: CodedContainer) -> Image:
        """Rebuild x^ from a container"""
        if container.fingerprint != self.fingerprint:
            raise FingerprintMismatchError(
                "container was encoded with different model weights "
                f"({container.fingerprint[:8].hex()} vs {self.fingerprint[:8].hex()})"
            )
        tau = validate_tau(container.tau)
        mode = select_mode(tau, container.bias_correction)
        logger.info(f"[DECODE] {container.width}x{container.height} tau={tau} mode={mode.value}")

        x_tilde = self.lossy.decode(container.lossy_payload)
        if (x_tilde.width, x_tilde.height) != (container.width, container.height):
            raise CorruptPayloadError(
                f"lossy layer decoded {x_tilde.width}x{x_tilde.height}, "
                f"container says {container.width}x{container.height}"
            )

        source = BitSource(container.residual_payload)
        try:
            decoder = RangeDecoder(source)
            r_hat = self.code_residuals(
                x_tilde, tau, mode,
                lambda table, qmass, row, col, c: decode_symbol(decoder, table),
            )
        except SourceExhaustedError as e:
            raise CorruptPayloadError(f"residual payload truncated: {e}") from e
        if source.remaining:
            raise CorruptPayloadError(f"{source.remaining} unread bytes in residual payload")

        return Image(reconstruct_pixel(x_tilde.data, r_hat).astype(np.uint8))


def _channel_means(params, c: int, known: np.ndarray) -> np.ndarray:
    shifted = autoregress_means(params, np.asarray(known[0]), np.asarray(known[1]))
    return shifted.means[c]


def encode(x: Image, tau: int, model: ResidualEntropyModel,
           use_bias_correction: bool = True,
           lossy_codec: Optional[LossyCodec] = None) -> Tuple[CodedContainer, EncodeReport]:
    return NearLosslessCodec(model, lossy_codec).encode(x, tau, use_bias_correction)


def decode(container: CodedContainer, model: ResidualEntropyModel,
           lossy_codec: Optional[LossyCodec] = None) -> Image:
    return NearLosslessCodec(model, lossy_codec).decode(container)


def verify(x: Image, x_hat: Image, tau: int) -> VerifyReport:
    """Check the per-subpixel error bound"""
    tau = validate_tau(tau)
    err = linf(x, x_hat)
    return VerifyReport(linf=err, psnr=psnr(x, x_hat), tau=tau, passed=err <= tau)
