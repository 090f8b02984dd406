"""
Rate curves over a corpus

For every image and tau in 0..5 the codec is run with and without bias
correction (one lossless row at tau = 0), every decodable row is decoded and
checked against the bound, and the ideal-context code length is added as a
non-decodable reference row. Images run concurrently in a thread pool.
"""

import asyncio
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from ..errors import BoundViolationError
from ..imaging import Image, bpsp, linf, list_images, load_image, psnr
from ..observability import traced
from ..orchestration import (
    CodedContainer,
    InstrumentMode,
    NearLosslessCodec,
    estimate_residual_bits,
)
from ..quantization import MAX_TAU

logger = logging.getLogger(__name__)

RATE_CSV_HEADER = [
    "image_id", "tau", "mode", "decodable",
    "bpsp_lossy", "bpsp_residual", "bpsp_total", "linf", "psnr",
]
MODE_ORDER = {"lossless": 0, "corrected": 1, "uncorrected": 2, "ideal": 3}

PathLike = Union[str, Path]


@dataclass
class RateCurveRow:
    image_id: str
    tau: int
    mode: str
    decodable: bool
    bpsp_lossy: float
    bpsp_residual: float
    bpsp_total: float
    linf: int
    psnr: float

    @property
    def sort_key(self):
        return (self.image_id, self.tau, MODE_ORDER[self.mode])

    def as_csv(self) -> List[str]:
        psnr_text = "inf" if math.isinf(self.psnr) else f"{self.psnr:.4f}"
        return [
            self.image_id, str(self.tau), self.mode, str(int(self.decodable)),
            f"{self.bpsp_lossy:.6f}", f"{self.bpsp_residual:.6f}", f"{self.bpsp_total:.6f}",
            str(self.linf), psnr_text,
        ]


def rate_rows_for_image(codec: NearLosslessCodec, image_id: str, image: Image,
                        taus: Iterable[int] = range(MAX_TAU + 1)) -> List[RateCurveRow]:
    """All rate-curve rows of one image"""
    rows: List[RateCurveRow] = []
    for tau in taus:
        modes = [("lossless", True)] if tau == 0 else [("corrected", True), ("uncorrected", False)]
        x_hat = None
        lossy_bpsp = 0.0
        for mode, correction in modes:
            container, report = codec.encode(image, tau, use_bias_correction=correction)
            x_hat = codec.decode(CodedContainer.from_bytes(container.to_bytes()))
            err = linf(image, x_hat)
            if err > tau:
                raise BoundViolationError(f"{image_id} tau={tau} {mode}: linf {err} exceeds bound")
            lossy_bpsp = report.bpsp_lossy
            rows.append(RateCurveRow(
                image_id=image_id, tau=tau, mode=mode, decodable=True,
                bpsp_lossy=report.bpsp_lossy, bpsp_residual=report.bpsp_residual,
                bpsp_total=report.bpsp_total, linf=err, psnr=psnr(image, x_hat),
            ))

        if tau > 0:
            x_tilde = codec.lossy.reconstruct(image)
            bits = estimate_residual_bits(codec.model, image, x_tilde, tau, InstrumentMode.IDEAL)
            residual = bpsp(bits, image)
            rows.append(RateCurveRow(
                image_id=image_id, tau=tau, mode="ideal", decodable=False,
                bpsp_lossy=lossy_bpsp, bpsp_residual=residual,
                bpsp_total=rows[-1].bpsp_total - rows[-1].bpsp_residual + residual,
                linf=linf(image, x_hat), psnr=psnr(image, x_hat),
            ))
    logger.info(f"[RATE] {image_id}: {len(rows)} rows")
    return rows


@traced
async def run_rate_curve(codec: NearLosslessCodec, images: Dict[str, Image],
                         taus: Iterable[int] = range(MAX_TAU + 1),
                         max_workers: Optional[int] = None) -> List[RateCurveRow]:
    """Rate rows for every image, computed concurrently and sorted"""
    if not images:
        raise ValueError("rate curve needs at least one image")
    taus = list(taus)
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        tasks = [
            loop.run_in_executor(pool, rate_rows_for_image, codec, image_id, image, taus)
            for image_id, image in images.items()
        ]
        results = await asyncio.gather(*tasks)
    rows = [row for image_rows in results for row in image_rows]
    return sorted(rows, key=lambda row: row.sort_key)


def load_corpus(directory: PathLike) -> Dict[str, Image]:
    """Images of a directory keyed by file stem"""
    paths = list_images(directory)
    if not paths:
        raise ValueError(f"corpus directory {directory} contains no .ppm/.png images")
    return {p.stem: load_image(p) for p in paths}


def write_rate_csv(rows: List[RateCurveRow], path: PathLike) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RATE_CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())
