#!/usr/bin/env python3.11
"""
NLLC CLI - near-lossless image codec

Usage:
    nllc encode image.ppm --out image.nllc --tau 2 --weights model.nllw
    nllc decode image.nllc --out decoded.ppm --weights model.nllw
    nllc verify image.ppm decoded.ppm --tau 2
    nllc train --dataset images/ --out run.nllt --steps 2000
    nllc rate-curve corpus/ --weights model.nllw --csv rates.csv
    nllc selftest
"""
import argparse
import asyncio
import logging
import math
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

# Load environment
load_dotenv()

# Make the src package importable when run from a checkout
sys.path.insert(0, str(Path(__file__).parent))

from src.errors import NLLCError
from src.evaluation import load_corpus, run_rate_curve, run_selftest, write_rate_csv
from src.entropy import ResidualEntropyModel, load_weights
from src.imaging import load_image, save_image
from src.learning import TrainConfig, train
from src.observability import init_tracing
from src.orchestration import CodedContainer, NearLosslessCodec, verify
from src.quantization import MAX_TAU

logger = logging.getLogger("nllc")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6f}"
    return str(value)


class NLLCCLI:
    """Command implementations; each returns a process exit status"""

    def __init__(self, out=print):
        self.out = out

    def _model(self, weights: Optional[str]) -> ResidualEntropyModel:
        path = weights or os.getenv("NLLC_WEIGHTS")
        if not path:
            raise ValueError("no weights given (use --weights or set NLLC_WEIGHTS)")
        return load_weights(path)

    def encode(self, input_path: str, out_path: str, tau: int, weights: Optional[str],
               use_bias_correction: bool = True) -> int:
        image = load_image(input_path)
        codec = NearLosslessCodec(self._model(weights))
        container, report = codec.encode(image, tau, use_bias_correction=use_bias_correction)
        Path(out_path).write_bytes(container.to_bytes())
        self.out(f"output={out_path}")
        self.out(report.as_lines())
        return 0

    def decode(self, input_path: str, out_path: str, weights: Optional[str]) -> int:
        path = Path(input_path)
        if not path.exists():
            raise FileNotFoundError(f"Container not found: {path}")
        container = CodedContainer.from_bytes(path.read_bytes())
        image = NearLosslessCodec(self._model(weights)).decode(container)
        save_image(image, out_path)
        self.out(f"output={out_path}")
        self.out(f"width={image.width}")
        self.out(f"height={image.height}")
        self.out(f"tau={container.tau}")
        return 0

    def verify(self, original: str, decoded: str, tau: int) -> int:
        report = verify(load_image(original), load_image(decoded), tau)
        self.out(f"linf={report.linf}")
        self.out(f"psnr={_fmt(report.psnr)}")
        self.out(f"tau={report.tau}")
        self.out(f"passed={_fmt(report.passed)}")
        return 0 if report.passed else 1

    def train(self, dataset: str, out_path: Optional[str], steps: int, patch_size: int, seed: int,
              batch_size: int, resume: Optional[str], csv_path: Optional[str],
              augment: bool = True) -> int:
        if not out_path:
            cache = Path(os.getenv("NLLC_CACHE_DIR", "cache"))
            cache.mkdir(parents=True, exist_ok=True)
            out_path = str(cache / "nllc.nllt")
        config = TrainConfig(
            dataset_dir=dataset,
            steps=steps,
            patch_size=patch_size,
            seed=seed,
            batch_size=batch_size,
            augment=augment,
        )
        checkpoint = train(config, resume_from=resume, metrics_csv=csv_path,
                           checkpoint_path=out_path)
        last = checkpoint.step
        self.out(f"output={out_path}")
        self.out(f"steps={last}")
        self.out(f"config_hash={checkpoint.config_hash}")
        return 0

    async def rate_curve(self, corpus: str, weights: Optional[str], csv_path: Optional[str]) -> int:
        images = load_corpus(corpus)
        codec = NearLosslessCodec(self._model(weights))
        rows = await run_rate_curve(codec, images)
        if csv_path:
            write_rate_csv(rows, csv_path)
            self.out(f"output={csv_path}")
        self.out(f"rows={len(rows)}")
        for row in rows:
            self.out(",".join(row.as_csv()))
        return 0

    def selftest(self, weights: Optional[str]) -> int:
        path = weights or os.getenv("NLLC_WEIGHTS")
        model = load_weights(path) if path else None
        return 0 if run_selftest(model, out=self.out) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nllc",
        description="NLLC - near-lossless image codec with a per-subpixel error bound",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  nllc encode photo.ppm --out photo.nllc --tau 2 --weights model.nllt
  nllc decode photo.nllc --out photo_decoded.ppm --weights model.nllt
  nllc verify photo.ppm photo_decoded.ppm --tau 2
  nllc train --dataset images/ --out model.nllt --steps 2000 --csv metrics.csv
  nllc rate-curve corpus/ --weights model.nllt --csv rates.csv
  nllc selftest
        """
    )
    subparsers = parser.add_subparsers(dest="command", help="Commands")
    taus = list(range(MAX_TAU + 1))

    enc = subparsers.add_parser("encode", help="Compress an image")
    enc.add_argument("input", help="P6 PPM or 8-bit RGB PNG")
    enc.add_argument("--out", "-o", required=True, help="Output container path")
    enc.add_argument("--tau", type=int, choices=taus, default=0, help="Error bound (0 = lossless)")
    enc.add_argument("--weights", "-w", help="Weights or checkpoint file (default $NLLC_WEIGHTS)")
    enc.add_argument("--no-bias-correction", action="store_true",
                     help="Use the plain model on quantized context")

    dec = subparsers.add_parser("decode", help="Decompress a container to P6 PPM")
    dec.add_argument("input", help="Container path")
    dec.add_argument("--out", "-o", required=True, help="Output PPM path")
    dec.add_argument("--weights", "-w", help="Weights or checkpoint file (default $NLLC_WEIGHTS)")

    ver = subparsers.add_parser("verify", help="Check the error bound between two images")
    ver.add_argument("original")
    ver.add_argument("decoded")
    ver.add_argument("--tau", type=int, choices=taus, default=0)

    tr = subparsers.add_parser("train", help="Train the residual entropy model")
    tr.add_argument("--dataset", required=True, help="Directory of training images")
    tr.add_argument("--out", "-o", help="Checkpoint path (default $NLLC_CACHE_DIR/nllc.nllt)")
    tr.add_argument("--steps", type=int, default=2000)
    tr.add_argument("--patch-size", type=int, default=32)
    tr.add_argument("--batch-size", type=int, default=16)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--resume", help="Checkpoint to continue from")
    tr.add_argument("--csv", help="Metrics CSV path")
    tr.add_argument("--no-augment", action="store_true", help="Disable downscale augmentation")

    rc = subparsers.add_parser("rate-curve", help="Rates for tau 0..5 over a corpus")
    rc.add_argument("corpus", help="Directory of images")
    rc.add_argument("--weights", "-w", help="Weights or checkpoint file (default $NLLC_WEIGHTS)")
    rc.add_argument("--csv", help="Output CSV path")

    st = subparsers.add_parser("selftest", help="Run embedded property suites")
    st.add_argument("--weights", "-w", help="Run model suites on these weights")

    return parser


async def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    logging.basicConfig(
        level=os.getenv("NLLC_LOG_LEVEL", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    if os.getenv("WANDB_API_KEY"):
        init_tracing()

    cli = NLLCCLI()
    try:
        if args.command == "encode":
            return cli.encode(args.input, args.out, args.tau, args.weights,
                              use_bias_correction=not args.no_bias_correction)
        elif args.command == "decode":
            return cli.decode(args.input, args.out, args.weights)
        elif args.command == "verify":
            return cli.verify(args.original, args.decoded, args.tau)
        elif args.command == "train":
            return cli.train(args.dataset, args.out, args.steps, args.patch_size, args.seed,
                             args.batch_size, args.resume, args.csv,
                             augment=not args.no_augment)
        elif args.command == "rate-curve":
            return await cli.rate_curve(args.corpus, args.weights, args.csv)
        elif args.command == "selftest":
            return cli.selftest(args.weights)
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return 1
    except (NLLCError, ValueError, OSError) as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def run() -> None:
    sys.exit(asyncio.run(main()))


if __name__ == "__main__":
    run()
