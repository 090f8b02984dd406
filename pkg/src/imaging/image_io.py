"""
RGB image I/O and patch extraction

Images are held as uint8 arrays of shape (H, W, 3). Files are read as binary
PPM (P6, maxval 255) or 8-bit RGB PNG, and always written as canonical P6.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from ..errors import ImageFormatError, PatchBoundsError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
IMAGE_SUFFIXES = (".ppm", ".png")

MIN_SCALE = 0.6
MAX_SCALE = 1.0


@dataclass(eq=False)
class Image:
    """8-bit RGB image, row-major with interleaved channels"""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"Image data must have shape (H, W, 3), got {data.shape}")
        if data.dtype != np.uint8:
            if np.any(data < 0) or np.any(data > 255):
                raise ValueError("Image samples must lie in [0, 255]")
            data = data.astype(np.uint8)
        self.data = np.ascontiguousarray(data)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return 3

    @property
    def num_subpixels(self) -> int:
        return self.width * self.height * 3

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"Image(width={self.width}, height={self.height})"


@dataclass(frozen=True)
class PatchSpec:
    """Square patch anchored at (row, col)"""
    row: int
    col: int
    size: int


def _read_header_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    """Read one whitespace-delimited header token, skipping # comments"""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("malformed header: unexpected end of file")
    return buf[start:pos], pos


def _parse_ppm(buf: bytes) -> Image:
    magic = buf[:2]
    if magic in (b"P5", b"P2", b"P1", b"P4"):
        raise ImageFormatError(f"non-RGB image: {magic.decode()} is not a colour format")
    if magic != b"P6":
        raise ImageFormatError("malformed header: missing P6 magic")

    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(buf, pos)
        if not token.isdigit():
            raise ImageFormatError(f"malformed header: bad field {token!r}")
        fields.append(int(token))
    width, height, maxval = fields

    if maxval != 255:
        raise ImageFormatError(f"bit depth != 8: maxval {maxval}")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"malformed header: dimensions {width}x{height}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("malformed header: missing separator before raster")
    pos += 1

    expected = width * height * 3
    raster = buf[pos:pos + expected]
    if len(raster) != expected:
        raise ImageFormatError(
            f"malformed header: raster has {len(raster)} bytes, expected {expected}"
        )
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return Image(data.copy())


def _parse_png(path: Path, buf: bytes) -> Image:
    # IHDR: bit depth at byte 24, colour type at byte 25
    if len(buf) < 26 or buf[12:16] != b"IHDR":
        raise ImageFormatError("malformed header: missing PNG IHDR chunk")
    if buf[24] != 8:
        raise ImageFormatError(f"bit depth != 8: PNG bit depth {buf[24]}")
    try:
        with PILImage.open(path) as pil:
            mode = pil.mode
            if mode.startswith("I") or mode.endswith("16") or mode == "F":
                raise ImageFormatError(f"bit depth != 8: PNG mode {mode}")
            if mode != "RGB":
                raise ImageFormatError(f"non-RGB image: PNG mode {mode}")
            pil.load()
            data = np.asarray(pil, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise ImageFormatError(f"malformed header: {e}") from e
    return Image(data.copy())


def load_image(path: PathLike) -> Image:
    """Load a P6 PPM or 8-bit RGB PNG

    Args:
        path: File to read

    Returns:
        The decoded image

    Raises:
        FileNotFoundError: path does not exist
        ImageFormatError: malformed header, wrong bit depth, or not RGB
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image not found: {path}")
    buf = path.read_bytes()
    img = _parse_png(path, buf) if buf.startswith(PNG_SIGNATURE) else _parse_ppm(buf)
    logger.debug(f"Loaded {path} ({img.width}x{img.height})")
    return img


def save_image(img: Image, path: PathLike) -> None:
    """Write `img` as canonical binary PPM"""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.data.tobytes())


def crop(img: Image, spec: PatchSpec) -> Image:
    """Cut a square patch out of `img`"""
    if spec.size <= 0:
        raise PatchBoundsError(f"patch size must be positive, got {spec.size}")
    if (
        spec.row < 0
        or spec.col < 0
        or spec.row + spec.size > img.height
        or spec.col + spec.size > img.width
    ):
        raise PatchBoundsError(
            f"patch {spec} does not fit in {img.width}x{img.height} image"
        )
    data = img.data[spec.row:spec.row + spec.size, spec.col:spec.col + spec.size]
    return Image(data.copy())


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows are Catmull-Rom weights over clamped source taps"""
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    centres = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(centres).astype(np.int64)
    for offset in range(-1, 3):
        taps = base + offset
        w = _cubic_kernel(centres - taps)
        np.add.at(weights, (np.arange(n_out), np.clip(taps, 0, n_in - 1)), w)
    return weights


def downscale_bicubic(img: Image, factor: float) -> Image:
    """Downscale by `factor` with a Catmull-Rom bicubic filter

    Args:
        img: Source image
        factor: Scale in [0.6, 1.0]

    Returns:
        Image with dims round-half-up(dim * factor)
    """
    if not (MIN_SCALE <= factor <= MAX_SCALE):
        raise ValueError(f"downscale factor must be in [{MIN_SCALE}, {MAX_SCALE}], got {factor}")
    if factor == 1.0:
        return Image(img.data.copy())

    out_h = max(1, int(np.floor(img.height * factor + 0.5)))
    out_w = max(1, int(np.floor(img.width * factor + 0.5)))
    wy = _resample_matrix(img.height, out_h)
    wx = _resample_matrix(img.width, out_w)

    src = img.data.astype(np.float64)
    out = np.einsum("ih,hwc,jw->ijc", wy, src, wx)
    out = np.clip(np.floor(out + 0.5), 0, 255)
    return Image(out.astype(np.uint8))


def random_patch(
    img: Image,
    size: int,
    rng: np.random.Generator,
    scale_range: Tuple[float, float] = (MIN_SCALE, MAX_SCALE),
) -> Image:
    """Draw a (possibly downscaled) random square patch

    Exactly three values are drawn from `rng` per call so that the stream
    position does not depend on `scale_range`.
    """
    lo, hi = scale_range
    factor = float(lo + (hi - lo) * rng.random())
    u_row, u_col = rng.random(2)

    # smaller images fall back to the largest factor that still fits the patch
    need = size / min(img.height, img.width)
    if need > 1.0:
        raise PatchBoundsError(f"{img!r} is smaller than patch size {size}")
    factor = max(factor, min(MAX_SCALE, need + 1e-9))

    scaled = downscale_bicubic(img, factor) if factor < MAX_SCALE else img
    if scaled.height < size or scaled.width < size:
        scaled = img
    row = int(u_row * (scaled.height - size + 1))
    col = int(u_col * (scaled.width - size + 1))
    return crop(scaled, PatchSpec(row, col, size))


def list_images(directory: PathLike) -> List[Path]:
    """Sorted list of .ppm/.png files in `directory`"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Dataset directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
