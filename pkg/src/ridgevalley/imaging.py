"""Color and grayscale finger images: loading, grayscale conversion, inversion,
area-averaged downsampling and export.

Pixel planes are kept as read-only ``float64`` arrays in ``[0, 255]``;
quantization to 8 bits happens only in :func:`save_image`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

ORDINARY_WEIGHTS = (0.3, 0.59, 0.11)
LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)
DEFAULT_GAMMA = 1.0 / 2.2

PROVENANCES = ("ordinary", "luma", "inverted-ordinary", "inverted-luma", "external",
               "inverted-external")


class ImageError(ValueError):
    """Raised for unreadable, malformed or out-of-range image data."""


# Gray planes live on a 2**-40 grid: every grid value in [0, 255] and its
# complement 255 - v are exact doubles, so inversion is an exact involution.
_GRID = float(2 ** 40)


def _snap(a: np.ndarray) -> np.ndarray:
    return np.round(a * _GRID) / _GRID


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ColorImage:
    """Three-plane RGB raster, shape ``(height, width, 3)``."""

    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageError(f"expected an (H, W, 3) array, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ImageError("zero-sized image")
        px = _frozen(px)
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 255.0:
            raise ImageError("channel values must lie in [0, 255]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def red(self) -> np.ndarray:
        return self.pixels[..., 0]

    @property
    def green(self) -> np.ndarray:
        return self.pixels[..., 1]

    @property
    def blue(self) -> np.ndarray:
        return self.pixels[..., 2]


@dataclass(frozen=True)
class GrayImage:
    """Single-plane intensity raster with a provenance tag."""

    plane: np.ndarray
    provenance: str = "external"

    def __post_init__(self):
        px = np.asarray(self.plane)
        if px.ndim != 2:
            raise ImageError(f"expected a 2-D array, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ImageError("zero-sized image")
        if self.provenance not in PROVENANCES:
            raise ImageError(f"unknown provenance {self.provenance!r}")
        px = _frozen(_snap(np.asarray(px, dtype=np.float64)))
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 255.0:
            raise ImageError("intensities must lie in [0, 255]")
        object.__setattr__(self, "plane", px)

    @property
    def height(self) -> int:
        return self.plane.shape[0]

    @property
    def width(self) -> int:
        return self.plane.shape[1]

    @property
    def is_inverted(self) -> bool:
        return self.provenance.startswith("inverted-")


@dataclass(frozen=True)
class GammaParams:
    """Encoding exponent applied to channel values normalized to [0, 1]."""

    exponent: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not np.isfinite(self.exponent) or self.exponent <= 0:
            raise ValueError(f"gamma exponent must be positive, got {self.exponent}")


def load_image(path) -> ColorImage | GrayImage:
    """Read a PNG, BMP, PGM or PPM file.

    Three-channel files give a :class:`ColorImage`; single-channel files a
    :class:`GrayImage` tagged ``external``.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "P", "1"):
                arr = np.asarray(im.convert("L"))
                kind = "gray"
            elif mode in ("I;16", "I;16B", "I", "F"):
                raise ImageError(f"unsupported bit depth (mode {mode}) in {path}")
            else:
                arr = np.asarray(im.convert("RGB"))
                kind = "color"
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if arr.size == 0:
        raise ImageError(f"zero-sized image: {path}")
    if kind == "gray":
        return GrayImage(arr, provenance="external")
    return ColorImage(arr)


def save_image(img: GrayImage | ColorImage | np.ndarray, path) -> Path:
    """Write an image, quantizing to 8 bits with round-half-away-from-zero.

    The format follows the file suffix (``.png``, ``.bmp``, ``.pgm``, ``.ppm``).
    """
    path = Path(path)
    if isinstance(img, GrayImage):
        data = img.plane
    elif isinstance(img, ColorImage):
        data = img.pixels
    else:
        data = np.asarray(img, dtype=np.float64)
    q = quantize(data)
    suffix = path.suffix.lower()
    if suffix not in (".png", ".bmp", ".pgm", ".ppm"):
        raise ImageError(f"unsupported output format {suffix!r}")
    if suffix == ".pgm" and q.ndim != 2:
        raise ImageError("PGM output needs a grayscale image")
    if suffix == ".ppm" and q.ndim != 3:
        raise ImageError("PPM output needs a color image")
    Image.fromarray(q).save(path)
    return path


def quantize(data: np.ndarray) -> np.ndarray:
    """Round half away from zero and clip to ``uint8``."""
    data = np.asarray(data, dtype=np.float64)
    rounded = np.sign(data) * np.floor(np.abs(data) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def to_gray_ordinary(img: ColorImage) -> GrayImage:
    """Weighted sum ``0.3 R + 0.59 G + 0.11 B`` of the linear channel values."""
    wr, wg, wb = ORDINARY_WEIGHTS
    plane = wr * img.red + wg * img.green + wb * img.blue
    return GrayImage(np.clip(plane, 0.0, 255.0), provenance="ordinary")


def gamma_encode(values: np.ndarray, gamma: GammaParams) -> np.ndarray:
    """``255 * (v / 255) ** exponent``, elementwise."""
    return 255.0 * np.power(np.asarray(values, dtype=np.float64) / 255.0, gamma.exponent)


def to_gray_luma(img: ColorImage, gamma: GammaParams | None = None) -> GrayImage:
    """Luma: ``0.2126 R' + 0.7152 G' + 0.0722 B'`` over gamma-encoded channels."""
    gamma = gamma or GammaParams()
    encoded = gamma_encode(img.pixels, gamma)
    wr, wg, wb = LUMA_WEIGHTS
    plane = wr * encoded[..., 0] + wg * encoded[..., 1] + wb * encoded[..., 2]
    return GrayImage(np.clip(plane, 0.0, 255.0), provenance="luma")


def invert(img: GrayImage) -> GrayImage:
    """Photometric complement ``255 - v``.

    Inverting twice restores both the plane and the original provenance tag.
    """
    if img.is_inverted:
        tag = img.provenance[len("inverted-"):]
    else:
        tag = "inverted-" + img.provenance
    return GrayImage(255.0 - img.plane, provenance=tag)


def _area_weights(n_src: int, n_dst: int) -> np.ndarray:
    # Row i holds the overlap of destination cell i with each source pixel.
    edges = np.arange(n_dst + 1) * (n_src / n_dst)
    lo = np.arange(n_src)
    hi = lo + 1
    overlap = np.minimum(edges[1:, None], hi[None, :]) - np.maximum(edges[:-1, None], lo[None, :])
    overlap = np.clip(overlap, 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def downsample(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Area-averaged resize to ``(target_w, target_h)``; non-integer factors allowed."""
    target_w, target_h = int(target_w), int(target_h)
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be positive")
    if target_w > img.width or target_h > img.height:
        raise ValueError(
            f"upsampling not supported: {img.width}x{img.height} -> {target_w}x{target_h}")
    wy = _area_weights(img.height, target_h)
    wx = _area_weights(img.width, target_w)
    plane = wy @ img.plane @ wx.T
    return GrayImage(np.clip(plane, 0.0, 255.0), provenance=img.provenance)


def downsample_color(img: ColorImage, target_w: int, target_h: int) -> ColorImage:
    """Area-averaged resize applied to each channel of a color image."""
    if target_w > img.width or target_h > img.height:
        raise ValueError("upsampling not supported")
    wy = _area_weights(img.height, int(target_h))
    wx = _area_weights(img.width, int(target_w))
    planes = [wy @ img.pixels[..., c] @ wx.T for c in range(3)]
    return ColorImage(np.clip(np.stack(planes, axis=-1), 0.0, 255.0), bit_depth=img.bit_depth)


def to_gray(img: ColorImage | GrayImage, method: str = "ordinary",
            gamma: float = DEFAULT_GAMMA) -> GrayImage:
    """Dispatch to the ordinary or Luma conversion; grayscale input passes through."""
    if isinstance(img, GrayImage):
        return img
    if method == "ordinary":
        return to_gray_ordinary(img)
    if method == "luma":
        return to_gray_luma(img, GammaParams(gamma))
    raise ValueError(f"unknown grayscale method {method!r}")
