"""Ridge map construction: normalize, segment, orientation, frequency,
Gabor filtering, binarization and thinning.

Every stage is polarity-equivariant: feeding ``255 - I`` instead of ``I``
leaves the mask, orientation and frequency maps unchanged and negates the
Gabor response, so the binary ridge map of an inverted image is the
complement of the original within the mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage
from scipy.signal import find_peaks
from skimage.morphology import thin

from .imaging import GrayImage

DEFAULT_BLOCK = 16
DEFAULT_TARGET_MEAN = 128.0
DEFAULT_TARGET_VAR = 2000.0
PERIOD_BAND = (3.0, 25.0)
COHERENCE_FLOOR = 0.2
N_GABOR_ANGLES = 16


@dataclass(frozen=True)
class OrientationField:
    """Block-wise undirected ridge orientation in ``[0, pi)`` and coherence in ``[0, 1]``.

    ``angles[i, j]`` describes the block whose top-left pixel is
    ``(i * block_size, j * block_size)`` (row, column).
    """

    block_size: int
    angles: np.ndarray
    coherence: np.ndarray

    @property
    def shape(self):
        return self.angles.shape

    def block_centers(self):
        """Pixel coordinates ``(xs, ys)`` of block centers, each of grid shape."""
        rows, cols = self.angles.shape
        ys, xs = np.mgrid[0:rows, 0:cols]
        return (xs + 0.5) * self.block_size, (ys + 0.5) * self.block_size

    def to_csv_rows(self):
        rows, cols = self.angles.shape
        for by in range(rows):
            for bx in range(cols):
                yield bx, by, float(self.angles[by, bx]), float(self.coherence[by, bx])


@dataclass(frozen=True)
class EnhanceParams:
    block_size: int = DEFAULT_BLOCK
    target_mean: float = DEFAULT_TARGET_MEAN
    target_var: float = DEFAULT_TARGET_VAR
    var_threshold: float = 0.1 * DEFAULT_TARGET_VAR
    freq_window: int = 2 * DEFAULT_BLOCK
    sigma_factor: float = 0.5


@dataclass
class RidgeMaps:
    """Everything the minutiae detector needs from one image."""

    mask: np.ndarray
    binary: np.ndarray
    skeleton: np.ndarray
    frequency: np.ndarray | None = None
    orientation: OrientationField | None = None
    response: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.skeleton.shape


def _grid_shape(shape, block_size):
    h, w = shape
    return -(-h // block_size), -(-w // block_size)


def _block_reduce(a: np.ndarray, block_size: int, func=np.mean) -> np.ndarray:
    h, w = a.shape
    gh, gw = _grid_shape(a.shape, block_size)
    out = np.empty((gh, gw), dtype=np.float64)
    for i in range(gh):
        for j in range(gw):
            out[i, j] = func(a[i * block_size:(i + 1) * block_size,
                               j * block_size:(j + 1) * block_size])
    return out


def expand_blocks(grid: np.ndarray, block_size: int, shape) -> np.ndarray:
    """Nearest-block upsampling of a block grid to pixel resolution."""
    big = np.repeat(np.repeat(grid, block_size, axis=0), block_size, axis=1)
    return big[:shape[0], :shape[1]]


def block_mask(mask: np.ndarray, block_size: int) -> np.ndarray:
    """Block-level foreground: a block is foreground when most of its pixels are."""
    return _block_reduce(mask.astype(np.float64), block_size) > 0.5


def normalize(img: GrayImage, target_mean: float = DEFAULT_TARGET_MEAN,
              target_var: float = DEFAULT_TARGET_VAR) -> GrayImage:
    """Global mean/variance normalization."""
    plane = img.plane
    mean = plane.mean()
    var = plane.var()
    if var <= 1e-12:
        raise ValueError("cannot normalize a constant image")
    out = target_mean + (plane - mean) * np.sqrt(target_var / var)
    return GrayImage(np.clip(out, 0.0, 255.0), provenance=img.provenance)


def segment(img: GrayImage, block_size: int = DEFAULT_BLOCK,
            var_threshold: float = 0.1 * DEFAULT_TARGET_VAR) -> np.ndarray:
    """Pixel-resolution foreground mask from block variance.

    The block grid is closed and then opened with a 3x3 element (edge-padded,
    so a full-frame pattern keeps its border blocks).
    """
    if block_size < 4:
        raise ValueError("block_size must be >= 4")
    var = _block_reduce(img.plane, block_size, np.var)
    fg = var > var_threshold
    se = np.ones((3, 3), bool)
    padded = np.pad(fg, 2, mode="edge")
    padded = ndimage.binary_closing(padded, structure=se)
    padded = ndimage.binary_opening(padded, structure=se)
    fg = padded[2:-2, 2:-2]
    return expand_blocks(fg, block_size, img.plane.shape).astype(bool)


def _doubled(angles, weights=None):
    c, s = np.cos(2 * angles), np.sin(2 * angles)
    if weights is not None:
        c, s = c * weights, s * weights
    return c, s


def _undoubled(c, s):
    return np.mod(0.5 * np.arctan2(s, c), np.pi)


def estimate_orientation(img: GrayImage, block_size: int = DEFAULT_BLOCK,
                         smooth: bool = True) -> OrientationField:
    """Least-squares ridge orientation per block from the gradient structure tensor.

    Blocks below the coherence floor take the orientation of the nearest
    coherent block; the doubled-angle field is then Gaussian-smoothed over
    the whole grid in one pass.
    """
    if block_size < 8:
        raise ValueError("block_size must be >= 8")
    plane = img.plane
    gx = ndimage.gaussian_filter(plane, 1.0, order=(0, 1))
    gy = ndimage.gaussian_filter(plane, 1.0, order=(1, 0))
    # Tensor window: Gaussian centered on each block, one block wide.
    sig = block_size / 2.0
    gxx = ndimage.gaussian_filter(gx * gx, sig)
    gyy = ndimage.gaussian_filter(gy * gy, sig)
    gxy = ndimage.gaussian_filter(gx * gy, sig)
    gh, gw = _grid_shape(plane.shape, block_size)
    cy = np.minimum((np.arange(gh) + 0.5) * block_size, plane.shape[0] - 1).astype(int)
    cx = np.minimum((np.arange(gw) + 0.5) * block_size, plane.shape[1] - 1).astype(int)
    sxx = gxx[np.ix_(cy, cx)]
    syy = gyy[np.ix_(cy, cx)]
    sxy = gxy[np.ix_(cy, cx)]
    energy = sxx + syy
    gap = np.sqrt((sxx - syy) ** 2 + 4 * sxy ** 2)
    flat = energy <= 1e-9 * max(1.0, float(energy.max(initial=0.0)))
    coherence = np.where(flat, 0.0, gap / np.where(flat, 1.0, energy))
    coherence = np.clip(coherence, 0.0, 1.0)
    # Dominant gradient direction is normal to the ridges.
    grad_dir = 0.5 * np.arctan2(2 * sxy, sxx - syy)
    angles = np.mod(grad_dir + np.pi / 2, np.pi)
    angles = np.where(flat, 0.0, angles)

    if smooth:
        angles = _regularize(angles, coherence)
    return OrientationField(block_size, angles, coherence)


def _regularize(angles, coherence):
    good = coherence >= COHERENCE_FLOOR
    if not good.any():
        return np.zeros_like(angles)
    if not good.all():
        _, (iy, ix) = ndimage.distance_transform_edt(~good, return_indices=True)
        angles = angles[iy, ix]
    c, s = _doubled(angles)
    c = ndimage.gaussian_filter(c, 1.0, mode="nearest")
    s = ndimage.gaussian_filter(s, 1.0, mode="nearest")
    return _undoubled(c, s)


def _refined_extrema(sig, sign, prominence):
    """Sub-sample positions of prominent local maxima of ``sign * sig``."""
    v = sign * sig
    idx, _ = find_peaks(v, prominence=prominence)
    out = []
    for i in idx:
        a, b, c = v[i - 1], v[i], v[i + 1]
        den = a - 2 * b + c
        off = 0.5 * (a - c) / den if den != 0 else 0.0
        out.append(i + off)
    return np.asarray(out)


def _mean_spacing(pos):
    if len(pos) < 2:
        return None
    return (pos[-1] - pos[0]) / (len(pos) - 1)


def estimate_frequency(img: GrayImage, field: OrientationField,
                       window: int = 2 * DEFAULT_BLOCK) -> np.ndarray:
    """Ridge frequency (cycles/pixel) per block from the oriented x-signature.

    The signature is sampled along the ridge normal over ``window`` pixels,
    averaged along the ridge over one block and lightly smoothed; only
    extrema with prominence above 30% of its range count. Peak spacing uses both
    maxima and minima so the estimate is unchanged by photometric inversion.
    Blocks whose period falls outside [3, 25] px get 0.
    """
    plane = img.plane
    bs = field.block_size
    gh, gw = field.angles.shape
    xs, ys = field.block_centers()
    normal = field.angles + np.pi / 2
    u = np.arange(window) - (window - 1) / 2.0
    v = np.arange(bs) - (bs - 1) / 2.0
    nx, ny = np.cos(normal)[..., None, None], np.sin(normal)[..., None, None]
    tx, ty = np.cos(field.angles)[..., None, None], np.sin(field.angles)[..., None, None]
    px = xs[..., None, None] + u[None, None, :, None] * nx + v[None, None, None, :] * tx
    py = ys[..., None, None] + u[None, None, :, None] * ny + v[None, None, None, :] * ty
    samples = ndimage.map_coordinates(plane, [py.ravel() - 0.5, px.ravel() - 0.5],
                                      order=1, mode="nearest")
    sig = samples.reshape(gh, gw, window, bs).mean(axis=3)
    freq = np.zeros((gh, gw))
    lo, hi = PERIOD_BAND
    for i in range(gh):
        for j in range(gw):
            s = ndimage.gaussian_filter1d(sig[i, j] - sig[i, j].mean(), 1.0)
            span = np.ptp(s)
            if span < 1e-6:
                continue
            spacings = [_mean_spacing(_refined_extrema(s, +1, 0.3 * span)),
                        _mean_spacing(_refined_extrema(s, -1, 0.3 * span))]
            spacings = [p for p in spacings if p is not None]
            if not spacings:
                continue
            period = float(np.mean(spacings))
            if lo <= period <= hi:
                freq[i, j] = 1.0 / period
    return freq


def gabor_kernel(theta: float, period: float, sigma_factor: float = 0.5) -> np.ndarray:
    """Even-symmetric, zero-DC Gabor kernel for ridges at orientation ``theta``."""
    sigma = sigma_factor * period
    half = int(np.ceil(3 * sigma))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    # Coordinate along the ridge normal.
    xn = -xx * np.sin(theta) + yy * np.cos(theta)
    env = np.exp(-(xx ** 2 + yy ** 2) / (2 * sigma ** 2))
    carrier = np.cos(2 * np.pi * xn / period)
    dc = (env * carrier).sum() / env.sum()
    return env * (carrier - dc)


def _pixel_orientation(field: OrientationField, shape) -> np.ndarray:
    c, s = _doubled(field.angles)
    h, w = shape
    # Bilinear interpolation of the doubled-angle field between block centers.
    ys = (np.arange(h) + 0.5) / field.block_size - 0.5
    xs = (np.arange(w) + 0.5) / field.block_size - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    ci = ndimage.map_coordinates(c, [yy, xx], order=1, mode="nearest")
    si = ndimage.map_coordinates(s, [yy, xx], order=1, mode="nearest")
    return _undoubled(ci, si)


def fill_frequency(freq: np.ndarray, bmask: np.ndarray, default: float = 1.0 / 9.0) -> np.ndarray:
    """Replace unreliable (zero) in-mask frequencies by the in-mask median."""
    valid = (freq > 0) & bmask
    fill = float(np.median(freq[valid])) if valid.any() else default
    out = np.where(bmask & (freq <= 0), fill, freq)
    return np.where(bmask, out, 0.0)


def gabor_enhance(img: GrayImage, field: OrientationField, freq: np.ndarray,
                  mask: np.ndarray, sigma_factor: float = 0.5) -> np.ndarray:
    """Zero-mean oriented Gabor response; pixels outside ``mask`` are 0.

    Orientation is interpolated per pixel and quantized to 16 directions;
    frequency is taken per block and quantized to quarter-pixel periods.
    """
    plane = img.plane
    shape = plane.shape
    bs = field.block_size
    bmask = block_mask(mask, bs)
    freq = fill_frequency(freq, bmask | (freq > 0))
    period_blocks = np.where(freq > 0, 1.0 / np.where(freq > 0, freq, 1.0), 0.0)
    period_px = expand_blocks(np.round(period_blocks * 4) / 4, bs, shape)
    theta_px = _pixel_orientation(field, shape)
    abin = np.round(theta_px / (np.pi / N_GABOR_ANGLES)).astype(int) % N_GABOR_ANGLES
    response = np.zeros(shape)
    active = mask & (period_px > 0)
    centered = plane - plane.mean()
    for period in np.unique(period_px[active]):
        sel_p = active & (period_px == period)
        for a in np.unique(abin[sel_p]):
            sel = sel_p & (abin == a)
            k = gabor_kernel(a * np.pi / N_GABOR_ANGLES, float(period), sigma_factor)
            filtered = cv2.filter2D(centered, cv2.CV_64F, k, borderType=cv2.BORDER_REFLECT)
            response[sel] = filtered[sel]
    return response


_NEIGHBOR_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _ring_components(members, adjacent):
    """Connected components of ring positions under the given adjacency."""
    comps, seen = [], set()
    for m in members:
        if m in seen:
            continue
        comp, stack = set(), [m]
        while stack:
            q = stack.pop()
            if q in comp:
                continue
            comp.add(q)
            stack.extend(r for r in members if r not in comp and adjacent(q, r))
        seen |= comp
        comps.append(comp)
    return comps


def _is_simple(code: int) -> bool:
    # Simple point: one 8-component of foreground in the ring and one
    # 4-component of background touching a 4-neighbor of the center.
    fg = [i for i in range(8) if (code >> i) & 1]
    bg = [i for i in range(8) if not (code >> i) & 1]
    if not fg or not bg:
        return False

    def adj8(a, b):
        (ya, xa), (yb, xb) = _NEIGHBOR_OFFSETS[a], _NEIGHBOR_OFFSETS[b]
        return max(abs(ya - yb), abs(xa - xb)) == 1

    def adj4(a, b):
        (ya, xa), (yb, xb) = _NEIGHBOR_OFFSETS[a], _NEIGHBOR_OFFSETS[b]
        return abs(ya - yb) + abs(xa - xb) == 1

    if len(_ring_components(fg, adj8)) != 1:
        return False
    touching = [c for c in _ring_components(bg, adj4) if c & {0, 2, 4, 6}]
    return len(touching) == 1


SIMPLE_LUT = np.array([_is_simple(c) for c in range(256)], dtype=bool)
NEIGHBOR_COUNT_LUT = np.array([bin(c).count("1") for c in range(256)], dtype=np.int8)


def neighbor_codes(img: np.ndarray) -> np.ndarray:
    """8-bit code of each pixel's ring (bit i set if neighbor i is foreground)."""
    b = np.pad(img.astype(np.uint8), 1)
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.int32)
    for i, (dy, dx) in enumerate(_NEIGHBOR_OFFSETS):
        code |= b[1 + dy:1 + dy + h, 1 + dx:1 + dx + w].astype(np.int32) << i
    return code


def _prune_redundant(skel: np.ndarray) -> np.ndarray:
    """Remove simple non-end pixels in raster order, leaving a minimal 8-connected skeleton."""
    skel = skel.copy()
    h, w = skel.shape
    padded = np.pad(skel, 1)
    changed = True
    while changed:
        changed = False
        for y, x in np.argwhere(padded[1:-1, 1:-1]):
            code = 0
            for i, (dy, dx) in enumerate(_NEIGHBOR_OFFSETS):
                if padded[y + 1 + dy, x + 1 + dx]:
                    code |= 1 << i
            if NEIGHBOR_COUNT_LUT[code] >= 2 and SIMPLE_LUT[code]:
                padded[y + 1, x + 1] = False
                changed = True
    return padded[1:-1, 1:-1]


def thin_binary(binary: np.ndarray) -> np.ndarray:
    """Two-subiteration thinning followed by a deterministic redundancy pass."""
    return _prune_redundant(thin(binary.astype(bool)))


def binarize_and_thin(response: np.ndarray, mask: np.ndarray) -> RidgeMaps:
    """``binary = response > 0`` inside the mask, plus its 1-pixel skeleton."""
    binary = (np.asarray(response) > 0) & mask
    skeleton = thin_binary(binary)
    return RidgeMaps(mask=np.asarray(mask, bool), binary=binary, skeleton=skeleton)


def ridge_maps(img: GrayImage, params: EnhanceParams | None = None) -> RidgeMaps:
    """Full enhancement pipeline with dark pixels treated as ridges."""
    p = params or EnhanceParams()
    norm = normalize(img, p.target_mean, p.target_var)
    mask = segment(norm, p.block_size, p.var_threshold)
    field = estimate_orientation(norm, p.block_size)
    freq = estimate_frequency(norm, field, p.freq_window)
    bmask = block_mask(mask, p.block_size)
    freq = np.where(bmask, freq, 0.0)
    response = gabor_enhance(norm, field, freq, mask, p.sigma_factor)
    # Positive response tracks bright pixels; ridges are the dark ones.
    maps = binarize_and_thin(-response, mask)
    maps.frequency = freq
    maps.orientation = field
    maps.response = -response
    return maps
