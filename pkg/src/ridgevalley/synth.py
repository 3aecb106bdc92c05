"""Synthetic fingerprints with known minutiae and singular points.

A finger is a phase field: a smooth "distance-like" field ``F`` whose level
sets follow the ridge flow of the requested pattern class, plus one
spiral phase term per injected minutia,

    phase(x, y) = 2*pi*F(x, y)/period + sum_i s_i * atan2(y - y_i, x - x_i)

and the height map is ``cos(phase)``. Each spiral term adds or removes one
ridge line; whether the crest set sees a ridge ending or a bifurcation at
the site depends on the background phase there, which the generator tunes
by nudging the site along the phase gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import cv2
import numpy as np

from .features import Minutia, Singularity
from .imaging import ColorImage, GrayImage

KINDS = ("uniform", "arch", "core", "delta", "whorl")
TWO_PI = 2 * np.pi


@dataclass
class GroundTruth:
    minutiae: list
    singularities: list
    orientation: Callable = field(repr=False)
    period: float
    width: int
    height: int
    kind: str = "uniform"
    spirals: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "period": self.period,
            "width": self.width,
            "height": self.height,
            "minutiae": [
                {"x": m.x, "y": m.y, "theta": m.theta, "kind": m.kind} for m in self.minutiae
            ],
            "singularities": [
                {"x": s.x, "y": s.y, "kind": s.kind} for s in self.singularities
            ],
        }


@dataclass(frozen=True)
class IlluminationParams:
    azimuth: float = np.pi / 4
    elevation: float = np.pi / 4
    ambient: float = 0.2
    ridge_height: float = 1.5

    def __post_init__(self):
        if not (0 < self.elevation <= np.pi / 2):
            raise ValueError("elevation must lie in (0, pi/2]")
        if not (0 <= self.ambient <= 1):
            raise ValueError("ambient must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Base fields. Each returns (F, singularities) with F(x, y) vectorized and
# |grad F| close to 1 away from singular points.


def _softmin(values, tau):
    v = np.stack(values)
    m = v.min(axis=0)
    return m - tau * np.log(np.exp(-(v - m) / tau).sum(axis=0))


def _dist_to_ray(x, y, ox, oy, ang):
    dx, dy = np.cos(ang), np.sin(ang)
    rx, ry = x - ox, y - oy
    t = np.maximum(rx * dx + ry * dy, 0.0)
    return np.hypot(rx - t * dx, ry - t * dy)


def _dist_to_segment(x, y, ax, ay, bx, by):
    vx, vy = bx - ax, by - ay
    t = np.clip(((x - ax) * vx + (y - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0)
    return np.hypot(x - ax - t * vx, y - ay - t * vy)


def _base_field(kind, width, height, period, rng):
    cx = width / 2 + rng.uniform(-0.1, 0.1) * width
    cy = height / 2 + rng.uniform(-0.1, 0.1) * height
    if kind == "uniform":
        ang = rng.uniform(0, np.pi)
        nx, ny = -np.sin(ang), np.cos(ang)
        return (lambda x, y: (x - cx) * nx + (y - cy) * ny), []
    if kind == "arch":
        tilt = rng.uniform(-0.3, 0.3)
        amp = rng.uniform(0.15, 0.25) * height
        w = 0.25 * width
        c, s = np.cos(tilt), np.sin(tilt)

        def arch(x, y):
            u = (x - cx) * c + (y - cy) * s
            v = -(x - cx) * s + (y - cy) * c
            return v + amp * np.exp(-u * u / (2 * w * w))
        return arch, []
    if kind == "core":
        # Loop: ridges run parallel to a ray below the core and recurve around it.
        ang = np.pi / 2 + rng.uniform(-0.3, 0.3)
        cy = height * rng.uniform(0.35, 0.45)
        return ((lambda x, y: _dist_to_ray(x, y, cx, cy, ang)),
                [Singularity(float(cx), float(cy), "core")])
    if kind == "delta":
        rot = rng.uniform(0, TWO_PI / 3)
        angs = [rot + k * TWO_PI / 3 for k in range(3)]
        tau = 0.3 * period
        return ((lambda x, y: _softmin([_dist_to_ray(x, y, cx, cy, a) for a in angs], tau)),
                [Singularity(float(cx), float(cy), "delta")])
    if kind == "whorl":
        ang = rng.uniform(0, np.pi)
        half = rng.uniform(1.5, 2.5) * period
        ax, ay = cx - half * np.cos(ang), cy - half * np.sin(ang)
        bx, by = cx + half * np.cos(ang), cy + half * np.sin(ang)
        return ((lambda x, y: _dist_to_segment(x, y, ax, ay, bx, by)),
                [Singularity(float(ax), float(ay), "core"),
                 Singularity(float(bx), float(by), "core")])
    raise ValueError(f"unknown pattern kind {kind!r}; expected one of {KINDS}")


def _grad(f, x, y, h=1e-3):
    gx = (f(x + h, y) - f(x - h, y)) / (2 * h)
    gy = (f(x, y + h) - f(x, y - h)) / (2 * h)
    return gx, gy


def _wrap(a):
    return (a + np.pi) % TWO_PI - np.pi


class _PhaseModel:
    def __init__(self, base, period):
        self.base = base
        self.period = period
        self.sites = []  # [x, y, s]

    def phase(self, x, y, skip=None):
        ph = TWO_PI * self.base(x, y) / self.period
        for k, (sx, sy, s) in enumerate(self.sites):
            if k != skip:
                ph = ph + s * np.arctan2(y - sy, x - sx)
        return ph

    def phase_grad(self, x, y, skip=None):
        gx, gy = _grad(self.base, x, y)
        gx, gy = TWO_PI * gx / self.period, TWO_PI * gy / self.period
        for k, (sx, sy, s) in enumerate(self.sites):
            if k != skip:
                dx, dy = x - sx, y - sy
                r2 = dx * dx + dy * dy
                gx += s * -dy / r2
                gy += s * dx / r2
        return gx, gy

    def extra_side(self, k):
        """Angle of the side on which site ``k`` adds a fringe."""
        sx, sy, s = self.sites[k]
        gx, gy = self.phase_grad(sx, sy, skip=k)
        # Phase gradient rotated by -90 degrees; flipped for negative winding.
        ang = np.arctan2(-gx, gy)
        return ang if s > 0 else ang + np.pi


def _smooth_here(base, x, y, period):
    """True when the base field has a consistent gradient around (x, y)."""
    g0 = np.array(_grad(base, x, y))
    n0 = np.hypot(*g0)
    if n0 < 0.5:
        return False
    for a in np.linspace(0, TWO_PI, 12, endpoint=False):
        for r in (0.75 * period, 1.5 * period):
            g = np.array(_grad(base, x + r * np.cos(a), y + r * np.sin(a)))
            n = np.hypot(*g)
            if n < 0.5 or g @ g0 / (n * n0) < 0.8:
                return False
    return True


def generate_ridge_pattern(kind: str = "uniform", period: float = 9.0,
                           dims=(256, 256), seed: int = 0,
                           n_minutiae: int | None = None):
    """Height map ``cos(phase)`` of shape ``(height, width)`` and its ground truth.

    ``dims`` is ``(width, height)``. ``n_minutiae`` defaults to one site per
    ~(6*period)^2 pixels; pass 0 for a clean pattern.
    """
    width, height = int(dims[0]), int(dims[1])
    if not (6 <= period <= 12):
        raise ValueError("period must lie in [6, 12] pixels")
    if width < 128 or height < 128:
        raise ValueError("dims must be at least 128x128")
    rng = np.random.default_rng(seed)
    base, singular = _base_field(kind, width, height, period, rng)
    if n_minutiae is None:
        n_minutiae = int(round(width * height / (6 * period) ** 2))
    model = _PhaseModel(base, period)

    margin = 2.5 * period
    min_sep = 3.5 * period
    attempts = 0
    targets = []
    while len(model.sites) < n_minutiae and attempts < 200 * max(n_minutiae, 1):
        attempts += 1
        x = rng.uniform(margin, width - margin)
        y = rng.uniform(margin, height - margin)
        if any(np.hypot(x - sx, y - sy) < min_sep for sx, sy, _ in model.sites):
            continue
        if any(np.hypot(x - s.x, y - s.y) < 4 * period for s in singular):
            continue
        if not _smooth_here(base, x, y, period):
            continue
        s = 1 if rng.random() < 0.5 else -1
        model.sites.append([x, y, s])
        targets.append("ending" if rng.random() < 0.5 else "bifurcation")

    # Nudge each site along the local phase gradient so the crest ray points
    # toward (ending) or away from (bifurcation) the extra-fringe side.
    for _ in range(6):
        for k, (sx, sy, s) in enumerate(model.sites):
            e = model.extra_side(k)
            crest = e if targets[k] == "ending" else e + np.pi
            beta_target = -s * crest
            beta = model.phase(sx, sy, skip=k)
            gx, gy = model.phase_grad(sx, sy, skip=k)
            g2 = gx * gx + gy * gy
            step = _wrap(beta_target - beta)
            model.sites[k][0] = sx + step * gx / g2
            model.sites[k][1] = sy + step * gy / g2

    minutiae = []
    for k, (sx, sy, s) in enumerate(model.sites):
        theta = float(np.mod(model.extra_side(k), TWO_PI))
        minutiae.append(Minutia(float(sx), float(sy), theta, targets[k], 1.0))

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    heightmap = np.cos(model.phase(xx, yy))

    def orientation(x, y):
        gx, gy = _grad(base, np.asarray(x, float), np.asarray(y, float))
        return np.mod(np.arctan2(gy, gx) + np.pi / 2, np.pi)

    truth = GroundTruth(minutiae=minutiae, singularities=list(singular),
                        orientation=orientation, period=float(period),
                        width=width, height=height, kind=kind,
                        spirals=[tuple(s) for s in model.sites])
    return heightmap, truth


def render_contact(heightmap: np.ndarray) -> GrayImage:
    """Contact-style image: ridge crests dark, valley floors bright."""
    h = np.clip(np.asarray(heightmap, dtype=np.float64), -1.0, 1.0)
    return GrayImage(127.5 * (1.0 - h), provenance="external")


def render_contactless(heightmap: np.ndarray, lighting: IlluminationParams | None = None) -> GrayImage:
    """Lambertian shading of the ridge relief ``z = ridge_height * (h + 1) / 2``."""
    light = lighting or IlluminationParams()
    z = light.ridge_height * (np.asarray(heightmap, dtype=np.float64) + 1.0) / 2.0
    zy, zx = np.gradient(z)
    norm = np.sqrt(zx * zx + zy * zy + 1.0)
    ce = np.cos(light.elevation)
    lx, ly, lz = ce * np.cos(light.azimuth), ce * np.sin(light.azimuth), np.sin(light.elevation)
    lambert = np.maximum(0.0, (-zx * lx - zy * ly + lz) / norm)
    out = 255.0 * (light.ambient + (1.0 - light.ambient) * lambert)
    return GrayImage(np.clip(out, 0.0, 255.0), provenance="external")


def impression_transform(seed: int, shape, max_shift: float = 0.0,
                         max_rot: float = 0.0) -> np.ndarray:
    """The 2x3 forward affine map that :func:`perturb_impression` applies for ``seed``."""
    rng = np.random.default_rng(seed)
    dx, dy = rng.uniform(-max_shift, max_shift, size=2) if max_shift > 0 else (0.0, 0.0)
    rot = rng.uniform(-max_rot, max_rot) if max_rot > 0 else 0.0
    h, w = shape
    m = cv2.getRotationMatrix2D(((w - 1) / 2, (h - 1) / 2), float(np.degrees(rot)), 1.0)
    m[0, 2] += dx
    m[1, 2] += dy
    return m


def perturb_impression(img: GrayImage, seed: int, max_shift: float = 0.0,
                       max_rot: float = 0.0, noise_sigma: float = 0.0) -> GrayImage:
    """Random rigid motion (bilinear resampling) plus Gaussian noise, clamped to [0, 255].

    Pixels uncovered by the motion are filled with the image mean.
    """
    plane = img.plane
    m = impression_transform(seed, plane.shape, max_shift, max_rot)
    if not np.allclose(m, [[1, 0, 0], [0, 1, 0]]):
        h, w = plane.shape
        plane = cv2.warpAffine(plane, m, (w, h), flags=cv2.INTER_LINEAR,
                               borderMode=cv2.BORDER_CONSTANT, borderValue=float(plane.mean()))
    if noise_sigma > 0:
        # Draws continue the transform's stream so noise differs per seed.
        rng = np.random.default_rng([seed, 1])
        plane = plane + rng.normal(0.0, noise_sigma, size=plane.shape)
    return GrayImage(np.clip(plane, 0.0, 255.0), provenance=img.provenance)


def transform_truth(truth: GroundTruth, m: np.ndarray) -> GroundTruth:
    """Map ground-truth features through a 2x3 rigid transform; features leaving the frame are dropped."""
    m = np.asarray(m, dtype=np.float64)
    rot = np.arctan2(m[1, 0], m[0, 0])

    def fwd(x, y):
        return m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2]

    def inside(x, y):
        return 0 <= x <= truth.width - 1 and 0 <= y <= truth.height - 1

    mins = []
    for mn in truth.minutiae:
        x, y = fwd(mn.x, mn.y)
        if inside(x, y):
            mins.append(Minutia(float(x), float(y), float(np.mod(mn.theta + rot, TWO_PI)),
                                mn.kind, mn.quality))
    sings = []
    for s in truth.singularities:
        x, y = fwd(s.x, s.y)
        if inside(x, y):
            sings.append(Singularity(float(x), float(y), s.kind))
    return GroundTruth(minutiae=mins, singularities=sings, orientation=truth.orientation,
                       period=truth.period, width=truth.width, height=truth.height,
                       kind=truth.kind, spirals=truth.spirals)


def render_color(img: GrayImage, tint=(1.0, 0.8, 0.65), exposure: float = 0.45) -> ColorImage:
    """Colorize a gray render as a skin-toned capture; ``exposure`` < 0.5 keeps it dark."""
    g = img.plane / 255.0
    planes = [np.clip(255.0 * exposure * t * g, 0.0, 255.0) for t in tint]
    return ColorImage(np.stack(planes, axis=-1))


@dataclass(frozen=True)
class CorpusSample:
    sample_id: str
    subject: str
    finger: int
    sample: int
    image: ColorImage
    truth: GroundTruth = field(repr=False)


@dataclass(frozen=True)
class CorpusParams:
    n_fingers: int = 20
    n_impressions: int = 3
    period: float = 9.0
    dims: tuple = (256, 256)
    elevation: float = np.pi / 4
    ambient: float = 0.2
    ridge_height: float = 2.0
    max_shift: float = 8.0
    max_rot: float = np.radians(10.0)
    noise_sigma: float = 3.0
    exposure: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_fingers < 1 or self.n_impressions < 1:
            raise ValueError("need at least one finger and one impression")


def generate_finger(params: CorpusParams, index: int) -> list:
    """All impressions of finger ``index``: same ridge pattern and lighting, new pose and noise."""
    seeds = np.random.SeedSequence([params.seed, index]).generate_state(3)
    rng = np.random.default_rng(seeds[0])
    kind = KINDS[index % len(KINDS)]
    light = IlluminationParams(azimuth=float(rng.uniform(0, TWO_PI)), elevation=params.elevation,
                               ambient=params.ambient, ridge_height=params.ridge_height)
    h, truth = generate_ridge_pattern(kind, params.period, params.dims, seed=int(seeds[1]))
    base = render_contactless(h, light)
    subject = f"S{index:03d}"
    out = []
    for k in range(params.n_impressions):
        seed = int(seeds[2]) + k
        img = perturb_impression(base, seed=seed, max_shift=params.max_shift,
                                 max_rot=params.max_rot, noise_sigma=params.noise_sigma)
        m = impression_transform(seed, base.plane.shape, params.max_shift, params.max_rot)
        color = render_color(img, exposure=params.exposure)
        out.append(CorpusSample(f"{subject}_1_{k + 1}", subject, 1, k + 1, color,
                                transform_truth(truth, m)))
    return out


def generate_corpus(params: CorpusParams | None = None) -> list:
    """Seeded contactless corpus of ``n_fingers`` x ``n_impressions`` color renders."""
    params = params or CorpusParams()
    out = []
    for i in range(params.n_fingers):
        out.extend(generate_finger(params, i))
    return out
