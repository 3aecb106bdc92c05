"""Minutiae and singular points.

Minutia angles follow image axes (x right, y down): ``theta = atan2(dy, dx)``.
An ending points along its own ridge; a bifurcation points between its two
forking branches. Both conventions name the same direction for a ridge
ending and the valley bifurcation that surrounds it, so ``theta`` survives
photometric inversion while ``kind`` flips.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .enhance import OrientationField, RidgeMaps, block_mask, neighbor_codes

log = logging.getLogger(__name__)

ENDING = "ending"
BIFURCATION = "bifurcation"
CORE = "core"
DELTA = "delta"
TWO_PI = 2 * np.pi
TRACE_LENGTH = 10

_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class Minutia:
    x: float
    y: float
    theta: float
    kind: str
    quality: float = 1.0

    def __post_init__(self):
        if self.kind not in (ENDING, BIFURCATION):
            raise ValueError(f"unknown minutia kind {self.kind!r}")
        object.__setattr__(self, "theta", float(np.mod(self.theta, TWO_PI)))
        if not (0.0 <= self.quality <= 1.0):
            raise ValueError("quality must lie in [0, 1]")


@dataclass(frozen=True)
class Singularity:
    x: float
    y: float
    kind: str

    def __post_init__(self):
        if self.kind not in (CORE, DELTA):
            raise ValueError(f"unknown singularity kind {self.kind!r}")

    @property
    def index(self) -> float:
        return 0.5 if self.kind == CORE else -0.5


@dataclass(frozen=True)
class Template:
    minutiae: tuple
    singularities: tuple = ()
    width: int = 0
    height: int = 0
    channel: str = "ridge"
    source_id: str = ""
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.channel not in ("ridge", "valley"):
            raise ValueError(f"channel must be 'ridge' or 'valley', got {self.channel!r}")
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        object.__setattr__(self, "singularities", tuple(self.singularities))
        keys = [(m.x, m.y, m.kind) for m in self.minutiae]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate minutiae in template")

    def __len__(self):
        return len(self.minutiae)

    def xy(self) -> np.ndarray:
        return np.array([[m.x, m.y] for m in self.minutiae], dtype=np.float64).reshape(-1, 2)

    def thetas(self) -> np.ndarray:
        return np.array([m.theta for m in self.minutiae], dtype=np.float64)


# ---------------------------------------------------------------------------
# crossing number

def _transitions(code: int) -> int:
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(abs(bits[i] - bits[(i + 1) % 8]) for i in range(8)) // 2


CN_LUT = np.array([_transitions(c) for c in range(256)], dtype=np.int8)


def crossing_numbers(skeleton: np.ndarray) -> np.ndarray:
    """Crossing number at every skeleton pixel (0 elsewhere)."""
    cn = CN_LUT[neighbor_codes(skeleton)]
    return np.where(skeleton, cn, 0)


def _neighbors(skel, y, x):
    h, w = skel.shape
    out = []
    for dy, dx in _OFFSETS:
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w and skel[yy, xx]:
            out.append((yy, xx))
    return out


def _trace(skel, cn, start, first, length):
    """Follow the skeleton from ``start`` through ``first``.

    Returns the visited path (excluding ``start``) and whether the walk
    stopped on a junction pixel.
    """
    path = [first]
    visited = {start, first}
    prev, cur = start, first
    while len(path) < length:
        if cn[cur] >= 3:
            return path, True
        nxt = [p for p in _neighbors(skel, *cur) if p not in visited]
        if not nxt:
            return path, False
        if len(nxt) > 1:
            # Junction pixels first, then the step that keeps heading away
            # from the previous pixel, then 4-neighbors.
            d = (cur[0] - prev[0], cur[1] - prev[1])
            nxt.sort(key=lambda p: (-int(cn[p] >= 3),
                                    -((p[0] - cur[0]) * d[0] + (p[1] - cur[1]) * d[1]),
                                    abs(p[0] - cur[0]) + abs(p[1] - cur[1])))
        prev, cur = cur, nxt[0]
        visited.add(cur)
        path.append(cur)
    return path, cn[cur] >= 3


def _branch_starts(skel, y, x):
    """One neighbor per foreground run around the ring (4-neighbors preferred)."""
    h, w = skel.shape
    bits = []
    for dy, dx in _OFFSETS:
        yy, xx = y + dy, x + dx
        bits.append(bool(0 <= yy < h and 0 <= xx < w and skel[yy, xx]))
    if all(bits):
        return []
    # rotate so the ring starts on a background position
    k0 = bits.index(False)
    runs, cur = [], []
    for i in range(8):
        k = (k0 + i) % 8
        if bits[k]:
            cur.append(k)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    starts = []
    for run in runs:
        four = [k for k in run if k % 2 == 0]
        k = four[0] if four else run[0]
        starts.append((y + _OFFSETS[k][0], x + _OFFSETS[k][1]))
    return starts


def _direction(y, x, path):
    ty, tx = path[-1]
    return float(np.mod(np.arctan2(ty - y, tx - x), TWO_PI))


def _circ_mean(a, b):
    return float(np.mod(np.arctan2(np.sin(a) + np.sin(b), np.cos(a) + np.cos(b)), TWO_PI))


def _angdiff(a, b):
    return abs((a - b + np.pi) % TWO_PI - np.pi)


def _quality(maps: RidgeMaps, x, y) -> float:
    if maps.orientation is None:
        return 1.0
    f = maps.orientation
    by = min(int(y) // f.block_size, f.coherence.shape[0] - 1)
    bx = min(int(x) // f.block_size, f.coherence.shape[1] - 1)
    return float(np.clip(f.coherence[by, bx], 0.0, 1.0))


def extract_minutiae(maps: RidgeMaps, trace_length: int = TRACE_LENGTH) -> list:
    """Crossing-number minutiae: CN=1 endings and CN=3 bifurcations inside the mask.

    Adjacent CN=3 pixels (a junction drawn with more than one pixel) yield
    a single bifurcation at the first pixel in raster order.
    """
    skel = np.asarray(maps.skeleton, bool)
    cn = crossing_numbers(skel)
    mask = np.asarray(maps.mask, bool)
    out = []
    taken_junction = np.zeros_like(skel)
    for y, x in np.argwhere(skel & mask & ((cn == 1) | (cn == 3))):
        y, x = int(y), int(x)
        if cn[y, x] == 1:
            nbrs = _neighbors(skel, y, x)
            if not nbrs:
                continue
            path, _ = _trace(skel, cn, (y, x), nbrs[0], trace_length)
            theta = _direction(y, x, path)
            out.append(Minutia(float(x), float(y), theta, ENDING, _quality(maps, x, y)))
        else:
            if taken_junction[max(0, y - 1):y + 2, max(0, x - 1):x + 2].any():
                continue
            taken_junction[y, x] = True
            starts = _branch_starts(skel, y, x)
            if len(starts) != 3:
                continue
            dirs = []
            for s in starts:
                path, _ = _trace(skel, cn, (y, x), s, trace_length)
                dirs.append(_direction(y, x, path))
            pairs = [(0, 1), (0, 2), (1, 2)]
            i, j = min(pairs, key=lambda p: _angdiff(dirs[p[0]], dirs[p[1]]))
            theta = _circ_mean(dirs[i], dirs[j])
            out.append(Minutia(float(x), float(y), theta, BIFURCATION, _quality(maps, x, y)))
    return out


def _mask_distance(mask: np.ndarray) -> np.ndarray:
    # Distance to the nearest background pixel, treating the frame edge as background.
    padded = np.pad(np.asarray(mask, bool), 1)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def filter_spurious(minutiae: list, maps: RidgeMaps, d_min: float = 6.0,
                    border: float = 8.0) -> list:
    """Drop border minutiae, broken-ridge ending pairs, spurs and short bridges.

    All candidate pairs are found on the input list and removed together,
    so the filter is idempotent. Output is sorted by (y, x).
    """
    ms = sorted(minutiae, key=lambda m: (m.y, m.x, m.kind, m.theta))
    dist = _mask_distance(maps.mask)
    h, w = dist.shape
    drop = set()
    for i, m in enumerate(ms):
        yi, xi = int(round(m.y)), int(round(m.x))
        if not (0 <= yi < h and 0 <= xi < w) or dist[yi, xi] <= border:
            drop.add(i)

    skel = np.asarray(maps.skeleton, bool)
    cn = crossing_numbers(skel)
    ends = [i for i, m in enumerate(ms) if m.kind == ENDING]
    bifs = [i for i, m in enumerate(ms) if m.kind == BIFURCATION]

    # facing endings of a broken ridge
    for a in range(len(ends)):
        for b in range(a + 1, len(ends)):
            i, j = ends[a], ends[b]
            mi, mj = ms[i], ms[j]
            if (np.hypot(mi.x - mj.x, mi.y - mj.y) < d_min
                    and _angdiff(mi.theta, mj.theta) > np.pi / 2):
                drop.update((i, j))

    # spurs: an ending whose ridge reaches a junction within d_min
    steps = int(np.ceil(d_min))
    for i in ends:
        m = ms[i]
        y, x = int(m.y), int(m.x)
        if not skel[y, x]:
            continue
        nbrs = _neighbors(skel, y, x)
        if not nbrs:
            continue
        path, hit = _trace(skel, cn, (y, x), nbrs[0], steps)
        if hit:
            jy, jx = path[-1]
            near = [k for k in bifs if abs(ms[k].x - jx) <= 1.5 and abs(ms[k].y - jy) <= 1.5]
            if near:
                drop.add(i)
                drop.update(near)

    # bridges: two bifurcations joined by a short skeleton path
    for a in range(len(bifs)):
        for b in range(a + 1, len(bifs)):
            i, j = bifs[a], bifs[b]
            mi, mj = ms[i], ms[j]
            if np.hypot(mi.x - mj.x, mi.y - mj.y) < d_min and _connected_within(
                    skel, cn, (int(mi.y), int(mi.x)), (int(mj.y), int(mj.x)), steps):
                drop.update((i, j))

    return [m for i, m in enumerate(ms) if i not in drop]


def _connected_within(skel, cn, a, b, steps):
    if not skel[a] or not skel[b]:
        return False
    for s in _neighbors(skel, *a):
        path, _ = _trace(skel, cn, a, s, steps)
        if any(max(abs(p[0] - b[0]), abs(p[1] - b[1])) <= 1 for p in path):
            return True
    return False


# ---------------------------------------------------------------------------
# singular points

def poincare_sums(angles: np.ndarray) -> np.ndarray:
    """Loop sum of principal-value orientation differences around each 2x2 block group.

    Entry ``[i, j]`` walks the centers of blocks (i, j) -> (i, j+1) ->
    (i+1, j+1) -> (i+1, j) and back, the direction in which ``atan2(dy, dx)``
    increases in image coordinates.
    """
    a = np.asarray(angles, dtype=np.float64)
    loop = [a[:-1, :-1], a[:-1, 1:], a[1:, 1:], a[1:, :-1]]
    total = np.zeros_like(loop[0])
    for k in range(4):
        d = loop[(k + 1) % 4] - loop[k]
        d = (d + np.pi / 2) % np.pi - np.pi / 2
        total += d
    return total


def detect_singularities(field: OrientationField, mask: np.ndarray | None = None) -> list:
    """Cores (loop sum ~ +pi) and deltas (~ -pi) at block-group corners.

    ``mask`` may be pixel- or block-resolution; every block of a loop must be
    foreground. Detections of one kind that touch (8-adjacent corners) merge
    to their centroid.
    """
    sums = poincare_sums(field.angles)
    gh, gw = field.angles.shape
    if mask is None:
        bm = np.ones((gh, gw), bool)
    else:
        mask = np.asarray(mask, bool)
        bm = mask if mask.shape == (gh, gw) else block_mask(mask, field.block_size)
    inside = bm[:-1, :-1] & bm[:-1, 1:] & bm[1:, 1:] & bm[1:, :-1]
    bs = field.block_size
    found = []
    for kind, sign in ((CORE, 1.0), (DELTA, -1.0)):
        hits = inside & (np.abs(sums - sign * np.pi) < np.pi / 2)
        labels, n = ndimage.label(hits, structure=np.ones((3, 3)))
        for lab in range(1, n + 1):
            iy, ix = np.nonzero(labels == lab)
            # corner shared by blocks (i, j) .. (i+1, j+1)
            found.append(Singularity(float((ix.mean() + 1) * bs), float((iy.mean() + 1) * bs), kind))
    return sorted(found, key=lambda s: (s.y, s.x, s.kind))


def build_template(minutiae, singularities=(), dims=(0, 0), channel="ridge",
                   source_id="") -> Template:
    """Assemble a template, collapsing minutiae that share (x, y, kind).

    When duplicates disagree on ``theta`` the higher-quality one wins and a
    warning is logged and attached to the template.
    """
    best = {}
    warnings = []
    for m in minutiae:
        key = (m.x, m.y, m.kind)
        if key not in best:
            best[key] = m
            continue
        other = best[key]
        if other.theta != m.theta:
            msg = f"conflicting duplicate minutia at ({m.x}, {m.y}) in {source_id!r}"
            log.warning(msg)
            warnings.append(msg)
        if m.quality > other.quality:
            best[key] = m
    ordered = sorted(best.values(), key=lambda m: (m.y, m.x, m.kind))
    return Template(tuple(ordered), tuple(singularities), int(dims[0]), int(dims[1]),
                    channel, str(source_id), tuple(warnings))


def channel_for(provenance: str) -> str:
    """Valley templates come from inverted images, ridge templates from everything else."""
    return "valley" if provenance.startswith("inverted-") else "ridge"


# ---------------------------------------------------------------------------
# template text format

MAGIC = "RVT1"


def format_template(t: Template) -> str:
    lines = [MAGIC, f"{t.width} {t.height} {t.channel}", str(len(t.minutiae))]
    for m in t.minutiae:
        k = "E" if m.kind == ENDING else "B"
        lines.append(f"{m.x!r} {m.y!r} {m.theta!r} {k} {m.quality!r}")
    lines.append(str(len(t.singularities)))
    for s in t.singularities:
        lines.append(f"{s.x!r} {s.y!r} {'C' if s.kind == CORE else 'D'}")
    return "\n".join(lines) + "\n"


class TemplateFormatError(ValueError):
    pass


def parse_template(text: str, source_id: str = "") -> Template:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    try:
        if not lines or lines[0] != MAGIC:
            raise TemplateFormatError("missing RVT1 header")
        w, h, channel = lines[1].split()
        n = int(lines[2])
        ms = []
        for ln in lines[3:3 + n]:
            x, y, th, k, q = ln.split()
            if k not in ("E", "B"):
                raise TemplateFormatError(f"bad minutia kind {k!r}")
            ms.append(Minutia(float(x), float(y), float(th),
                              ENDING if k == "E" else BIFURCATION, float(q)))
        if len(ms) != n:
            raise TemplateFormatError("truncated minutiae section")
        m_count = int(lines[3 + n])
        ss = []
        for ln in lines[4 + n:4 + n + m_count]:
            x, y, k = ln.split()
            if k not in ("C", "D"):
                raise TemplateFormatError(f"bad singularity kind {k!r}")
            ss.append(Singularity(float(x), float(y), CORE if k == "C" else DELTA))
        if len(ss) != m_count or len(lines) != 4 + n + m_count:
            raise TemplateFormatError("template length does not match its counts")
    except TemplateFormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise TemplateFormatError(f"malformed template: {exc}") from exc
    return Template(tuple(ms), tuple(ss), int(w), int(h), channel, source_id)


def save_template(t: Template, path) -> Path:
    path = Path(path)
    path.write_text(format_template(t), encoding="utf-8")
    return path


def load_template(path, source_id: str | None = None) -> Template:
    path = Path(path)
    return parse_template(path.read_text(encoding="utf-8"),
                          source_id if source_id is not None else path.stem)


# ---------------------------------------------------------------------------
# debug overlay

def render_overlay(plane: np.ndarray, t: Template, tick: float = 8.0) -> np.ndarray:
    """RGB uint8 overlay: endings red, bifurcations blue (dots with direction
    ticks), cores as squares and deltas as triangles in green."""
    import cv2

    gray = np.clip(np.asarray(plane, dtype=np.float64), 0, 255).astype(np.uint8)
    rgb = np.ascontiguousarray(np.stack([gray] * 3, axis=-1))
    for m in t.minutiae:
        color = (255, 0, 0) if m.kind == ENDING else (0, 0, 255)
        p = (int(round(m.x)), int(round(m.y)))
        q = (int(round(m.x + tick * np.cos(m.theta))), int(round(m.y + tick * np.sin(m.theta))))
        cv2.circle(rgb, p, 2, color, -1)
        cv2.line(rgb, p, q, color, 1)
    for s in t.singularities:
        x, y = int(round(s.x)), int(round(s.y))
        if s.kind == CORE:
            cv2.rectangle(rgb, (x - 6, y - 6), (x + 6, y + 6), (0, 200, 0), 1)
        else:
            pts = np.array([[x, y - 7], [x - 6, y + 5], [x + 6, y + 5]], np.int32)
            cv2.polylines(rgb, [pts], True, (0, 200, 0), 1)
    return rgb
