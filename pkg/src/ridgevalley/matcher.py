"""Cylinder-code minutiae matching.

Each minutia with enough neighbours gets a cylinder: an ``N_S x N_S x N_D``
grid laid out in the minutia's own rotated frame. A cell collects Gaussian
votes from neighbouring minutiae, weighted by how close the cell is in space
and how well the neighbour's relative direction fits the cell's angular bin,
then squashed into [0, 1] by a sigmoid. Cells outside the cylinder radius
or outside the (dilated) convex hull of the template are invalid.

Local similarities between cylinders are consolidated into a global score
by greedy one-to-one selection of the best pairs. An optional direction gate
(``max_direction_diff`` below pi) excludes pairs whose central minutiae point
in very different absolute directions; it is off by default because it makes
scores depend on the relative rotation of the two templates. Minutia kind is
ignored throughout: it flips between ridge and valley templates of the same
finger.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.special import erf

from .features import Template

SIGMOID_MU = 0.01
SIGMOID_TAU = 400.0
HULL_MARGIN = 50.0


@dataclass(frozen=True)
class MatcherConfig:
    radius: float = 70.0
    n_s: int = 8
    n_d: int = 6
    sigma_s: float = 9.0
    sigma_d: float = math.pi / 4
    min_valid_fraction: float = 0.25
    min_minutiae: int = 4
    top_pairs_fraction: float = 0.4
    max_direction_diff: float = math.pi

    def __post_init__(self):
        for name in ("radius", "sigma_s", "sigma_d", "min_minutiae", "top_pairs_fraction"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_s < 2 or self.n_d < 2:
            raise ValueError("n_s and n_d must be >= 2")
        if not (0 <= self.min_valid_fraction <= 1):
            raise ValueError("min_valid_fraction must lie in [0, 1]")
        if self.top_pairs_fraction > 1:
            raise ValueError("top_pairs_fraction must be <= 1")
        if not (0 < self.max_direction_diff <= math.pi):
            raise ValueError("max_direction_diff must lie in (0, pi]")

    @property
    def n_cells(self) -> int:
        return self.n_s * self.n_s * self.n_d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MatcherConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown matcher settings: {sorted(unknown)}")
        return cls(**known)


@dataclass(frozen=True)
class CylinderDescriptor:
    center: object
    cells: np.ndarray
    validity: np.ndarray
    config: MatcherConfig

    @property
    def valid_fraction(self) -> float:
        return float(self.validity.mean())


class MatchResult(NamedTuple):
    score: float
    scorable: bool = True
    n_pairs: int = 0


class ConfigMismatchError(ValueError):
    pass


def _cell_layout(cfg: MatcherConfig):
    step = 2 * cfg.radius / cfg.n_s
    c = (np.arange(cfg.n_s) + 0.5) * step - cfg.radius
    # (i, j) -> x offset c[i], y offset c[j] in the minutia frame
    cx, cy = np.meshgrid(c, c, indexing="ij")
    dphi = -math.pi + (np.arange(cfg.n_d) + 0.5) * (2 * math.pi / cfg.n_d)
    return cx.ravel(), cy.ravel(), dphi


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def _hull_planes(rel: np.ndarray):
    """Half-plane equations of the convex hull of ``rel`` or None if degenerate."""
    if len(rel) < 3:
        return None
    try:
        return ConvexHull(rel).equations
    except QhullError:
        return None


def build_cylinders(t: Template, cfg: MatcherConfig | None = None) -> list:
    """One cylinder per minutia that has at least two neighbours within ``R + 3 sigma_s``."""
    cfg = cfg or MatcherConfig()
    xy = t.xy()
    th = t.thetas()
    n = len(xy)
    if n == 0:
        return []
    cx, cy, dphi = _cell_layout(cfg)
    half_bin = math.pi / cfg.n_d
    gs_norm = 1.0 / (cfg.sigma_s * math.sqrt(2 * math.pi))
    inside_disc = np.hypot(cx, cy) <= cfg.radius
    reach = cfg.radius + 3 * cfg.sigma_s
    out = []
    for i in range(n):
        rel = xy - xy[i]
        dist = np.hypot(rel[:, 0], rel[:, 1])
        nb = np.nonzero((dist <= reach) & (np.arange(n) != i))[0]
        if len(nb) < 2:
            continue
        c, s = math.cos(th[i]), math.sin(th[i])
        # cell centers relative to minutia i, rotated into image axes
        px = c * cx - s * cy
        py = s * cx + c * cy
        valid_sp = inside_disc.copy()
        planes = _hull_planes(rel)
        if planes is not None:
            pts = np.stack([px, py], axis=1)
            valid_sp &= np.all(pts @ planes[:, :2].T + planes[:, 2] <= HULL_MARGIN, axis=1)
        # spatial votes: (cells, neighbours)
        ddx = px[:, None] - rel[nb, 0][None, :]
        ddy = py[:, None] - rel[nb, 1][None, :]
        gs = gs_norm * np.exp(-(ddx * ddx + ddy * ddy) / (2 * cfg.sigma_s ** 2))
        # directional votes: (angular bins, neighbours), Gaussian integrated over the bin
        rel_dir = _wrap(th[nb] - th[i])
        diff = _wrap(dphi[:, None] - rel_dir[None, :])
        k = 1.0 / (cfg.sigma_d * math.sqrt(2))
        gd = 0.5 * (erf((diff + half_bin) * k) - erf((diff - half_bin) * k))
        votes = gs @ gd.T  # (spatial cells, angular bins)
        cells = 1.0 / (1.0 + np.exp(-SIGMOID_TAU * (votes - SIGMOID_MU)))
        valid = np.repeat(valid_sp[:, None], cfg.n_d, axis=1)
        cells = np.where(valid, cells, 0.0)
        out.append(CylinderDescriptor(
            center=t.minutiae[i],
            cells=cells.reshape(cfg.n_s, cfg.n_s, cfg.n_d),
            validity=valid.reshape(cfg.n_s, cfg.n_s, cfg.n_d),
            config=cfg,
        ))
    return out


def local_similarity(a: CylinderDescriptor, b: CylinderDescriptor) -> float:
    """``1 - |a - b| / (|a| + |b|)`` over cells valid in both descriptors."""
    if a.config != b.config:
        raise ConfigMismatchError("descriptors were built with different matcher settings")
    common = a.validity & b.validity
    if common.mean() < a.config.min_valid_fraction:
        return 0.0
    va, vb = a.cells[common], b.cells[common]
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na + nb == 0:
        return 0.0
    return float(1.0 - np.linalg.norm(va - vb) / (na + nb))


class CylinderSet:
    """Cylinders of one template stacked into flat arrays for batch scoring."""

    def __init__(self, cylinders: list, config: MatcherConfig):
        if any(c.config != config for c in cylinders):
            raise ConfigMismatchError("descriptors were built with different matcher settings")
        self.cylinders = cylinders
        self.config = config
        n = config.n_cells
        self.cells = np.stack([c.cells.ravel() for c in cylinders]) if cylinders else np.zeros((0, n))
        self.valid = (np.stack([c.validity.ravel() for c in cylinders]).astype(np.float64)
                      if cylinders else np.zeros((0, n)))
        self.sq = self.cells * self.cells
        self.thetas = np.array([c.center.theta for c in cylinders], dtype=np.float64)

    def __len__(self):
        return len(self.cylinders)

    @classmethod
    def from_template(cls, t: Template, cfg: MatcherConfig | None = None) -> "CylinderSet":
        cfg = cfg or MatcherConfig()
        return cls(build_cylinders(t, cfg), cfg)


def _as_set(c, cfg=None):
    if isinstance(c, CylinderSet):
        return c
    cfg = cfg or (c[0].config if c else MatcherConfig())
    return CylinderSet(list(c), cfg)


def similarity_matrix(ca, cb) -> np.ndarray:
    """All pairwise local similarities (same formula as :func:`local_similarity`).

    Works on lists of descriptors or :class:`CylinderSet` objects; sums over
    common-valid cells are written as matrix products, so values can differ
    from :func:`local_similarity` in the last few bits.
    """
    a, b = _as_set(ca), _as_set(cb)
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)))
    if a.config != b.config:
        raise ConfigMismatchError("descriptors were built with different matcher settings")
    cfg = a.config
    # invalid cells hold 0, so masking one side by the other's validity suffices
    saa = a.sq @ b.valid.T
    sbb = a.valid @ b.sq.T
    sab = a.cells @ b.cells.T
    common = a.valid @ b.valid.T
    d = np.sqrt(np.maximum(saa + sbb - 2 * sab, 0.0))
    denom = np.sqrt(saa) + np.sqrt(sbb)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, 1.0 - d / np.where(denom > 0, denom, 1.0), 0.0)
    sim[common / cfg.n_cells < cfg.min_valid_fraction] = 0.0
    return np.clip(sim, 0.0, 1.0)


def _template_key(t: Template):
    return (t.source_id, len(t.minutiae),
            tuple((m.x, m.y, m.theta, m.kind, m.quality) for m in t.minutiae))


def _greedy_pairs(sim: np.ndarray, n_pick: int) -> list:
    n_a, n_b = sim.shape
    flat = sim.ravel()
    # similarity descending, ties by row then column
    order = np.lexsort((np.arange(flat.size), -flat))
    used_a = np.zeros(n_a, bool)
    used_b = np.zeros(n_b, bool)
    picked = []
    for k in order:
        i, j = divmod(int(k), n_b)
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        picked.append((i, j))
        if len(picked) == n_pick:
            break
    return picked


def consolidate(sim: np.ndarray, fraction: float) -> tuple:
    """Greedy one-to-one selection of the best pairs; returns (mean, n_selected)."""
    n_pick = math.ceil(fraction * min(sim.shape))
    if n_pick == 0:
        return 0.0, 0
    picked = _greedy_pairs(sim, n_pick)
    return float(np.mean([sim[i, j] for i, j in picked])), len(picked)


def match_cylinders(ca, cb, cfg: MatcherConfig | None = None) -> MatchResult:
    """Score two cylinder collections; argument order matters only through tie-breaking."""
    a, b = _as_set(ca, cfg), _as_set(cb, cfg)
    cfg = cfg or a.config
    if len(a) < cfg.min_minutiae or len(b) < cfg.min_minutiae:
        return MatchResult(0.0, False, 0)
    sim = similarity_matrix(a, b)
    if cfg.max_direction_diff < math.pi:
        # pairs whose central minutiae point in incompatible directions are not eligible
        turn = np.abs(_wrap(a.thetas[:, None] - b.thetas[None, :]))
        sim = np.where(turn <= cfg.max_direction_diff, sim, 0.0)
    n_pick = math.ceil(cfg.top_pairs_fraction * min(sim.shape))
    picked = _greedy_pairs(sim, n_pick)
    # selected pairs are rescored cell by cell so identical cylinders give exactly 1
    exact = [local_similarity(a.cylinders[i], b.cylinders[j]) for i, j in picked]
    score = float(np.mean(exact))
    return MatchResult(min(max(score, 0.0), 1.0), True, len(picked))


def match_templates(p: Template, g: Template, cfg: MatcherConfig | None = None,
                    cylinders: dict | None = None) -> MatchResult:
    """Global similarity in [0, 1] between two templates.

    Arguments are put in a canonical order (source id, then content) before
    scoring, so ``match_templates(a, b) == match_templates(b, a)`` exactly.
    A template with fewer than ``min_minutiae`` cylinders makes the pair
    unscorable: ``MatchResult(0.0, scorable=False)``. ``cylinders`` may map
    ``id(template)`` to a prebuilt :class:`CylinderSet`.
    """
    cfg = cfg or MatcherConfig()
    if _template_key(g) < _template_key(p):
        p, g = g, p
    cyl = cylinders or {}
    cp = cyl.get(id(p))
    cg = cyl.get(id(g))
    if cp is None:
        cp = CylinderSet.from_template(p, cfg)
    if cg is None:
        cg = CylinderSet.from_template(g, cfg)
    return match_cylinders(cp, cg, cfg)
