"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np

from .features import Template
from .imaging import ColorImage, GrayImage


def check_image(img):
    """Accept an image object or an array: 2-D is grayscale, ``(H, W, 3)`` is RGB."""
    if isinstance(img, (ColorImage, GrayImage)):
        return img
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return GrayImage(arr, provenance="external")
    if arr.ndim == 3 and arr.shape[2] == 3:
        return ColorImage(arr)
    raise ValueError(f"expected a 2-D gray or (H, W, 3) color array, got shape {arr.shape}")


def check_images(X) -> list:
    if isinstance(X, (ColorImage, GrayImage)) or (isinstance(X, np.ndarray) and X.ndim in (2, 3)
                                                  and not (X.ndim == 3 and X.shape[2] != 3)):
        raise ValueError("expected a sequence of images, got a single image")
    out = [check_image(x) for x in X]
    if not out:
        raise ValueError("empty image collection")
    return out


def check_templates(X) -> list:
    out = list(X)
    bad = [type(t).__name__ for t in out if not isinstance(t, Template)]
    if bad:
        raise TypeError(f"expected Template objects, got {sorted(set(bad))}")
    return out


def check_pairs(X) -> list:
    """Sequence of ``(probe, gallery)`` template pairs."""
    out = []
    for pair in X:
        if len(pair) != 2:
            raise ValueError("each sample must be a (probe, gallery) pair")
        out.append(tuple(check_templates(pair)))
    return out


def check_score_matrix(X, n_columns: int = 2) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != n_columns:
        raise ValueError(f"expected an (n, {n_columns}) score array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    return arr


def check_fraction(name: str, value: float, closed_low: bool = True) -> float:
    v = float(value)
    ok = (0.0 <= v <= 1.0) if closed_low else (0.0 < v <= 1.0)
    if not ok:
        raise ValueError(f"{name} must lie in {'[' if closed_low else '('}0, 1], got {value}")
    return v
