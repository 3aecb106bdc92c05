"""scikit-learn style wrappers around the functional core.

They make the stages composable in a :class:`sklearn.pipeline.Pipeline` and
expose their settings through ``get_params`` / ``set_params``:

* :class:`GrayscaleConverter` - color images -> grayscale (optionally inverted)
* :class:`MinutiaeExtractor` - grayscale images -> templates
* :class:`CylinderMatcher` - template pairs -> similarity scores / decisions
* :class:`ScoreFusion` - ``(ridge, valley)`` score columns -> fused scores
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import fusion_eval, imaging, matcher
from ._validation import check_fraction, check_images, check_pairs, check_score_matrix
from .enhance import EnhanceParams
from .pipeline import ExtractionParams, extract_from_gray


class GrayscaleConverter(TransformerMixin, BaseEstimator):
    """Ordinary or Luma grayscale conversion; ``invert=True`` yields the valley view."""

    def __init__(self, method="ordinary", gamma=imaging.DEFAULT_GAMMA, invert=False):
        self.method = method
        self.gamma = gamma
        self.invert = invert

    def fit(self, X=None, y=None):
        if self.method not in ("ordinary", "luma"):
            raise ValueError(f"unknown method {self.method!r}")
        imaging.GammaParams(self.gamma)
        self.fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self, "fitted_")
        out = []
        for img in check_images(X):
            g = imaging.to_gray(img, self.method, self.gamma)
            out.append(imaging.invert(g) if self.invert else g)
        return out


class MinutiaeExtractor(TransformerMixin, BaseEstimator):
    """Enhancement + minutiae + singular points; one :class:`Template` per image.

    The channel of each template follows the image's provenance (inverted
    images give valley templates).
    """

    def __init__(self, block_size=16, d_min=6.0, border=8.0, trace_length=10):
        self.block_size = block_size
        self.d_min = d_min
        self.border = border
        self.trace_length = trace_length

    def fit(self, X=None, y=None):
        if int(self.block_size) < 4:
            raise ValueError("block_size must be >= 4")
        self.enhance_params_ = EnhanceParams(block_size=int(self.block_size),
                                             freq_window=2 * int(self.block_size))
        self.extraction_params_ = ExtractionParams(float(self.d_min), float(self.border),
                                                   int(self.trace_length))
        return self

    def transform(self, X):
        check_is_fitted(self, "enhance_params_")
        out = []
        for k, img in enumerate(check_images(X)):
            if isinstance(img, imaging.ColorImage):
                raise ValueError("MinutiaeExtractor needs grayscale input; use GrayscaleConverter")
            t, _ = extract_from_gray(img, str(k), self.enhance_params_, self.extraction_params_)
            out.append(t)
        return out


class CylinderMatcher(ClassifierMixin, BaseEstimator):
    """Verification on template pairs.

    ``decision_function`` returns similarity scores; ``fit`` (with genuine
    labels) picks the EER threshold used by ``predict``. Unscorable pairs
    score 0.
    """

    def __init__(self, radius=70.0, n_s=8, n_d=6, sigma_s=9.0, sigma_d=math.pi / 4,
                 min_valid_fraction=0.25, min_minutiae=4, top_pairs_fraction=0.4,
                 max_direction_diff=math.pi, threshold=None):
        self.radius = radius
        self.n_s = n_s
        self.n_d = n_d
        self.sigma_s = sigma_s
        self.sigma_d = sigma_d
        self.min_valid_fraction = min_valid_fraction
        self.min_minutiae = min_minutiae
        self.top_pairs_fraction = top_pairs_fraction
        self.max_direction_diff = max_direction_diff
        self.threshold = threshold

    def _config(self):
        return matcher.MatcherConfig(
            radius=self.radius, n_s=self.n_s, n_d=self.n_d, sigma_s=self.sigma_s,
            sigma_d=self.sigma_d, min_valid_fraction=self.min_valid_fraction,
            min_minutiae=self.min_minutiae, top_pairs_fraction=self.top_pairs_fraction,
            max_direction_diff=self.max_direction_diff)

    def _scores(self, X, cfg):
        pairs = check_pairs(X)
        cyl = {}
        out = np.empty(len(pairs))
        for k, (a, b) in enumerate(pairs):
            for t in (a, b):
                if id(t) not in cyl:
                    cyl[id(t)] = matcher.CylinderSet.from_template(t, cfg)
            out[k] = matcher.match_templates(a, b, cfg, cyl).score
        return out

    def fit(self, X, y=None):
        self.config_ = self._config()
        self.classes_ = np.array([False, True])
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
            return self
        if y is None:
            raise ValueError("fit needs genuine labels unless threshold is given")
        y = np.asarray(y, dtype=bool)
        scores = self._scores(X, self.config_)
        if y.shape != scores.shape:
            raise ValueError("X and y have different lengths")
        roc = fusion_eval.compute_roc((scores, y))
        # lowest threshold whose FAR does not exceed the EER
        eer = fusion_eval.compute_eer(roc)
        ok = [t for t, far, _ in roc if far <= eer and math.isfinite(t)]
        self.threshold_ = float(min(ok)) if ok else float(scores.max())
        self.eer_ = eer
        return self

    def decision_function(self, X):
        cfg = getattr(self, "config_", None) or self._config()
        return self._scores(X, cfg)

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        return self.decision_function(X) >= self.threshold_


class ScoreFusion(TransformerMixin, BaseEstimator):
    """Min-max normalization per column (learned in ``fit``) and weighted sum.

    Input is an ``(n, 2)`` array of ``(ridge, valley)`` scores.
    """

    def __init__(self, weight=0.5, clip=True):
        self.weight = weight
        self.clip = clip

    def fit(self, X, y=None):
        X = check_score_matrix(X)
        check_fraction("weight", self.weight)
        lo, hi = X.min(axis=0), X.max(axis=0)
        if np.any(hi <= lo):
            raise ValueError("a score column is constant; min-max normalization is undefined")
        self.min_, self.scale_ = lo, hi - lo
        return self

    def transform(self, X):
        check_is_fitted(self, "min_")
        X = (check_score_matrix(X) - self.min_) / self.scale_
        if self.clip:
            X = np.clip(X, 0.0, 1.0)
        return self.weight * X[:, 0] + (1.0 - self.weight) * X[:, 1]

    def score_set(self, ridge: fusion_eval.ScoreSet, valley: fusion_eval.ScoreSet):
        """Same rule on :class:`ScoreSet` objects, with the pair-set checks of the core."""
        return fusion_eval.fuse_scores(fusion_eval.normalize_scores(ridge),
                                       fusion_eval.normalize_scores(valley), self.weight)
