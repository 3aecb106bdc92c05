"""All-to-all verification scoring: pair enumeration, score normalization and
fusion, ROC / EER / GAR@FAR, and the score-file and report formats.

Conventions (also written into every report):

* a pair is accepted when ``score >= threshold``;
* thresholds sweep the distinct scores plus ``+inf``, highest first;
* EER is linearly interpolated where ``FAR - FRR`` changes sign;
* GAR@FAR is a step function: the GAR of the most permissive operating point
  whose FAR does not exceed the target;
* unscorable pairs keep score 0 and stay in every metric.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

CHANNELS = ("ridge", "valley", "fused")
SCORE_HEADER = ("probe_id", "gallery_id", "genuine", "score")
ROC_HEADER = ("threshold", "far", "gar")

CONVENTIONS = {
    "acceptance": "score >= threshold",
    "thresholds": "distinct score values plus +inf, emitted in decreasing order",
    "eer": "linear interpolation between adjacent operating points where FAR - FRR changes sign",
    "gar_at_far": "step function: GAR at the lowest threshold whose FAR <= target; "
                  "null when target < 1 / imposter_count",
    "unscorable": "pairs the matcher cannot score are kept with score 0",
    "normalization": "min-max over the whole score set",
    "fusion": "weighted sum w * ridge + (1 - w) * valley of normalized scores",
}


class EvaluationError(ValueError):
    """Raised for malformed score sets, empty classes or mismatched pair sets."""


@dataclass(frozen=True)
class ScoreRecord:
    probe_id: str
    gallery_id: str
    genuine: bool
    score: float
    unscorable: bool = False

    def __post_init__(self):
        if self.probe_id == self.gallery_id:
            raise EvaluationError(f"self-pair {self.probe_id!r}")
        if not math.isfinite(self.score):
            raise EvaluationError(f"non-finite score for ({self.probe_id}, {self.gallery_id})")

    @property
    def pair(self) -> frozenset:
        return frozenset((self.probe_id, self.gallery_id))


@dataclass(frozen=True)
class ScoreSet:
    records: tuple
    channel: str = "ridge"

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise EvaluationError(f"unknown channel {self.channel!r}")
        recs = tuple(self.records)
        seen = set()
        for r in recs:
            if r.pair in seen:
                raise EvaluationError(f"pair ({r.probe_id}, {r.gallery_id}) appears twice")
            seen.add(r.pair)
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records], dtype=np.float64)

    def labels(self) -> np.ndarray:
        return np.array([r.genuine for r in self.records], dtype=bool)

    def pair_keys(self) -> list:
        return [(r.probe_id, r.gallery_id) for r in self.records]

    def sorted(self) -> "ScoreSet":
        recs = sorted(self.records, key=lambda r: (r.probe_id, r.gallery_id))
        return ScoreSet(tuple(recs), self.channel)


@dataclass(frozen=True)
class EvalReport:
    eer: float
    roc: tuple
    gar_at_far: dict
    counts: tuple
    channel: str = "ridge"
    unscorable: int = 0
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def __post_init__(self):
        if not 0.0 <= self.eer <= 1.0:
            raise EvaluationError(f"EER {self.eer} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "eer": self.eer,
            "gar_at_far": {_target_key(k): v for k, v in sorted(self.gar_at_far.items())},
            "counts": {"genuine": self.counts[0], "imposter": self.counts[1],
                       "unscorable": self.unscorable},
            "conventions": self.conventions,
        }


# ---------------------------------------------------------------- pairs

def _check_labels(samples):
    ids = [str(s) for s, _ in samples]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise EvaluationError(f"duplicate sample ids: {dup[:5]}")
    order = np.argsort(ids, kind="stable")
    ids = [ids[i] for i in order]
    classes = [samples[i][1] for i in order]
    _, codes = np.unique(np.array([repr(c) for c in classes]), return_inverse=True)
    return ids, codes


def iter_pair_blocks(samples: Sequence) -> Iterator[tuple]:
    """Stream the upper triangle row by row.

    ``samples`` is a sequence of ``(sample_id, class_key)``. Each yielded item
    is ``(row_index, column_indices, genuine_mask)`` over the id-sorted samples.
    """
    _, codes = _check_labels(list(samples))
    n = len(codes)
    for i in range(n - 1):
        cols = np.arange(i + 1, n)
        yield i, cols, codes[cols] == codes[i]


def pair_counts(samples: Sequence) -> tuple:
    """``(genuine, imposter)`` counts over all unordered pairs, streamed."""
    gen = imp = 0
    for _, cols, mask in iter_pair_blocks(samples):
        g = int(np.count_nonzero(mask))
        gen += g
        imp += cols.size - g
    return gen, imp


def expected_counts(n_classes: int, n_samples: int) -> tuple:
    """Closed-form counts for ``n_classes`` classes of ``n_samples`` each."""
    c, s = int(n_classes), int(n_samples)
    genuine = c * s * (s - 1) // 2
    total = c * s * (c * s - 1) // 2
    return genuine, total - genuine


def enumerate_pairs(samples: Sequence) -> list:
    """All unordered pairs ``(probe_id, gallery_id, genuine)`` with ``probe_id < gallery_id``."""
    samples = list(samples)
    ids, _ = _check_labels(samples)
    out = []
    for i, cols, mask in iter_pair_blocks(samples):
        a = ids[i]
        out.extend((a, ids[j], bool(g)) for j, g in zip(cols.tolist(), mask.tolist()))
    return out


# ---------------------------------------------------------------- scores

def normalize_scores(s: ScoreSet) -> ScoreSet:
    """Min-max map onto [0, 1]; record order is preserved."""
    scores = s.scores()
    if scores.size == 0:
        raise EvaluationError("empty score set")
    lo, hi = scores.min(), scores.max()
    if hi <= lo:
        raise EvaluationError("all scores are equal; min-max normalization is undefined")
    span = hi - lo
    recs = tuple(replace(r, score=float((r.score - lo) / span)) for r in s.records)
    return ScoreSet(recs, s.channel)


def fuse_scores(a: ScoreSet, b: ScoreSet, w: float = 0.5) -> ScoreSet:
    """Per-pair weighted sum ``w * a + (1 - w) * b`` of two normalized channels."""
    if not 0.0 <= w <= 1.0:
        raise EvaluationError(f"fusion weight must lie in [0, 1], got {w}")
    if a.channel == b.channel:
        raise EvaluationError("fusion needs two different channels")
    for s in (a, b):
        sc = s.scores()
        if sc.size and (sc.min() < 0.0 or sc.max() > 1.0):
            raise EvaluationError(f"{s.channel} scores are not normalized")
    index = {r.pair: r for r in b.records}
    if len(index) != len(a.records) or any(r.pair not in index for r in a.records):
        raise EvaluationError("channels cover different pair sets")
    recs = []
    for r in a.records:
        o = index[r.pair]
        if o.genuine != r.genuine:
            raise EvaluationError(f"label mismatch on pair ({r.probe_id}, {r.gallery_id})")
        fused = w * r.score + (1.0 - w) * o.score
        recs.append(ScoreRecord(r.probe_id, r.gallery_id, r.genuine, float(fused),
                                r.unscorable and o.unscorable))
    return ScoreSet(tuple(recs), "fused")


# ---------------------------------------------------------------- metrics

def _arrays(s):
    if isinstance(s, ScoreSet):
        return s.scores(), s.labels()
    scores, labels = s
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=bool)


def compute_roc(s) -> list:
    """Operating points ``(threshold, far, gar)`` from ``+inf`` down to the lowest score.

    ``s`` is a :class:`ScoreSet` or a ``(scores, genuine_flags)`` pair.
    """
    scores, labels = _arrays(s)
    n_gen = int(labels.sum())
    n_imp = int(labels.size - n_gen)
    if n_gen == 0 or n_imp == 0:
        raise EvaluationError("ROC needs at least one genuine and one imposter score")
    order = np.argsort(-scores, kind="stable")
    sc = scores[order]
    gen = labels[order]
    cum_gen = np.cumsum(gen)
    cum_imp = np.cumsum(~gen)
    # Last index of each run of equal scores: everything up to it is accepted.
    last = np.flatnonzero(np.append(sc[1:] != sc[:-1], True))
    roc = [(math.inf, 0.0, 0.0)]
    for k in last:
        roc.append((float(sc[k]), cum_imp[k] / n_imp, cum_gen[k] / n_gen))
    return [(t, float(f), float(g)) for t, f, g in roc]


def compute_eer(roc: Sequence) -> float:
    """Equal error rate by linear interpolation of ``FAR - FRR`` along the ROC."""
    if len(roc) < 2:
        raise EvaluationError("ROC needs at least two operating points")
    prev = None
    for _, far, gar in roc:
        frr = 1.0 - gar
        d = far - frr
        if d == 0.0:
            return float(far)
        if prev is not None and prev[0] < 0.0 < d:
            d0, far0, frr0 = prev
            t = -d0 / (d - d0)
            return float(far0 + t * (far - far0))
        prev = (d, far, frr)
    # FAR - FRR never became positive: only possible for a malformed ROC.
    raise EvaluationError("ROC never reaches the accept-all endpoint")


def gar_at_far(roc: Sequence, far_target: float, n_imposters: int | None = None):
    """GAR at the most permissive operating point with ``FAR <= far_target``.

    Returns ``None`` when the target lies below the measurable floor
    ``1 / n_imposters``.
    """
    if not 0.0 < far_target <= 1.0:
        raise EvaluationError(f"FAR target must lie in (0, 1], got {far_target}")
    if n_imposters is not None and far_target < 1.0 / n_imposters:
        return None
    best = 0.0
    for _, far, gar in roc:
        if far <= far_target:
            best = max(best, gar)
    return float(best)


def evaluate(s: ScoreSet, far_targets: Iterable[float] = (0.0001, 0.001, 0.01)) -> EvalReport:
    """Full metric bundle for one channel."""
    s = s.sorted()
    labels = s.labels()
    n_gen = int(labels.sum())
    n_imp = int(labels.size - n_gen)
    roc = compute_roc(s)
    gars = {float(t): gar_at_far(roc, float(t), n_imp) for t in far_targets}
    return EvalReport(eer=compute_eer(roc), roc=tuple(roc), gar_at_far=gars,
                      counts=(n_gen, n_imp), channel=s.channel,
                      unscorable=sum(r.unscorable for r in s.records))


def relative_improvement(old: float | None, new: float | None):
    """``(old - new) / old``; ``None`` when undefined."""
    if old is None or new is None or old == 0:
        return None
    return (old - new) / old


# ---------------------------------------------------------------- file formats

def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def _target_key(t: float) -> str:
    return repr(float(t))


def format_scores(s: ScoreSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for r in s.sorted().records:
        w.writerow((r.probe_id, r.gallery_id, int(r.genuine), _fmt(r.score)))
    return buf.getvalue()


def write_scores(s: ScoreSet, path) -> Path:
    path = Path(path)
    path.write_text(format_scores(s), encoding="utf-8")
    return path


def read_scores(path, channel: str = "ridge") -> ScoreSet:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SCORE_HEADER:
            raise EvaluationError(f"{path}: expected header {','.join(SCORE_HEADER)}")
        recs = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 or row[2] not in ("0", "1"):
                raise EvaluationError(f"{path}:{lineno}: malformed row {row!r}")
            try:
                score = float(row[3])
            except ValueError as exc:
                raise EvaluationError(f"{path}:{lineno}: bad score {row[3]!r}") from exc
            recs.append(ScoreRecord(row[0], row[1], row[2] == "1", score))
    return ScoreSet(tuple(recs), channel)


def write_roc(roc: Sequence, path) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROC_HEADER)
    for t, far, gar in roc:
        w.writerow((_fmt(t), _fmt(far), _fmt(gar)))
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def write_report(report: EvalReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
