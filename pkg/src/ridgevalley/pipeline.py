"""Dataset ingestion, experiment configuration and the end-to-end run:
grayscale conversion, optional inversion, enhancement, template extraction
(cached on disk), all-to-all scoring per channel, fusion and reports.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import enhance, features, fusion_eval, imaging, matcher
from .enhance import EnhanceParams
from .fusion_eval import EvaluationError, ScoreRecord, ScoreSet
from .matcher import MatcherConfig

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".pgm", ".ppm")
DEFAULT_PATTERN = "{subject}_{finger}_{sample}"
EXTRACTOR_VERSION = "1"


class ManifestError(ValueError):
    """Unparseable file names, duplicate sample labels or missing files."""


class ConfigError(ValueError):
    """Invalid or unknown experiment settings."""


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    subject: str
    finger: str
    sample: str

    @property
    def sample_id(self) -> str:
        return f"{self.subject}_{self.finger}_{self.sample}"

    @property
    def class_key(self) -> tuple:
        return (self.subject, self.finger)


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple

    def __post_init__(self):
        entries = tuple(sorted(self.entries, key=lambda e: e.sample_id))
        seen = {}
        for e in entries:
            key = (e.subject, e.finger, e.sample)
            if key in seen:
                raise ManifestError(f"duplicate sample {key}: {seen[key].name} and {e.path.name}")
            seen[key] = e.path
            if not Path(e.path).is_file():
                raise ManifestError(f"missing file {e.path}")
        ids = [e.sample_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("sample ids collide after joining labels with '_'")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "root", Path(self.root))

    def __len__(self):
        return len(self.entries)

    def labels(self) -> list:
        """``(sample_id, class_key)`` for every entry, in id order."""
        return [(e.sample_id, e.class_key) for e in self.entries]

    def classes(self) -> dict:
        out = {}
        for e in self.entries:
            out.setdefault(e.class_key, []).append(e.sample_id)
        return out


def compile_pattern(pattern: str) -> re.Pattern:
    """Turn ``"{subject}_{finger}_{sample}"`` into an anchored regex over file stems.

    Fields match runs of characters other than the literal separator that
    follows them; all three field names are required.
    """
    names = re.findall(r"{(\w+)}", pattern)
    if sorted(names) != ["finger", "sample", "subject"]:
        raise ManifestError(f"pattern must name subject, finger and sample once each: {pattern!r}")
    parts = re.split(r"({\w+})", pattern)
    rx = ""
    for k, part in enumerate(parts):
        m = re.fullmatch(r"{(\w+)}", part)
        if m:
            nxt = parts[k + 1] if k + 1 < len(parts) else ""
            stop = re.escape(nxt[0]) if nxt else ""
            body = f"[^{stop}]+" if stop else ".+"
            rx += f"(?P<{m.group(1)}>{body})"
        else:
            rx += re.escape(part)
    return re.compile(rx + r"\Z")


def ingest(root, pattern: str = DEFAULT_PATTERN) -> DatasetManifest:
    """Scan ``root`` (non-recursively) for images named by ``pattern``.

    Non-image files are skipped with a warning; an image whose name does not
    fit the pattern is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"not a directory: {root}")
    rx = compile_pattern(pattern)
    entries = []
    for p in sorted(root.iterdir()):
        if not p.is_file():
            continue
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            log.warning("skipping non-image file %s", p.name)
            continue
        m = rx.match(p.stem)
        if not m:
            raise ManifestError(f"file name {p.name!r} does not match pattern {pattern!r}")
        entries.append(ManifestEntry(p, m["subject"], m["finger"], m["sample"]))
    return DatasetManifest(root, tuple(entries))


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class ExtractionParams:
    """Minutiae filtering knobs that sit on top of the enhancement stage."""

    d_min: float = 6.0
    border: float = 8.0
    trace_length: int = features.TRACE_LENGTH


@dataclass(frozen=True)
class ExperimentConfig:
    grayscale: str = "ordinary"
    gamma: float = imaging.DEFAULT_GAMMA
    channels: tuple = ("ridge", "valley", "fused")
    fusion_weight: float = 0.5
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    enhance: EnhanceParams = field(default_factory=EnhanceParams)
    extraction: ExtractionParams = field(default_factory=ExtractionParams)
    far_targets: tuple = (0.0001, 0.001, 0.01)
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        if self.grayscale not in ("ordinary", "luma"):
            raise ConfigError(f"grayscale must be 'ordinary' or 'luma', got {self.grayscale!r}")
        imaging.GammaParams(self.gamma)
        chans = tuple(dict.fromkeys(self.channels))
        if not chans:
            raise ConfigError("select at least one channel")
        bad = [c for c in chans if c not in fusion_eval.CHANNELS]
        if bad:
            raise ConfigError(f"unknown channels {bad}")
        object.__setattr__(self, "channels", tuple(c for c in fusion_eval.CHANNELS if c in chans))
        if not 0.0 <= self.fusion_weight <= 1.0:
            raise ConfigError("fusion_weight must lie in [0, 1]")
        targets = tuple(float(t) for t in self.far_targets)
        if any(not 0.0 < t <= 1.0 for t in targets):
            raise ConfigError("FAR targets must lie in (0, 1]")
        object.__setattr__(self, "far_targets", targets)
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def scored_channels(self) -> tuple:
        """Channels that need templates: fused pulls in both single channels."""
        if "fused" in self.channels:
            return ("ridge", "valley")
        return tuple(c for c in self.channels if c != "fused")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["far_targets"] = list(self.far_targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "matcher" in d:
                d["matcher"] = MatcherConfig.from_dict(d["matcher"])
            if "enhance" in d:
                d["enhance"] = _sub(EnhanceParams, d["enhance"], "enhance")
            if "extraction" in d:
                d["extraction"] = _sub(ExtractionParams, d["extraction"], "extraction")
            for k in ("channels", "far_targets"):
                if k in d:
                    d[k] = tuple(d[k])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def _sub(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {name} settings: {sorted(unknown)}")
    return cls(**d)


# ---------------------------------------------------------------- extraction

def prepare_gray(img, channel: str, grayscale: str = "ordinary",
                 gamma: float = imaging.DEFAULT_GAMMA) -> imaging.GrayImage:
    """Grayscale conversion, then inversion for the valley channel."""
    gray = imaging.to_gray(img, grayscale, gamma)
    if channel == "valley":
        gray = imaging.invert(gray)
    return gray


def extract_from_gray(gray: imaging.GrayImage, source_id: str = "",
                      params: EnhanceParams | None = None,
                      extraction: ExtractionParams | None = None):
    """Template and intermediate maps for one grayscale image."""
    extraction = extraction or ExtractionParams()
    maps = enhance.ridge_maps(gray, params)
    raw = features.extract_minutiae(maps, extraction.trace_length)
    kept = features.filter_spurious(raw, maps, extraction.d_min, extraction.border)
    sings = features.detect_singularities(maps.orientation, maps.mask)
    t = features.build_template(kept, sings, (gray.width, gray.height),
                                features.channel_for(gray.provenance), source_id)
    return t, maps


def extract_template(img, channel: str, config: ExperimentConfig | None = None,
                     source_id: str = "") -> features.Template:
    config = config or ExperimentConfig()
    gray = prepare_gray(img, channel, config.grayscale, config.gamma)
    t, _ = extract_from_gray(gray, source_id, config.enhance, config.extraction)
    return t


def extraction_key(image_bytes: bytes, channel: str, config: ExperimentConfig) -> str:
    """Content hash of the image and every setting that changes its template."""
    settings = {
        "version": EXTRACTOR_VERSION,
        "channel": channel,
        "grayscale": config.grayscale,
        "gamma": config.gamma if config.grayscale == "luma" else None,
        "enhance": asdict(config.enhance),
        "extraction": asdict(config.extraction),
    }
    h = hashlib.sha256(image_bytes)
    h.update(json.dumps(settings, sort_keys=True).encode())
    return h.hexdigest()


def _extract_job(job):
    path, sample_id, channel, config = job
    try:
        img = imaging.load_image(path)
        t = extract_template(img, channel, config, sample_id)
        return sample_id, channel, features.format_template(t), None
    except Exception as exc:  # recorded per image, never fatal to the run
        return sample_id, channel, None, f"{type(exc).__name__}: {exc}"


def _score_job(job):
    channel, rows, templates, cfg = job
    cyl = {}
    out = []
    for probe, gallery in rows:
        tp, tg = templates.get(probe), templates.get(gallery)
        if tp is None or tg is None:
            out.append((probe, gallery, 0.0, False))
            continue
        for t in (tp, tg):
            if id(t) not in cyl:
                cyl[id(t)] = matcher.CylinderSet.from_template(t, cfg)
        r = matcher.match_templates(tp, tg, cfg, cyl)
        out.append((probe, gallery, r.score, r.scorable))
    return channel, out


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class RunResult:
    reports: dict
    score_sets: dict
    errors: dict
    extracted: int = 0
    cached: int = 0


def _load_cached(path: Path, sample_id: str, channel: str) -> features.Template:
    t = features.load_template(path, sample_id)
    if t.channel != channel:
        # a valley template must come from an inverted image and vice versa
        raise features.TemplateFormatError(
            f"cached template {path.name} is {t.channel}, expected {channel}")
    return t


def build_templates(manifest: DatasetManifest, config: ExperimentConfig, out_dir) -> tuple:
    """Templates per channel, reusing the on-disk cache; returns (templates, errors, n_new, n_cached)."""
    cache = Path(out_dir) / "templates"
    cache.mkdir(parents=True, exist_ok=True)
    templates = {c: {} for c in config.scored_channels}
    errors = {}
    jobs, targets = [], {}
    n_cached = 0
    for e in manifest.entries:
        data = Path(e.path).read_bytes()
        for ch in config.scored_channels:
            key = extraction_key(data, ch, config)
            path = cache / f"{key}.rvt"
            if path.is_file():
                try:
                    templates[ch][e.sample_id] = _load_cached(path, e.sample_id, ch)
                    n_cached += 1
                    continue
                except features.TemplateFormatError as exc:
                    log.warning("discarding bad cache entry %s: %s", path.name, exc)
            targets[(e.sample_id, ch)] = path
            jobs.append((str(e.path), e.sample_id, ch, config))
    for sample_id, ch, text, err in _map(_extract_job, jobs, config.workers):
        if err is not None:
            errors[f"{sample_id}:{ch}"] = err
            log.warning("extraction failed for %s (%s): %s", sample_id, ch, err)
            continue
        targets[(sample_id, ch)].write_text(text, encoding="utf-8")
        templates[ch][sample_id] = features.parse_template(text, sample_id)
    return templates, errors, len(jobs), n_cached


def score_channel(manifest: DatasetManifest, templates: dict, channel: str,
                  config: ExperimentConfig) -> ScoreSet:
    """All-to-all scores for one channel; missing templates give unscorable pairs."""
    pairs = fusion_eval.enumerate_pairs(manifest.labels())
    labels = {(p, g): gen for p, g, gen in pairs}
    rows = [(p, g) for p, g, _ in pairs]
    n_chunks = max(1, config.workers * 4)
    size = max(1, math.ceil(len(rows) / n_chunks))
    jobs = [(channel, rows[i:i + size], templates, config.matcher)
            for i in range(0, len(rows), size)]
    recs = []
    for _, out in _map(_score_job, jobs, config.workers):
        for p, g, score, scorable in out:
            recs.append(ScoreRecord(p, g, labels[(p, g)], float(score), not scorable))
    return ScoreSet(tuple(recs), channel).sorted()


def run_experiment(manifest: DatasetManifest, config: ExperimentConfig,
                   out_dir=None) -> RunResult:
    """Extract, score, fuse and report; every artifact lands in ``out_dir``."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(manifest) < 2:
        raise ManifestError("need at least two samples to form a pair")
    templates, errors, n_new, n_cached = build_templates(manifest, config, out)
    sets = {}
    for ch in config.scored_channels:
        sets[ch] = score_channel(manifest, templates[ch], ch, config)
    if "fused" in config.channels:
        sets["fused"] = fusion_eval.fuse_scores(
            fusion_eval.normalize_scores(sets["ridge"]),
            fusion_eval.normalize_scores(sets["valley"]),
            config.fusion_weight).sorted()
    reports = {}
    for ch in config.channels:
        fusion_eval.write_scores(sets[ch], out / f"scores_{ch}.csv")
        reports[ch] = fusion_eval.evaluate(sets[ch], config.far_targets)
    emit_report(list(reports.values()), out, config.far_targets)
    errs = out / "errors.json"
    errs.write_text(json.dumps(errors, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(reports, {c: sets[c] for c in config.channels}, errors, n_new, n_cached)


# ---------------------------------------------------------------- reports

def _cell(v):
    if v is None:
        return ""
    return repr(float(v))


def summary_rows(reports: list, far_targets=None) -> tuple:
    """Header and rows of the per-channel summary table."""
    if far_targets is None:
        far_targets = sorted({t for r in reports for t in r.gar_at_far})
    by_channel = {r.channel: r for r in reports}
    header = ["channel", "eer"] + [f"gar_at_far_{t!r}" for t in far_targets] + \
             ["genuine", "imposter", "unscorable",
              "eer_improvement_vs_ridge", "eer_improvement_vs_valley"]
    rows = []
    for ch in fusion_eval.CHANNELS:
        r = by_channel.get(ch)
        if r is None:
            continue
        row = [ch, _cell(r.eer)] + [_cell(r.gar_at_far.get(t)) for t in far_targets]
        row += [str(r.counts[0]), str(r.counts[1]), str(r.unscorable)]
        for base in ("ridge", "valley"):
            if ch == "fused" and base in by_channel:
                row.append(_cell(fusion_eval.relative_improvement(by_channel[base].eer, r.eer)))
            else:
                row.append("")
        rows.append(row)
    return header, rows


def emit_report(reports: list, out_dir, far_targets=None) -> list:
    """JSON report and ROC CSV per channel plus ``summary.csv``; returns written paths."""
    if not reports:
        raise EvaluationError("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for r in reports:
        written.append(fusion_eval.write_report(r, out / f"report_{r.channel}.json"))
        written.append(fusion_eval.write_roc(r.roc, out / f"roc_{r.channel}.csv"))
    header, rows = summary_rows(reports, far_targets)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path = out / "summary.csv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    written.append(path)
    return written


def write_corpus(samples: list, out_dir) -> DatasetManifest:
    """Save synthetic color renders in manifest layout, ground truth under ``truth/``."""
    out = Path(out_dir)
    truth = out / "truth"
    truth.mkdir(parents=True, exist_ok=True)
    for s in samples:
        imaging.save_image(s.image, out / f"{s.sample_id}.png")
        (truth / f"{s.sample_id}.json").write_text(
            json.dumps(s.truth.to_dict(), indent=2) + "\n", encoding="utf-8")
    return ingest(out)
