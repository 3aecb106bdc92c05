"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import features, fusion_eval, imaging, matcher, pipeline, synth
from .features import TemplateFormatError
from .fusion_eval import EvaluationError
from .imaging import ImageError
from .pipeline import ConfigError, ExperimentConfig, ManifestError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DATA_ERRORS = (ImageError, TemplateFormatError, EvaluationError, ManifestError, ConfigError,
               matcher.ConfigMismatchError, FileNotFoundError, IsADirectoryError, PermissionError)


def _config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Ridge and valley fingerprint templates, matching and evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("src", type=click.Path(dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@click.option("--grayscale", type=click.Choice(["ordinary", "luma"]), default="ordinary")
@click.option("--gamma", type=float, default=imaging.DEFAULT_GAMMA, show_default=True)
@click.option("--invert", is_flag=True, help="Write the photometric inverse.")
@click.option("--size", nargs=2, type=int, default=None, metavar="W H",
              help="Area-averaged downsampling target.")
def convert(src, dst, grayscale, gamma, invert, size):
    """Convert an image to grayscale, optionally inverted and downsampled."""
    gray = imaging.to_gray(imaging.load_image(src), grayscale, gamma)
    if size:
        gray = imaging.downsample(gray, *size)
    if invert:
        gray = imaging.invert(gray)
    imaging.save_image(gray, dst)
    click.echo(f"{dst} ({gray.provenance})")


@main.command()
@click.argument("src", type=click.Path(dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@click.option("--channel", type=click.Choice(["ridge", "valley"]), default="ridge")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--grayscale", type=click.Choice(["ordinary", "luma"]), default=None,
              help="Overrides the config file.")
@click.option("--debug-dir", type=click.Path(file_okay=False), default=None,
              help="Dump orientation CSV and binary/skeleton images here.")
def extract(src, dst, channel, config_path, grayscale, debug_dir):
    """Extract a template file from an image."""
    cfg = _config(config_path)
    if grayscale:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "grayscale": grayscale})
    img = imaging.load_image(src)
    gray = pipeline.prepare_gray(img, channel, cfg.grayscale, cfg.gamma)
    t, maps = pipeline.extract_from_gray(gray, Path(src).stem, cfg.enhance, cfg.extraction)
    features.save_template(t, dst)
    if debug_dir:
        _dump_debug(Path(debug_dir), Path(src).stem + f"_{channel}", gray, maps, t)
    click.echo(f"{dst}: {len(t.minutiae)} minutiae, {len(t.singularities)} singular points")


def _dump_debug(out: Path, stem: str, gray, maps, template):
    out.mkdir(parents=True, exist_ok=True)
    with (out / f"{stem}_orientation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("block_x", "block_y", "angle_rad", "coherence"))
        for bx, by, a, c in maps.orientation.to_csv_rows():
            w.writerow((bx, by, repr(a), repr(c)))
    imaging.save_image(gray, out / f"{stem}_gray.png")
    imaging.save_image(255.0 * (1 - maps.binary.astype(float)), out / f"{stem}_binary.png")
    imaging.save_image(255.0 * (1 - maps.skeleton.astype(float)), out / f"{stem}_skeleton.png")
    imaging.save_image(255.0 * maps.mask.astype(float), out / f"{stem}_mask.png")
    overlay = features.render_overlay(gray.plane, template)
    imaging.save_image(overlay.astype(np.float64), out / f"{stem}_overlay.png")


@main.command()
@click.argument("probe", type=click.Path(dir_okay=False))
@click.argument("gallery", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
def match(probe, gallery, config_path):
    """Score two template files; prints the score and whether it is scorable."""
    cfg = _config(config_path)
    a = features.load_template(probe)
    b = features.load_template(gallery)
    r = matcher.match_templates(a, b, cfg.matcher)
    click.echo(json.dumps({"score": r.score, "scorable": r.scorable, "pairs": r.n_pairs}))


@main.command("synth")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--fingers", type=int, default=20, show_default=True)
@click.option("--impressions", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--period", type=float, default=9.0, show_default=True)
@click.option("--size", type=int, default=256, show_default=True, help="Square image side.")
@click.option("--elevation", type=float, default=float(np.pi / 4), show_default=True)
@click.option("--noise", type=float, default=3.0, show_default=True)
def synth_cmd(out_dir, fingers, impressions, seed, period, size, elevation, noise):
    """Generate a contactless synthetic corpus with ground-truth JSON per image."""
    try:
        params = synth.CorpusParams(n_fingers=fingers, n_impressions=impressions, period=period,
                                    dims=(size, size), elevation=elevation, noise_sigma=noise,
                                    seed=seed)
        samples = synth.generate_corpus(params)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    m = pipeline.write_corpus(samples, out_dir)
    click.echo(f"{len(m)} images in {out_dir}")


@main.command()
@click.argument("root", type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: config output_dir).")
@click.option("--workers", type=int, default=None, help="Overrides the config file.")
@click.option("--grayscale", type=click.Choice(["ordinary", "luma"]), default=None)
@click.option("--pattern", default=pipeline.DEFAULT_PATTERN, show_default=True)
def run(root, config_path, out_dir, workers, grayscale, pattern):
    """Run the full experiment over a dataset directory."""
    cfg = _config(config_path)
    over = {}
    if workers is not None:
        over["workers"] = workers
    if grayscale:
        over["grayscale"] = grayscale
    if over:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **over})
    manifest = pipeline.ingest(root, pattern)
    res = pipeline.run_experiment(manifest, cfg, out_dir)
    for ch, r in res.reports.items():
        click.echo(f"{ch}: EER {r.eer:.6f} genuine {r.counts[0]} imposter {r.counts[1]} "
                   f"unscorable {r.unscorable}")
    if res.errors:
        click.echo(f"{len(res.errors)} extraction failures, see errors.json", err=True)


@main.command()
@click.argument("score_files", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--far", "far_targets", type=float, multiple=True,
              help="FAR targets (repeatable); default 0.0001, 0.001, 0.01.")
def report(score_files, out_dir, far_targets):
    """Recompute metrics from score CSVs named scores_<channel>.csv."""
    targets = tuple(far_targets) or ExperimentConfig().far_targets
    reports = []
    for f in score_files:
        stem = Path(f).stem
        channel = stem.split("_", 1)[1] if stem.startswith("scores_") else "ridge"
        if channel not in fusion_eval.CHANNELS:
            raise click.UsageError(f"cannot infer channel from {f}")
        reports.append(fusion_eval.evaluate(fusion_eval.read_scores(f, channel), targets))
    pipeline.emit_report(reports, out_dir, targets)
    for r in reports:
        click.echo(f"{r.channel}: EER {r.eer:.6f}")


def run_cli(argv=None) -> int:
    """Invoke the CLI and map failures onto the documented exit codes."""
    try:
        main.main(args=argv, prog_name="ridgevalley", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_INTERNAL
    return EXIT_OK


def entry_point():
    sys.exit(run_cli())


if __name__ == "__main__":
    entry_point()
