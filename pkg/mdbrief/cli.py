"""CLI interface for mdbrief."""

import argparse
import json
import logging
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .config import default_threads, env_default, load_experiment
from .descriptor import (
    DEFAULT_DIM,
    DEFAULT_PATCH_SIZE,
    DEFAULT_SCALE_FACTOR,
    Variant,
    random_tests,
    read_descriptors,
    read_tests,
    write_descriptors,
    write_tests,
)
from .detector import detect_multiscale, read_keypoints, write_keypoints
from .errors import EXIT_OK, EXIT_USAGE, MdbriefError, UsageError, exit_code_for
from .evaluation import RateDenominator

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"Error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


class StageTimer:
    """Wall-clock durations of named pipeline stages."""

    def __init__(self) -> None:
        self.stages: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - start

    def report(self, keypoints: int = 0, matches: int = 0) -> str:
        lines = [f"{'stage':<12} {'total [ms]':>12} {'per item':>16}"]
        for name, seconds in self.stages.items():
            per = ""
            if name == "match" and matches:
                per = f"{seconds * 1e9 / matches:.1f} ns/match"
            elif keypoints:
                per = f"{seconds * 1e6 / keypoints:.1f} us/kp"
            lines.append(f"{name:<12} {seconds * 1e3:>12.3f} {per:>16}")
        return "\n".join(lines)


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _variant(name: str) -> Variant:
    try:
        return Variant(name.lower())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown variant '{name}' (choose from {', '.join(v.value for v in Variant)})"
        ) from None


def _pyramid_levels(width: int, height: int, levels: int, scale_factor: float) -> int:
    """Largest level count <= ``levels`` whose smallest level is still at least 16x16."""
    from .imageproc import MIN_LEVEL_SIZE

    n = 1
    while n < levels:
        s = scale_factor ** n
        if math.floor(width / s) < MIN_LEVEL_SIZE or math.floor(height / s) < MIN_LEVEL_SIZE:
            break
        n += 1
    return n


def _load_tests(args):
    if args.tests:
        return read_tests(args.tests)
    return random_tests(args.dim, args.patch_size, args.seed)


def _check_model_size(model, image) -> None:
    if (model.width, model.height) != (image.width, image.height):
        raise UsageError(
            f"calibration is for {model.width}x{model.height} images, image is {image.width}x{image.height}"
        )


# --- commands ---------------------------------------------------------------------

def cmd_detect(args):
    """Detect oriented multi-scale corners and write a keypoint file."""
    from .imageproc import build_pyramid, read_pgm

    image = read_pgm(args.image)
    timer = StageTimer()
    with timer.stage("detect"):
        levels = _pyramid_levels(image.width, image.height, args.levels, args.scale_factor)
        pyramid = build_pyramid(image, levels, args.scale_factor)
        kps = detect_multiscale(pyramid, args.n_target, args.threshold, args.n_contiguous,
                                threads=args.threads)
    write_keypoints(args.output, kps)
    print(f"{len(kps)} keypoints written to {args.output}")
    if args.timing:
        print(timer.report(keypoints=len(kps)))
    return EXIT_OK


def cmd_learn_tests(args):
    """Learn a low-correlation test set from a patch corpus."""
    from .learning import LearningPass, enumerate_candidate_tests, compute_variances, greedy_select
    from .learning import read_corpus, sort_by_variance, write_learning_log

    corpus = read_corpus(args.corpus)
    model = None
    if args.calib:
        from .camera import load_model

        model = load_model(args.calib)
        if not corpus.has_positions:
            raise UsageError(f"{args.corpus}: distorted learning needs patch positions in the manifest")
    if args.patch_size and args.patch_size != corpus.patch_size:
        raise UsageError(f"--patch-size {args.patch_size} but corpus patches are {corpus.patch_size}x{corpus.patch_size}")
    if args.sigma:
        corpus = corpus.smoothed(args.sigma)

    rotate = not args.no_orientation
    passes: List[LearningPass] = []
    timer = StageTimer()
    try:
        with timer.stage("enumerate"):
            candidates = enumerate_candidate_tests(corpus.patch_size, filtered=not args.no_filter)
        with timer.stage("variance"):
            stats = sort_by_variance(compute_variances(corpus, candidates, rotate, model, args.threads))
        with timer.stage("select"):
            tests = greedy_select(stats, corpus, args.dim, rotate_with_orientation=rotate, model=model, log=passes)
    finally:
        if args.log:
            write_learning_log(args.log, passes)
    write_tests(args.output, tests)
    print(f"{tests.dim} tests from {len(candidates)} candidates written to {args.output} "
          f"(final t_c={passes[-1].t_c:.1f})")
    if args.timing:
        print(timer.report())
    return EXIT_OK


def cmd_extract(args):
    """Describe keypoints with BRIEF, dBRIEF, mBRIEF or mdBRIEF."""
    from .extractor import DescriptorExtractor
    from .imageproc import read_pgm

    image = read_pgm(args.image)
    kps = read_keypoints(args.keypoints)
    tests = _load_tests(args)
    model = None
    if args.calib:
        from .camera import load_model

        model = load_model(args.calib)
        _check_model_size(model, image)
    elif args.variant.distorted:
        raise UsageError(f"variant {args.variant.value} needs --calib")

    options = dict(use_orientation=not args.no_orientation, sigma=args.sigma or None,
                   rot_magnitude=math.radians(args.rot_magnitude), seed=args.seed,
                   scale_factor=args.scale_factor, threads=args.threads)
    if model is None:
        extractor = DescriptorExtractor.uncalibrated(args.variant, tests, image.width, image.height, **options)
    else:
        extractor = DescriptorExtractor(args.variant, tests, model, **options)

    timer = StageTimer()
    with timer.stage("describe"):
        result = extractor.describe(image, kps)
    write_descriptors(args.output, result.keypoints, result.descriptors)
    print(f"{len(result)} {args.variant.value} descriptors written to {args.output} "
          f"({len(result.skipped)} keypoints skipped)")
    if args.timing:
        print(timer.report(keypoints=len(kps)))
    return EXIT_OK


def _load_descriptor_pair(args):
    kps_i, desc_i = read_descriptors(args.query)
    kps_j, desc_j = read_descriptors(args.train)
    if not desc_i or not desc_j:
        raise UsageError("descriptor files must not be empty")
    masked_i = {d.has_mask for d in desc_i}
    masked_j = {d.has_mask for d in desc_j}
    if len(masked_i | masked_j) > 1:
        raise UsageError("cannot compare masked descriptors with unmasked ones")
    return kps_i, desc_i, kps_j, desc_j, masked_i.pop() and not args.plain


def cmd_match(args):
    """Brute-force nearest-neighbour matching of two descriptor files."""
    from .matching import match_brute_force, write_matches

    _, desc_i, _, desc_j, masked = _load_descriptor_pair(args)
    timer = StageTimer()
    with timer.stage("match"):
        matches = match_brute_force(desc_i, desc_j, masked=masked, threshold=args.threshold,
                                    cross_check=args.cross_check, threads=args.threads)
    write_matches(args.output, matches)
    print(f"{len(matches)} matches written to {args.output}")
    if args.timing:
        print(timer.report(matches=len(desc_i) * len(desc_j)))
    return EXIT_OK


def _thresholds(masked: bool, dim: int, threshold_max: Optional[float], step: float) -> List[float]:
    """Bit thresholds 0..max; masked sweeps use the same grid scaled by 2/D."""
    top = dim if threshold_max is None else threshold_max
    count = int(math.floor(top / step + 1e-9)) + 1
    grid = [k * step for k in range(count)]
    if masked:
        return [t * 2.0 / dim for t in grid]
    return grid


def cmd_evaluate(args):
    """Ground truth, PR curve and distance histograms for one image pair."""
    from .camera import load_model
    from .evaluation import (
        Homography,
        bhattacharyya,
        build_ground_truth,
        distance_histograms,
        pr_curve,
        rate_denominator,
        recognition_rate,
        write_histogram_csv,
        write_pr_csv,
    )
    from .matching import match_brute_force

    kps_i, desc_i, kps_j, desc_j, masked = _load_descriptor_pair(args)
    model = load_model(args.calib)
    H = Homography.load(args.homography) if args.homography else Homography.identity()

    gt = build_ground_truth(kps_i, kps_j, model, H, args.radius)
    if not len(gt):
        raise MdbriefError("no ground-truth correspondences between the two keypoint sets")
    denominator = rate_denominator(args.denominator, kps_i, model, H)

    dim = desc_i[0].dim
    thresholds = _thresholds(masked, dim, args.threshold_max, args.threshold_step)
    points = pr_curve(desc_i, desc_j, gt, thresholds, masked=masked, cross_check=args.cross_check,
                      denominator=denominator, threads=args.threads)
    matches = match_brute_force(desc_i, desc_j, masked=masked, cross_check=args.cross_check, threads=args.threads)
    rate = recognition_rate(matches, gt, denominator)
    matching, nonmatching = distance_histograms(desc_i, desc_j, gt, masked=masked, threads=args.threads)
    overlap = None
    if matching.sum() and nonmatching.sum():
        overlap = bhattacharyya(matching, nonmatching)

    if args.pr_output:
        write_pr_csv(args.pr_output, points)
    if args.histogram_output:
        if overlap is None:
            raise MdbriefError("histogram needs both matching and non-matching pairs")
        write_histogram_csv(args.histogram_output, matching, nonmatching, overlap)

    summary = {
        "correspondences": len(gt),
        "matches": len(matches),
        "recognition_rate": rate,
        "bhattacharyya": overlap,
        "masked": masked,
        "pr_points": len(points),
    }
    if args.format == "json":
        print(json.dumps(summary, indent=2))
    else:
        print(f"Correspondences: {len(gt)}  Matches: {len(matches)}")
        print(f"Recognition rate: {rate:.4f}")
        if overlap is not None:
            print(f"Bhattacharyya coefficient: {overlap:.4f}")
    return EXIT_OK


def cmd_simulate(args):
    """Run the synthetic-sequence experiments of an experiment config."""
    from .evaluation import write_histogram_csv
    from .simulation import (
        build_sequence,
        experiment_tests,
        hamming_evolution,
        run_recognition_experiment,
        write_evolution_csv,
        write_recognition_csv,
    )

    config = load_experiment(args.config)
    if args.seed is not None:
        config.seed = args.seed
    variants = [Variant(v) for v in config.variants]
    tests = experiment_tests(config)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.experiment in ("evolution", "all"):
        seq = build_sequence(config)
        point = config.track_point or (config.start[0], config.start[1] + 40.0)
        table = hamming_evolution(seq, point, variants, tests, config.sigma, config.rot_magnitude_rad,
                                  config.seed, args.threads)
        write_evolution_csv(out_dir / "evolution.csv", table)
        final = ", ".join(f"{v.value}={table.column(v)[-1]:.1f}" for v in variants)
        print(f"[{config.name}] evolution over {len(seq)} views, final distances: {final}")

    if args.experiment in ("recognition", "all"):
        seq = build_sequence(config, views=config.recognition_views)
        result = run_recognition_experiment(seq, config.n_points, variants, tests, config.threshold,
                                            config.sigma, config.rot_magnitude_rad, config.seed, args.threads)
        write_recognition_csv(out_dir / "recognition.csv", result)
        hist_dir = out_dir / "histograms"
        hist_dir.mkdir(exist_ok=True)
        for (k, v), (matching, nonmatching) in sorted(result.histograms.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            write_histogram_csv(hist_dir / f"{v.value}_0-{k}.csv", matching, nonmatching, result.overlap[(k, v)])
        last = result.n_views - 1
        final = ", ".join(f"{v.value}={result.rates[(last, v)]:.3f}" for v in variants)
        print(f"[{config.name}] recognition over {result.n_views} views, final rates: {final}")
    return EXIT_OK


def cmd_fit_forward(args):
    """Add a fitted forward polynomial to a fisheye calibration."""
    from .camera import Calibration, FisheyeModel, create_model, fit_forward_poly

    calib = Calibration.load(args.calib)
    model = create_model(calib)
    if not isinstance(model, FisheyeModel):
        raise UsageError(f"{args.calib}: forward polynomials only apply to fisheye calibrations")
    coeffs = fit_forward_poly(model, args.degree)
    model.with_forward_poly(coeffs).to_calibration().save(args.output)
    print(f"forward polynomial of degree {args.degree} written to {args.output}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def _add_common(p, threads: bool = True, timing: bool = True) -> None:
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for progress, -vv for debug output")
    if threads:
        p.add_argument("--threads", type=int, default=default_threads(), metavar="N",
                       help="Worker threads (default: MDBRIEF_THREADS or all cores)")
    if timing:
        p.add_argument("--timing", action="store_true", help="Print per-stage timings")


def _add_test_options(p) -> None:
    p.add_argument("--tests", type=Path, help="Test-set file (default: random Gaussian tests)")
    p.add_argument("--dim", type=int, default=env_default("DIM", DEFAULT_DIM, int),
                   help="Number of random tests when --tests is not given (default: 256)")
    p.add_argument("--patch-size", type=int, default=DEFAULT_PATCH_SIZE,
                   help="Patch size S of random tests (default: 32)")


def _add_pair_options(p) -> None:
    p.add_argument("--query", type=Path, required=True, help="Descriptor file of image i")
    p.add_argument("--train", type=Path, required=True, help="Descriptor file of image j")
    p.add_argument("--cross-check", action="store_true", help="Keep only mutual nearest neighbours")
    p.add_argument("--plain", action="store_true", help="Ignore masks and use the plain Hamming distance")


def create_parser():
    """Create argument parser."""
    parser = ArgumentParser(
        prog="mdbrief",
        description="mdbrief: distortion-aware binary descriptors for calibrated wide-angle cameras",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Detect corners and describe them with distorted, masked tests
  mdbrief detect --image frame.pgm --output frame.kp
  mdbrief extract --image frame.pgm --keypoints frame.kp --calib config/calibrations/fisheye.calib \\
    --variant mdbrief --output frame.desc

  # Match and evaluate against a second frame
  mdbrief match --query a.desc --train b.desc --output matches.csv
  mdbrief evaluate --query a.desc --train b.desc --calib cam.calib --homography a_b.txt \\
    --pr-output pr.csv --histogram-output hist.csv

  # Learn 256 tests from a patch corpus
  mdbrief learn-tests --corpus patches/ --dim 256 --output learned.tests --log learn.csv

  # Simulated sequences
  mdbrief simulate --config config/experiments/fisheye.yaml --output-dir results/fisheye

Environment:
  MDBRIEF_THREADS, MDBRIEF_SEED, MDBRIEF_DIM, MDBRIEF_SIGMA, MDBRIEF_ROT_MAGNITUDE,
  MDBRIEF_THRESHOLD override the defaults of the matching flags.

Exit codes:
  0 = Success
  1 = Usage error
  2 = Input file could not be parsed
  3 = Runtime or camera-model domain error
"""
    )

    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    subparsers = parser.add_subparsers(dest="command", help="Commands")

    det = subparsers.add_parser("detect", help="Detect multi-scale oriented corners")
    det.add_argument("--image", type=Path, required=True, help="Input PGM image")
    det.add_argument("--output", type=Path, required=True, help="Keypoint file to write")
    det.add_argument("--n-target", type=int, default=500, help="Maximum number of keypoints (default: 500)")
    det.add_argument("--threshold", type=int, default=env_default("THRESHOLD", 20, int),
                     help="Segment-test intensity threshold (default: 20)")
    det.add_argument("--n-contiguous", type=int, default=9, help="Contiguous circle pixels, 9..12 (default: 9)")
    det.add_argument("--levels", type=int, default=8, help="Pyramid levels (default: 8)")
    det.add_argument("--scale-factor", type=float, default=DEFAULT_SCALE_FACTOR, help="Pyramid scale factor")
    _add_common(det)

    lrn = subparsers.add_parser("learn-tests", help="Learn a test set from a patch corpus")
    lrn.add_argument("--corpus", type=Path, required=True, help="Corpus directory with manifest.txt")
    lrn.add_argument("--output", type=Path, required=True, help="Test-set file to write")
    lrn.add_argument("--dim", type=int, default=env_default("DIM", DEFAULT_DIM, int), help="Number of tests to learn")
    lrn.add_argument("--patch-size", type=int, help="Expected patch size (default: taken from the corpus)")
    lrn.add_argument("--log", type=Path, help="CSV log of correlation-threshold passes")
    lrn.add_argument("--calib", type=Path, help="Learn distorted tests through this calibration")
    lrn.add_argument("--sigma", type=float, default=env_default("SIGMA", 2.0, float),
                     help="Gaussian smoothing of the patches, 0 disables (default: 2.0)")
    lrn.add_argument("--no-orientation", action="store_true", help="Do not rotate tests by patch orientation")
    lrn.add_argument("--no-filter", action="store_true", help="Keep border and out-of-range candidates")
    _add_common(lrn)

    ext = subparsers.add_parser("extract", help="Compute binary descriptors")
    ext.add_argument("--image", type=Path, required=True, help="Input PGM image")
    ext.add_argument("--keypoints", type=Path, required=True, help="Keypoint file")
    ext.add_argument("--output", type=Path, required=True, help="Descriptor file to write")
    ext.add_argument("--calib", type=Path, help="Camera calibration (required for dbrief and mdbrief)")
    ext.add_argument("--variant", type=_variant, default=Variant.MDBRIEF,
                     help="brief, dbrief, mbrief or mdbrief (default: mdbrief)")
    ext.add_argument("--no-orientation", action="store_true", help="Describe without rotating the tests")
    ext.add_argument("--sigma", type=float, default=env_default("SIGMA", 2.0, float),
                     help="Gaussian smoothing before sampling, 0 disables (default: 2.0)")
    ext.add_argument("--rot-magnitude", type=float, default=env_default("ROT_MAGNITUDE", 20.0, float),
                     help="Largest mask-learning rotation in degrees (default: 20)")
    ext.add_argument("--scale-factor", type=float, default=DEFAULT_SCALE_FACTOR, help="Pyramid scale factor of octaves")
    ext.add_argument("--seed", type=int, default=env_default("SEED", 0, int), help="Random seed (default: 0)")
    _add_test_options(ext)
    _add_common(ext)

    mt = subparsers.add_parser("match", help="Brute-force match two descriptor files")
    _add_pair_options(mt)
    mt.add_argument("--output", type=Path, required=True, help="Match CSV to write")
    mt.add_argument("--threshold", type=float, help="Largest accepted distance (default: none)")
    _add_common(mt)

    ev = subparsers.add_parser("evaluate", help="Recognition rate, PR curve and distance histograms")
    _add_pair_options(ev)
    ev.add_argument("--calib", type=Path, required=True, help="Camera calibration of both images")
    ev.add_argument("--homography", type=Path, help="Homography file i -> j (default: identity)")
    ev.add_argument("--radius", type=float, default=3.0, help="Ground-truth radius in pixels (default: 3)")
    ev.add_argument("--threshold-max", type=float, help="Largest threshold of the sweep in bits (default: D)")
    ev.add_argument("--threshold-step", type=float, default=1.0, help="Threshold step in bits (default: 1)")
    ev.add_argument("--denominator", choices=[d.value for d in RateDenominator],
                    default=RateDenominator.GROUND_TRUTH.value,
                    help="Divide by ground-truth pairs or by all projected keypoints")
    ev.add_argument("--pr-output", type=Path, help="PR-curve CSV to write")
    ev.add_argument("--histogram-output", type=Path, help="Distance-histogram CSV to write")
    ev.add_argument("--format", choices=["text", "json"], default="text")
    _add_common(ev)

    sim = subparsers.add_parser("simulate", help="Run synthetic-sequence experiments")
    sim.add_argument("--config", type=Path, required=True, help="Experiment config (key = value or YAML)")
    sim.add_argument("--output-dir", type=Path, required=True, metavar="DIR", help="Directory for the CSV tables")
    sim.add_argument("--experiment", choices=["evolution", "recognition", "all"], default="all")
    sim.add_argument("--seed", type=int, default=env_default("SEED", None, int), help="Override the config seed")
    _add_common(sim, timing=False)

    ff = subparsers.add_parser("fit-forward", help="Fit a forward polynomial to a fisheye calibration")
    ff.add_argument("--calib", type=Path, required=True, help="Fisheye calibration")
    ff.add_argument("--degree", type=int, default=8, help="Polynomial degree (default: 8)")
    ff.add_argument("--output", type=Path, required=True, help="Calibration file to write")
    _add_common(ff, threads=False, timing=False)

    return parser


def main(argv: Optional[List[str]] = None):
    """Entry point for CLI."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    _configure_logging(args.verbose)
    handlers = {
        "detect":      cmd_detect,
        "learn-tests": cmd_learn_tests,
        "extract":     cmd_extract,
        "match":       cmd_match,
        "evaluate":    cmd_evaluate,
        "simulate":    cmd_simulate,
        "fit-forward": cmd_fit_forward,
    }
    try:
        return handlers[args.command](args)
    except (MdbriefError, OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        if args.verbose:
            raise
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
