"""Tests for the mdbrief command line."""
import json
from pathlib import Path

import pytest

from mdbrief.cli import _pyramid_levels, _thresholds, create_parser, main
from mdbrief.descriptor import read_descriptors, read_tests
from mdbrief.learning import write_corpus
from mdbrief_helpers import random_corpus, save_pgm, textured_image

CALIBRATIONS = Path(__file__).resolve().parents[1] / "config" / "calibrations"

PINHOLE = "model = pinhole\nlambda = 60\nprincipal_point = 99.5 79.5\nsize = 200 160\n"


@pytest.fixture
def workspace(tmp_path):
    image = save_pgm(tmp_path, "frame.pgm", textured_image(200, 160, seed=31))
    calib = tmp_path / "cam.calib"
    calib.write_text(PINHOLE)
    return tmp_path, image, calib


def detect(tmp_path, image):
    kp = tmp_path / "frame.kp"
    assert main(["detect", "--image", str(image), "--output", str(kp), "--threshold", "10",
                 "--levels", "1", "--n-target", "80", "--threads", "1"]) == 0
    return kp


def extract(tmp_path, image, kp, variant, name, calib=None):
    out = tmp_path / name
    argv = ["extract", "--image", str(image), "--keypoints", str(kp), "--output", str(out),
            "--variant", variant, "--dim", "64", "--threads", "1"]
    if calib is not None:
        argv += ["--calib", str(calib)]
    return main(argv), out


def test_no_command_prints_help(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["extract"],
    ["extract", "--image", "a.pgm", "--keypoints", "a.kp", "--output", "a.desc", "--variant", "orb"],
    ["evaluate", "--query", "a", "--train", "b", "--calib", "c", "--denominator", "some"],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    assert excinfo.value.code == 1


def test_parser_knows_every_command():
    parser = create_parser()
    for command in ("detect", "learn-tests", "extract", "match", "evaluate", "simulate", "fit-forward"):
        args = parser.parse_args(_minimal(command))
        assert args.command == command


def _minimal(command):
    return {
        "detect": ["detect", "--image", "a", "--output", "b"],
        "learn-tests": ["learn-tests", "--corpus", "c", "--output", "t"],
        "extract": ["extract", "--image", "a", "--keypoints", "k", "--output", "d"],
        "match": ["match", "--query", "a", "--train", "b", "--output", "m"],
        "evaluate": ["evaluate", "--query", "a", "--train", "b", "--calib", "c"],
        "simulate": ["simulate", "--config", "c", "--output-dir", "o"],
        "fit-forward": ["fit-forward", "--calib", "c", "--output", "o"],
    }[command]


def test_pipeline(workspace, capsys):
    tmp_path, image, calib = workspace
    kp = detect(tmp_path, image)
    assert kp.read_text().startswith("keypoints v1")

    code, desc_a = extract(tmp_path, image, kp, "mdbrief", "a.desc", calib)
    assert code == 0
    code, desc_b = extract(tmp_path, image, kp, "mdbrief", "b.desc", calib)
    assert code == 0
    kps, descs = read_descriptors(desc_a)
    assert len(kps) == len(descs) > 0
    assert all(d.has_mask and d.dim == 64 for d in descs)

    matches = tmp_path / "matches.csv"
    assert main(["match", "--query", str(desc_a), "--train", str(desc_b), "--output", str(matches),
                 "--threads", "1"]) == 0
    assert matches.read_text().splitlines()[0] == "index_i,index_j,distance"

    capsys.readouterr()
    pr, hist = tmp_path / "pr.csv", tmp_path / "hist.csv"
    assert main(["evaluate", "--query", str(desc_a), "--train", str(desc_b), "--calib", str(calib),
                 "--pr-output", str(pr), "--histogram-output", str(hist), "--format", "json",
                 "--threads", "1"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["masked"] is True
    assert summary["correspondences"] > 0
    assert summary["recognition_rate"] >= 0.9
    assert pr.read_text().startswith("threshold,one_minus_precision,recall")
    assert hist.read_text().startswith("bin,matching_freq,nonmatching_freq")


def test_reruns_write_identical_files(workspace):
    tmp_path, image, calib = workspace
    outputs = []
    for run, threads in (("one", "1"), ("two", "3")):
        kp = tmp_path / f"{run}.kp"
        assert main(["detect", "--image", str(image), "--output", str(kp), "--threshold", "10",
                     "--n-target", "80", "--threads", threads]) == 0
        desc = tmp_path / f"{run}.desc"
        assert main(["extract", "--image", str(image), "--keypoints", str(kp), "--output", str(desc),
                     "--variant", "mdbrief", "--dim", "64", "--calib", str(calib), "--threads", threads]) == 0
        matches = tmp_path / f"{run}.csv"
        assert main(["match", "--query", str(desc), "--train", str(desc), "--output", str(matches),
                     "--threads", threads]) == 0
        outputs.append([path.read_bytes() for path in (kp, desc, matches)])
    assert outputs[0] == outputs[1]


def test_evaluate_over_all_visible_keypoints(workspace, capsys):
    tmp_path, image, calib = workspace
    kp = detect(tmp_path, image)
    _, desc = extract(tmp_path, image, kp, "dbrief", "d.desc", calib)
    capsys.readouterr()
    rates = []
    for mode in ("ground-truth", "all"):
        assert main(["evaluate", "--query", str(desc), "--train", str(desc), "--calib", str(calib),
                     "--denominator", mode, "--format", "json", "--threads", "1"]) == 0
        rates.append(json.loads(capsys.readouterr().out)["recognition_rate"])
    # every keypoint of a self-pair has a correspondence
    assert rates[0] == rates[1] >= 0.9


def test_plain_extract_without_calibration(workspace):
    tmp_path, image, _ = workspace
    kp = detect(tmp_path, image)
    code, out = extract(tmp_path, image, kp, "brief", "plain.desc")
    assert code == 0
    _, descs = read_descriptors(out)
    assert not any(d.has_mask for d in descs)


def test_distorted_variant_needs_calibration(workspace, capsys):
    tmp_path, image, _ = workspace
    kp = detect(tmp_path, image)
    code, _ = extract(tmp_path, image, kp, "dbrief", "d.desc")
    assert code == 1
    assert "needs --calib" in capsys.readouterr().err


def test_calibration_size_must_match_image(workspace):
    tmp_path, image, _ = workspace
    kp = detect(tmp_path, image)
    code, _ = extract(tmp_path, image, kp, "dbrief", "d.desc", CALIBRATIONS / "pinhole.calib")
    assert code == 1


def test_mixed_masked_and_plain_descriptors(workspace):
    tmp_path, image, calib = workspace
    kp = detect(tmp_path, image)
    _, plain = extract(tmp_path, image, kp, "brief", "plain.desc")
    _, masked = extract(tmp_path, image, kp, "mbrief", "masked.desc", calib)
    assert main(["match", "--query", str(plain), "--train", str(masked),
                 "--output", str(tmp_path / "m.csv")]) == 1


def test_malformed_inputs_exit_2(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n12 x\n255\n")
    assert main(["detect", "--image", str(bad), "--output", str(tmp_path / "k")]) == 2
    assert main(["detect", "--image", str(tmp_path / "missing.pgm"), "--output", str(tmp_path / "k")]) == 2


def test_detect_timing(workspace, capsys):
    tmp_path, image, _ = workspace
    assert main(["detect", "--image", str(image), "--output", str(tmp_path / "k"), "--levels", "1",
                 "--threshold", "10", "--timing"]) == 0
    out = capsys.readouterr().out
    assert "keypoints written" in out
    assert "detect" in out and "us/kp" in out


def test_learn_tests(tmp_path):
    write_corpus(tmp_path / "corpus", random_corpus(30, 16, seed=12))
    tests, log = tmp_path / "learned.tests", tmp_path / "learn.csv"
    assert main(["learn-tests", "--corpus", str(tmp_path / "corpus"), "--output", str(tests),
                 "--dim", "8", "--sigma", "0", "--log", str(log), "--threads", "1"]) == 0
    learned = read_tests(tests)
    assert (learned.dim, learned.patch_size) == (8, 16)
    assert log.read_text().startswith("pass,t_c,admitted")


def test_learn_tests_distorted_needs_positions(tmp_path, workspace):
    _, _, calib = workspace
    write_corpus(tmp_path / "corpus", random_corpus(10, 16))
    assert main(["learn-tests", "--corpus", str(tmp_path / "corpus"), "--output", str(tmp_path / "t"),
                 "--calib", str(calib)]) == 1


def test_fit_forward(tmp_path):
    out = tmp_path / "fisheye_fwd.calib"
    assert main(["fit-forward", "--calib", str(CALIBRATIONS / "fisheye.calib"), "--degree", "6",
                 "--output", str(out)]) == 0
    assert "poly_forward" in out.read_text()
    assert main(["fit-forward", "--calib", str(CALIBRATIONS / "pinhole.calib"),
                 "--output", str(tmp_path / "x.calib")]) == 1


@pytest.mark.parametrize("masked,expected", [
    (False, [0.0, 8.0, 16.0]),
    (True, [0.0, 0.25, 0.5]),
])
def test_threshold_grid(masked, expected):
    assert _thresholds(masked, 64, 16.0, 8.0) == pytest.approx(expected)


def test_pyramid_levels_stop_at_minimum_size():
    assert _pyramid_levels(640, 480, 8, 1.2) == 8
    assert _pyramid_levels(20, 20, 8, 1.2) == 2


@pytest.mark.experiment
def test_simulate(tmp_path, workspace):
    _, _, calib = workspace
    config = tmp_path / "tiny.yaml"
    config.write_text(
        f"name: tiny\nmodel: {calib}\ntexture_size: 384\nstart: [192, 152, -60]\nstep: 2\n"
        "views: 3\nrecognition_views: 2\nn_points: 5\nvariants: [brief, mdbrief]\n"
        "dim: 64\npatch_size: 16\nthreshold: 10\n"
    )
    out = tmp_path / "results"
    assert main(["simulate", "--config", str(config), "--output-dir", str(out), "--threads", "1"]) == 0
    assert (out / "evolution.csv").read_text().splitlines()[0] == "view,brief,mdbrief"
    assert len((out / "recognition.csv").read_text().splitlines()) == 3
    assert sorted(p.name for p in (out / "histograms").iterdir()) == [
        "brief_0-0.csv", "brief_0-1.csv", "mdbrief_0-0.csv", "mdbrief_0-1.csv",
    ]
