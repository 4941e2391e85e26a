import json
import os

import numpy as np
import pytest

from dfetrack import raster
from dfetrack.cli import main


def run(argv):
    return main([str(a) for a in argv])


def write_white_png(path):
    raster.write_image(raster.from_planes(np.ones((3, 2, 2)), raster.RGB01), path)


def make_sequence(tmp_path, n=5, seed=3, amplitude=1.0, name="frames"):
    spec = {
        "width": 64, "height": 64, "frame_count": n,
        "texture_seed": seed, "noise_seed": seed + 1,
        "feature": [32.0, 32.0],
        "path": {"kind": "jitter", "amplitude": amplitude, "seed": seed + 2},
        "noise_sigma": 0.004,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = tmp_path / name
    assert run(["synth", spec_path, out]) == 0
    return out


class TestConvert:
    def test_white_pixel_to_lab01(self, tmp_path):
        src = tmp_path / "white.png"
        dst = tmp_path / "white_lab.png"
        write_white_png(src)
        assert run(["convert", src, dst, "--to", "lab01"]) == 0
        out = raster.read_image(dst).samples[:, 0, 0]
        # 8-bit quantization bounds the round-trip of (1.0, 0.5, 0.5).
        assert abs(out[0] - 1.0) <= 0.5 / 255
        assert abs(out[1] - 0.5) <= 0.5 / 255 + 1e-9
        assert abs(out[2] - 0.5) <= 0.5 / 255 + 1e-9

    def test_gray_round_trip_idempotent(self, tmp_path):
        rng = np.random.default_rng(0)
        src = tmp_path / "in.png"
        raster.write_image(
            raster.from_planes(rng.uniform(0, 1, size=(3, 6, 6)), raster.RGB01), src
        )
        once = tmp_path / "g1.png"
        twice = tmp_path / "g2.png"
        assert run(["convert", src, once, "--to", "gray"]) == 0
        assert run(["convert", once, twice, "--to", "gray"]) == 0
        a = raster.read_image(once).samples
        b = raster.read_image(twice).samples
        np.testing.assert_array_equal(a, b)

    def test_batch_preserves_file_count(self, tmp_path):
        src = tmp_path / "batch"
        src.mkdir()
        for i in range(4):
            write_white_png(src / f"f{i}.png")
        dst = tmp_path / "out"
        assert run(["convert", src, dst, "--to", "cielab"]) == 0
        produced = sorted(p.name for p in dst.iterdir() if p.suffix == ".png")
        assert produced == [f"f{i}.png" for i in range(4)]

    def test_resize_flag(self, tmp_path):
        src = tmp_path / "in.png"
        write_white_png(src)
        dst = tmp_path / "small.png"
        assert run(["convert", src, dst, "--to", "gray", "--resize", "8x6"]) == 0
        out = raster.read_image(dst)
        assert (out.width, out.height) == (8, 6)

    def test_missing_file_is_io_error(self, tmp_path):
        assert run(["convert", tmp_path / "absent.png", tmp_path / "x.png", "--to", "gray"]) == 4


class TestSynthAndTrack:
    def test_track_with_labels_emits_full_report(self, tmp_path):
        frames = make_sequence(tmp_path)
        out = tmp_path / "out"
        code = run([
            "track", frames, out, "--labels", frames / "labels.csv",
            "--matcher", "pixel", "--condition", "pd_hand_mole", "--seed", "1",
        ])
        assert code == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "cumulative.svg", "pp.svg", "run_manifest.json",
            "sorted_errors.svg", "summary.json", "track.csv",
        ]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["frames"] == 4
        assert summary["mean_error"] < 1.5
        lines = (out / "track.csv").read_text().strip().splitlines()
        assert lines[0] == "frame,pred_x,pred_y,err_px,e_std,cumulative,ci"
        assert len(lines) == 5

    def test_track_without_labels_predictions_only(self, tmp_path):
        frames = make_sequence(tmp_path)
        out = tmp_path / "plain"
        code = run(["track", frames, out, "--matcher", "pixel", "--start", "32,32", "--seed", "2"])
        assert code == 0
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert lines[0] == "frame,pred_x,pred_y"
        assert len(lines) == 6

    def test_reruns_are_byte_identical(self, tmp_path):
        frames = make_sequence(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert run([
                "track", frames, out, "--labels", frames / "labels.csv",
                "--matcher", "pixel", "--condition", "pd_hand_mole", "--seed", "7",
            ]) == 0
        assert (out_a / "track.csv").read_bytes() == (out_b / "track.csv").read_bytes()
        assert (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()

    def test_lk_matcher_available(self, tmp_path):
        frames = make_sequence(tmp_path, seed=9)
        out = tmp_path / "lk"
        assert run([
            "track", frames, out, "--labels", frames / "labels.csv",
            "--matcher", "lk", "--condition", "pd_hand_mole", "--seed", "1",
        ]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mean_error"] < 2.0

    def test_synth_manifest_written(self, tmp_path):
        frames = make_sequence(tmp_path, name="seq")
        manifest = json.loads((frames / "run_manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert "dfetrack" in manifest["versions"]


class TestIngestTrainMatch:
    def test_full_pipeline_micro_model(self, tmp_path):
        rng = np.random.default_rng(5)
        imgdir = tmp_path / "imgs"
        imgdir.mkdir()
        from dfetrack import synthgen

        for i in range(3):
            tex = synthgen.skin_texture(50 + i, 64, 64, blob_center=(32.0, 32.0))
            raster.write_image(tex, imgdir / f"t{i}.png")

        manifest = tmp_path / "manifest.csv"
        assert run(["ingest", imgdir, manifest, "--stride", "16", "--heldout", "0.2", "--seed", "3"]) == 0
        lines = manifest.read_text().strip().splitlines()
        assert lines[0] == "image_path,cx,cy,split"
        assert len(lines) == 1 + 3 * 9  # 3 images, 3x3 grid at stride 16

        model_path = tmp_path / "m.dfe"
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"encoder_blocks": [[4, 17], [128, 15]], "seed": 0}))
        assert run([
            "train", manifest, model_path, "--image-dir", imgdir,
            "--epochs", "2", "--batch", "8", "--config", config, "--seed", "11",
        ]) == 0
        assert model_path.exists()
        losses = (str(model_path) + ".losses.csv")
        assert open(losses).readline().strip() == "epoch,mse"

        # match the planted blob in the same frame: prediction == reference
        out = tmp_path / "match"
        assert run([
            "match", model_path, imgdir / "t0.png", "32", "32", imgdir / "t0.png",
            "--out", out, "--emit-landscape", "--seed", "1",
        ]) == 0
        result = json.loads((out / "match.json").read_text())
        assert result["subpixel_pos"] == pytest.approx([32.0, 32.0], abs=1e-6)
        rows = (out / "landscape.csv").read_text().strip().splitlines()
        assert rows[0] == "x,y,ssr"
        assert len(rows) - 1 == 34 * 34  # (64-31+1)^2 centers
        assert (out / "landscape.svg").read_text().startswith("<svg")

        # match into a synthetically shifted frame: truth known exactly
        from dfetrack import synthgen as sg

        spec = sg.SynthSpec(
            width=64, height=64, frame_count=2, texture_seed=50,
            feature=(32.0, 32.0), displacements=((0.0, 0.0), (2.0, -1.0)),
            noise_sigma=0.0,
        )
        seq, truth = sg.generate(spec)
        raster.write_image(seq[0], tmp_path / "s0.png")
        raster.write_image(seq[1], tmp_path / "s1.png")
        out2 = tmp_path / "match2"
        assert run([
            "match", model_path, tmp_path / "s0.png", "32", "32",
            tmp_path / "s1.png", "--out", out2, "--seed", "1",
        ]) == 0
        got = json.loads((out2 / "match.json").read_text())["subpixel_pos"]
        err = np.hypot(got[0] - truth[1][0], got[1] - truth[1][1])
        assert err < 1.5


class TestCalibrate:
    def test_degenerate_input_rejected(self, tmp_path):
        path = tmp_path / "relabels.csv"
        rows = ["image_id,attempt,x,y"]
        for img in range(3):
            for a in range(4):
                rows.append(f"i{img},{a},10.0,20.0")
        path.write_text("\n".join(rows) + "\n")
        assert run(["calibrate", path]) == 2

    def test_paper_protocol_shape_accepted(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        path = tmp_path / "relabels.csv"
        rows = ["image_id,attempt,x,y"]
        for img in range(15):
            cx, cy = rng.uniform(40, 80, 2)
            for a in range(6):
                rows.append(f"i{img},{a},{cx + rng.normal(0, 1.0)},{cy + rng.normal(0, 1.3)}")
        path.write_text("\n".join(rows) + "\n")
        assert run(["calibrate", path, "--out", str(tmp_path / "model.json")]) == 0
        payload = json.loads((tmp_path / "model.json").read_text())
        assert payload["samples"] == 90
        assert abs(payload["sigma_x"] - 1.0) / 1.0 < 0.15
        assert abs(payload["sigma_y"] - 1.3) / 1.3 < 0.15


class TestReportCmd:
    def test_report_outputs(self, tmp_path):
        errors = tmp_path / "errors.csv"
        rng = np.random.default_rng(2)
        rows = ["frame,err_px"]
        for i in range(40):
            rows.append(f"{i},{abs(rng.normal(0, 1.0)):.4f}")
        errors.write_text("\n".join(rows) + "\n")
        out = tmp_path / "rep"
        assert run([
            "report", errors, "--condition", "pd_hand_mole", out,
            "--samples", "100000", "--seed", "5",
        ]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["frames"] == 40
        thr = report["thresholds"]
        assert set(thr) == {"0.5", "0.05", "0.01"}
        assert thr["0.01"]["threshold_px"] == pytest.approx(3.225, abs=0.05)
        assert 0 < thr["0.01"]["mc_stderr_px"] < 0.05
        for name in ("pp.csv", "pp.svg", "sorted_errors.csv", "sorted_errors.svg",
                     "cdf.csv", "cdf.svg"):
            assert (out / name).exists()
        cdf_rows = (out / "cdf.csv").read_text().strip().splitlines()
        assert cdf_rows[0] == "distance_px,probability"
        assert len(cdf_rows) == 201

    def test_unknown_condition_is_invalid_input(self, tmp_path):
        errors = tmp_path / "errors.csv"
        errors.write_text("frame,err_px\n0,1.0\n")
        assert run(["report", errors, "--condition", "nope", tmp_path / "rep"]) == 2


class TestExitCodes:
    def test_invalid_input_is_2(self, tmp_path):
        frames = make_sequence(tmp_path, n=2)
        # start point too close to the border for a 31px window
        assert run(["track", frames, tmp_path / "o", "--matcher", "pixel", "--start", "3,3"]) == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["--version"])
        assert exc.value.code == 0
