import math

import numpy as np
import pytest

from dfetrack import raster, synthgen
from dfetrack.errors import InvalidInputError
from dfetrack.synthgen import SynthSpec, generate, jitter_path, linear_ramp, sinusoidal_path


class TestSpec:
    def test_defaults_fill_paths(self):
        spec = SynthSpec(frame_count=5)
        assert len(spec.displacements) == 5
        assert spec.gains == (1.0,) * 5
        assert spec.feature == (35.5, 35.5)

    def test_window_escape_rejected(self):
        with pytest.raises(InvalidInputError):
            SynthSpec(width=64, height=64, frame_count=2,
                      displacements=((0.0, 0.0), (30.0, 0.0)))

    def test_nonpositive_gain_rejected(self):
        with pytest.raises(InvalidInputError):
            SynthSpec(frame_count=2, gains=(1.0, 0.0))


class TestGenerate:
    def test_zero_displacement_zero_noise_is_static(self):
        spec = SynthSpec(frame_count=4, noise_sigma=0.0)
        frames, truth = generate(spec)
        assert len(frames) == 4
        for f in frames[1:]:
            np.testing.assert_array_equal(f.samples, frames[0].samples)
        assert np.all(truth == truth[0])

    def test_ground_truth_is_feature_plus_displacement(self):
        disp = ((0.0, 0.0), (1.25, -2.5), (-3.0, 0.75))
        spec = SynthSpec(frame_count=3, displacements=disp, noise_sigma=0.0)
        frames, truth = generate(spec)
        for i, (dx, dy) in enumerate(disp):
            assert truth[i, 0] == spec.feature[0] + dx
            assert truth[i, 1] == spec.feature[1] + dy

    def test_subpixel_shift_matches_exhaustive_correlation_oracle(self):
        # Brute-force normalized cross-correlation of the warped frame
        # against subpixel-shifted templates on a 0.05 px grid.
        spec = SynthSpec(
            width=64, height=64, frame_count=2, texture_seed=3, noise_sigma=0.0,
            displacements=((0.0, 0.0), (0.25, -0.5)),
        )
        frames, truth = generate(spec)
        base = frames[0].samples[0]
        target = frames[1].samples[0]
        fx, fy = spec.feature
        half = 12

        def window_at(plane, cx, cy):
            ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(float)
            return raster.bilinear_sample_grid(plane, xs + cx, ys + cy)

        template = window_at(base, fx, fy)

        def ncc(shift_x, shift_y):
            w = window_at(target, fx + shift_x, fy + shift_y)
            a = template - template.mean()
            b = w - w.mean()
            return float(np.sum(a * b) / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))

        grid = np.arange(-1.0, 1.0001, 0.05)
        scores = [(ncc(sx, sy), sx, sy) for sy in grid for sx in grid]
        _, bx, by = max(scores)
        assert math.hypot(bx - 0.25, by + 0.5) < 0.1

    def test_sinusoidal_step_bound(self):
        # Analytic bound: |d_{i+1} - d_i| <= 2 A sin(w / 2) per axis.
        n, ax, ay, period = 60, 6.0, 2.0, 17.0
        path = np.asarray(sinusoidal_path(n, ax, ay, period))
        steps = np.abs(np.diff(path, axis=0))
        w = 2.0 * math.pi / period
        bound_x = 2.0 * ax * math.sin(w / 2.0)
        bound_y = 2.0 * ay * math.sin(w / 2.0)
        assert steps[:, 0].max() <= bound_x + 1e-9
        assert steps[:, 1].max() <= bound_y + 1e-9
        assert steps[:, 0].max() > 0.9 * bound_x  # bound is tight over a full cycle

    def test_illumination_only_sequence_keeps_truth_stationary(self):
        spec = SynthSpec(
            frame_count=5, noise_sigma=0.0,
            gains=(1.0, 1.05, 1.1, 1.15, 1.2),
            offsets=(0.0, 0.0125, 0.025, 0.0375, 0.05),
        )
        frames, truth = generate(spec)
        assert np.all(truth == truth[0])
        # Frames really do change even though the truth does not.
        assert not np.array_equal(frames[0].samples, frames[4].samples)

    def test_noise_is_per_frame_deterministic(self):
        spec = SynthSpec(frame_count=3, noise_sigma=0.02)
        a, _ = generate(spec)
        b, _ = generate(spec)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.samples, fb.samples)


class TestPaths:
    def test_jitter_path_starts_at_rest_and_respects_amplitude(self):
        path = np.asarray(jitter_path(50, 1.5, seed=3))
        assert tuple(path[0]) == (0.0, 0.0)
        assert np.abs(path).max() <= 1.5

    def test_linear_ramp_endpoints(self):
        ramp = linear_ramp(11, 1.0, 2.0)
        assert ramp[0] == 1.0 and ramp[-1] == 2.0
        assert ramp[5] == pytest.approx(1.5)

    def test_sinusoidal_starts_at_rest(self):
        path = sinusoidal_path(10, 4.0, 2.0, period=12.0)
        assert path[0] == pytest.approx((0.0, 0.0), abs=1e-12)


class TestExport:
    def test_frames_and_labels_written(self, tmp_path):
        spec = SynthSpec(frame_count=3, noise_sigma=0.0)
        frames, truth = generate(spec)
        out = tmp_path / "seq"
        synthgen.export_sequence(frames, truth, out)
        names = sorted(p.name for p in out.iterdir())
        assert names == ["frame_0000.png", "frame_0001.png", "frame_0002.png", "labels.csv"]
        lines = (out / "labels.csv").read_text().strip().splitlines()
        assert lines[0] == "frame,x,y"
        assert len(lines) == 4
