
import numpy as np
import pytest

from dfetrack import evalstat, matchcore, synthgen, tracker
from dfetrack.errors import InvalidInputError
from dfetrack.evalstat import ErrorModel
from dfetrack.matchcore import unmatched_error
from dfetrack.synthgen import SynthSpec, generate
from dfetrack.tracker import (
    ASSIGN_DIAGONAL,
    FIXED_REFERENCE,
    HOLD_LAST,
    PREVIOUS_FRAME,
    TrackScheme,
    build_report,
    ci_line,
    make_matcher,
    nn_within_threshold,
    track,
)

PD = ErrorModel("pd_hand_mole", 1.162, 0.915)


def constant_sequence(n=5, seed=1):
    # Integer feature center: descriptor matchers bind references on the
    # pixel lattice, so zero-error assertions need a lattice-point truth.
    spec = SynthSpec(width=64, height=64, frame_count=n, texture_seed=seed,
                     feature=(32.0, 32.0), noise_sigma=0.0)
    return generate(spec)


class TestCiLine:
    def test_first_frame_value(self):
        line = ci_line(3)
        assert line[0] == pytest.approx(9.210, abs=1e-3)

    def test_strictly_increasing(self):
        line = ci_line(40)
        assert all(b > a for a, b in zip(line, line[1:]))

    def test_frame_130_matches_incomplete_gamma_oracle(self):
        from scipy import stats as scipy_stats

        line = ci_line(130)
        assert line[-1] == pytest.approx(float(scipy_stats.chi2.ppf(0.99, 260)), abs=1e-6)


class TestSchemes:
    def test_invalid_mode_rejected(self):
        with pytest.raises(InvalidInputError):
            TrackScheme(mode="sometimes")

    def test_ratio_threshold_range(self):
        with pytest.raises(InvalidInputError):
            TrackScheme(ratio_threshold=1.5)


class TestTrackStationary:
    def test_identical_frames_give_zero_errors_for_every_matcher(self):
        frames, truth = constant_sequence(4)
        for kind in ("pixel", "lk"):
            matcher = make_matcher(kind)
            preds, report = track(
                frames, tuple(truth[0]), matcher, TrackScheme(), labels=truth, model=PD
            )
            assert report is not None
            assert report.max_error < 1e-6, kind
            assert all(p.matched for p in preds)

    def test_previous_equals_fixed_on_two_frames(self):
        spec = SynthSpec(
            width=64, height=64, frame_count=2, texture_seed=3,
            displacements=((0.0, 0.0), (1.6, -0.9)), noise_sigma=0.0,
        )
        frames, truth = generate(spec)
        for kind in ("pixel", "lk"):
            fixed = track(frames, tuple(truth[0]), make_matcher(kind),
                          TrackScheme(mode=FIXED_REFERENCE), labels=truth, model=PD)
            prev = track(frames, tuple(truth[0]), make_matcher(kind),
                         TrackScheme(mode=PREVIOUS_FRAME), labels=truth, model=PD)
            assert fixed[0][1].x == pytest.approx(prev[0][1].x, abs=1e-12)
            assert fixed[0][1].y == pytest.approx(prev[0][1].y, abs=1e-12)

    def test_start_without_window_rejected(self):
        frames, truth = constant_sequence(2)
        with pytest.raises(InvalidInputError):
            track(frames, (3.0, 3.0), make_matcher("pixel"), TrackScheme())


class TestTrackAccuracy:
    def test_pixel_matcher_follows_integer_shifts(self):
        disp = tuple((float(i % 3), float(-(i % 2))) for i in range(6))
        spec = SynthSpec(width=64, height=64, frame_count=6, texture_seed=5,
                         feature=(32.0, 32.0), displacements=disp, noise_sigma=0.0)
        frames, truth = generate(spec)
        preds, report = track(frames, tuple(truth[0]), make_matcher("pixel"),
                              TrackScheme(), labels=truth, model=PD)
        assert report.mean_error < 0.5
        assert not report.diverged

    def test_lk_matcher_follows_subpixel_drift(self):
        disp = tuple((0.3 * i, -0.2 * i) for i in range(5))
        spec = SynthSpec(width=96, height=96, frame_count=5, texture_seed=6,
                         feature=(48.0, 48.0), displacements=disp, noise_sigma=0.0)
        frames, truth = generate(spec)
        preds, report = track(frames, tuple(truth[0]),
                              make_matcher("lk"), TrackScheme(), labels=truth, model=PD)
        assert report.mean_error < 0.2


class TestRatioThreshold:
    def _twin_feature_frames(self):
        # Two identical dark blobs on a near-flat background; later frames
        # shift by half a pixel so neither lattice position matches exactly
        # and the nearest/second-nearest SSRs become nearly equal.
        from dfetrack import raster

        base = synthgen.skin_texture(11, 96, 64, contrast=0.003, smoothness=3.0)
        planes = np.asarray(base.samples).copy()
        ys, xs = np.mgrid[0:64, 0:96].astype(float)
        for bx in (30.0, 66.0):
            blob = 0.3 * np.exp(-((xs - bx) ** 2 + (ys - 32.0) ** 2) / (2 * 2.5**2))
            planes -= blob[None]
        planes = np.clip(planes, 0, 1)
        shifted = np.empty_like(planes)
        sx = np.clip(xs - 0.5, 0, 95)
        for c in range(3):
            shifted[c] = raster.bilinear_sample_grid(planes[c], sx, ys)
        first = raster.from_planes(planes, raster.RGB01)
        moved = raster.from_planes(shifted, raster.RGB01)
        frames = [first, moved, moved]
        truth = np.array([[30.0, 32.0], [30.5, 32.0], [30.5, 32.0]])
        return frames, truth

    def test_ambiguity_really_raises_the_ratio(self):
        frames, _ = self._twin_feature_frames()
        matcher = make_matcher("pixel")
        matcher.set_reference(frames[0], (30, 32))
        result = matcher.locate(frames[1])
        assert result.nn_ratio > 0.8

    def test_ambiguous_feature_truncates_to_diagonal_error(self):
        frames, truth = self._twin_feature_frames()
        scheme = TrackScheme(ratio_threshold=0.8, unmatched_policy=ASSIGN_DIAGONAL)
        preds, report = track(frames, (30, 32), make_matcher("pixel"), scheme,
                              labels=truth, model=PD)
        diag = unmatched_error(96, 64)
        assert any(not p.matched for p in preds[1:])
        assert report.diverged
        assert report.max_error == pytest.approx(diag)

    def test_hold_last_keeps_true_error(self):
        frames, truth = self._twin_feature_frames()
        scheme = TrackScheme(ratio_threshold=0.8, unmatched_policy=HOLD_LAST)
        preds, report = track(frames, (30, 32), make_matcher("pixel"), scheme,
                              labels=truth, model=PD)
        assert any(not p.matched for p in preds[1:])
        assert report.max_error < 1.0  # held position sits half a pixel off
        assert not report.diverged

    def test_unambiguous_feature_passes_the_same_threshold(self):
        frames, truth = constant_sequence(3, seed=12)
        scheme = TrackScheme(ratio_threshold=0.8)
        preds, report = track(frames, tuple(truth[0]), make_matcher("pixel"), scheme,
                              labels=truth, model=PD)
        assert all(p.matched for p in preds)


class TestReport:
    def test_zero_errors(self):
        frames, truth = constant_sequence(4)
        _, report = track(frames, tuple(truth[0]), make_matcher("pixel"),
                          TrackScheme(), labels=truth, model=PD)
        assert report.mean_error == pytest.approx(0.0, abs=1e-9)
        assert report.max_error == pytest.approx(0.0, abs=1e-9)
        assert report.cumulative[-1] == pytest.approx(0.0, abs=1e-12)

    def test_sorting_mean_max(self):
        preds = [
            tracker.FramePrediction(frame=i, x=0.0, y=0.0, matched=True)
            for i in range(4)
        ]
        labels = np.array([[0.0, 0.0], [3.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        errors = [3.0, 1.0, 2.0]
        report = build_report(preds, errors, labels, PD, diagonal=516.14,
                              cdf=evalstat.simulate_distance_cdf(PD, 10**4, seed=1))
        assert report.sorted_errors == [3.0, 2.0, 1.0]
        assert report.mean_error == pytest.approx(2.0)
        assert report.max_error == pytest.approx(3.0)

    def test_cumulative_series_is_internally_consistent(self):
        disp = tuple((float(i % 2), 0.25 * i) for i in range(6))
        spec = SynthSpec(width=64, height=64, frame_count=6, texture_seed=13,
                         displacements=disp, noise_sigma=0.01)
        frames, truth = generate(spec)
        _, report = track(frames, tuple(truth[0]), make_matcher("pixel"),
                          TrackScheme(), labels=truth, model=PD)
        recomputed = np.cumsum(report.e_std)
        np.testing.assert_allclose(report.cumulative, recomputed, atol=1e-12)
        assert all(b >= a for a, b in zip(report.cumulative, report.cumulative[1:]))
        assert report.mean_error <= report.max_error

    def test_model_generated_errors_stay_below_ci_with_high_probability(self):
        # Calibration: cumulative standardized errors of model-drawn noise
        # end below the 99% line in the vast majority of replicates.
        rng = np.random.default_rng(14)
        n, replicates = 40, 300
        line = ci_line(n)
        below = 0
        for _ in range(replicates):
            dx = rng.normal(0, PD.sigma_x, n)
            dy = rng.normal(0, PD.sigma_y, n)
            cum = np.cumsum((dx / PD.sigma_x) ** 2 + (dy / PD.sigma_y) ** 2)
            below += cum[-1] <= line[-1]
        assert below / replicates > 0.95

    def test_diagonal_bounds_mean_error(self):
        frames, truth = TestRatioThreshold()._twin_feature_frames()
        scheme = TrackScheme(ratio_threshold=0.8, unmatched_policy=ASSIGN_DIAGONAL)
        _, report = track(frames, (30, 32), make_matcher("pixel"), scheme,
                          labels=truth, model=PD)
        assert report.mean_error <= unmatched_error(96, 64) + 1e-9


class TestNnWithinThreshold:
    def _landscape(self, values):
        ny, nx = values.shape
        grid = matchcore.position_grid(nx + 30, ny + 30, 31, 1)
        return matchcore.SsrLandscape(grid=grid, ssr=np.asarray(values, dtype=np.float64))

    def test_unique_minimum_at_truth(self):
        values = np.full((5, 5), 100.0)
        values[2, 2] = 0.0
        land = self._landscape(values)
        truth = land.grid.center_at(2, 2)
        assert nn_within_threshold(land, truth, threshold=2.0) >= 1

    def test_first_neighbor_already_beyond(self):
        values = np.full((5, 5), 100.0)
        values[0, 0] = 0.0
        land = self._landscape(values)
        truth = land.grid.center_at(4, 4)
        assert nn_within_threshold(land, truth, threshold=1.5) == 0

    def test_five_ranked_in_threshold_neighbors(self):
        values = np.full((7, 7), 100.0)
        # Five best-ranked centers all within 2 px of the truth at (3, 3);
        # the sixth-ranked sits far away.
        near = [(3, 3), (4, 3), (2, 3), (3, 4), (3, 2)]
        for rank, (gx, gy) in enumerate(near):
            values[gy, gx] = float(rank)
        values[6, 6] = 5.0
        land = self._landscape(values)
        truth = land.grid.center_at(3, 3)
        assert nn_within_threshold(land, truth, threshold=2.0) == 5

    def test_all_within_returns_total_count(self):
        values = np.zeros((3, 3))
        land = self._landscape(values)
        truth = land.grid.center_at(1, 1)
        assert nn_within_threshold(land, truth, threshold=100.0) == 9


class TestSerialization:
    def test_csv_and_json_outputs(self, tmp_path):
        disp = tuple((0.5 * i, 0.0) for i in range(4))
        spec = SynthSpec(width=64, height=64, frame_count=4, texture_seed=15,
                         displacements=disp, noise_sigma=0.0)
        frames, truth = generate(spec)
        _, report = track(frames, tuple(truth[0]), make_matcher("pixel"),
                          TrackScheme(), labels=truth, model=PD)
        csv_path = tmp_path / "track.csv"
        tracker.report_to_csv(report, csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "frame,pred_x,pred_y,err_px,e_std,cumulative,ci"
        assert len(lines) == 4  # header + 3 matched frames

        json_path = tmp_path / "summary.json"
        tracker.report_to_json(report, json_path)
        import json

        summary = json.loads(json_path.read_text())
        assert summary["frames"] == 3
        assert summary["diverged"] is False
