"""Frame-by-frame tracking orchestration and evaluation reports.

Two reference schemes: fixed-reference matches frame 0's feature in every
later frame; previous-frame re-binds the reference to each new prediction
and is therefore prone to drift.  Matchers are pluggable: the learned
crop-encoding matcher, a raw-pixel SSR baseline using the same dense
machinery, or pyramidal optical flow.

With ground-truth labels the tracker produces the full evaluation report:
sorted errors, cumulative standardized squared errors with the 99%
confidence line, mean/max/weighted-mean errors, and a divergence flag.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import evalstat, flow_lk, matchcore, raster
from .errors import InvalidInputError
from .evalstat import EmpiricalCdf, ErrorModel, FrameError
from .matchcore import MatchResult
from .raster import GRAY01, LAB01, PlanarImage

FIXED_REFERENCE = "fixed-reference"
PREVIOUS_FRAME = "previous-frame"
ASSIGN_DIAGONAL = "assign-diagonal"
HOLD_LAST = "hold-last"


@dataclass(frozen=True)
class TrackScheme:
    mode: str = FIXED_REFERENCE
    unmatched_policy: str = ASSIGN_DIAGONAL
    ratio_threshold: float | None = None
    # In previous-frame mode, held (unmatched) frames keep the reference
    # descriptor by default; set True to re-encode at the held position.
    reencode_held: bool = False

    def __post_init__(self):
        if self.mode not in (FIXED_REFERENCE, PREVIOUS_FRAME):
            raise InvalidInputError(f"unknown tracking mode {self.mode!r}")
        if self.unmatched_policy not in (ASSIGN_DIAGONAL, HOLD_LAST):
            raise InvalidInputError(f"unknown unmatched policy {self.unmatched_policy!r}")
        if self.ratio_threshold is not None and not 0.0 < self.ratio_threshold <= 1.0:
            raise InvalidInputError("ratio threshold must lie in (0, 1]")


@dataclass(frozen=True)
class FramePrediction:
    frame: int
    x: float
    y: float
    matched: bool
    nn_ratio: float | None = None
    note: str | None = None


@dataclass(frozen=True)
class TrackReport:
    predictions: list[FramePrediction]
    errors: list[float]  # per matched frame, pixels
    e_std: list[float]
    cumulative: list[float]
    ci: list[float]
    sorted_errors: list[float]  # descending
    mean_error: float
    max_error: float
    weighted_mean_error: float
    chi2: evalstat.ChiSquareReport | None
    diverged: bool


# ---------------------------------------------------------------------------
# Matchers.  Each binds a reference feature, then locates it in a frame.

class DescriptorMatcher:
    """Dense SSR matching over all window centers of the target frame."""

    window = 31

    def __init__(self):
        self._ref_descriptor: np.ndarray | None = None

    def describe_crop(self, img: PlanarImage, center: tuple[int, int]) -> np.ndarray:
        raise NotImplementedError

    def landscape(self, img: PlanarImage, ref: np.ndarray) -> matchcore.SsrLandscape:
        raise NotImplementedError

    def _prepare(self, img: PlanarImage) -> PlanarImage:
        if img.space == LAB01:
            return img
        if img.space == raster.RGB01:
            return raster.normalize_lab(raster.rgb_to_cielab(img))
        if img.space == raster.CIELAB:
            return raster.normalize_lab(img)
        raise InvalidInputError(f"matcher cannot consume {img.space} frames")

    def set_reference(self, img: PlanarImage, point: tuple[float, float]) -> None:
        center = (int(round(point[0])), int(round(point[1])))
        self._ref_descriptor = self.describe_crop(self._prepare(img), center)

    def locate_with_landscape(self, img: PlanarImage) -> tuple[MatchResult, matchcore.SsrLandscape]:
        if self._ref_descriptor is None:
            raise InvalidInputError("matcher has no reference bound")
        land = self.landscape(self._prepare(img), self._ref_descriptor)
        return matchcore.match_feature(self._ref_descriptor, land), land

    def locate(self, img: PlanarImage) -> MatchResult:
        return self.locate_with_landscape(img)[0]


class DfeMatcher(DescriptorMatcher):
    """Learned 128-d crop encodings scored with dense SSR.

    Reference descriptors are read out of the frame's dense descriptor
    map rather than a standalone crop encode, so a reference and a
    candidate at the same position are bit-identical; the last dense map
    is cached, making previous-frame re-binding free.
    """

    def __init__(self, model):
        super().__init__()
        self.model = model
        self._prep_key = None
        self._prep_img = None
        self._cache_key = None
        self._cache_map = None

    def _prepare(self, img: PlanarImage) -> PlanarImage:
        key = id(img.samples)
        if self._prep_key != key:
            self._prep_img = super()._prepare(img)
            self._prep_key = key
        return self._prep_img

    def _dense(self, img: PlanarImage) -> np.ndarray:
        key = id(img.samples)
        if self._cache_key != key:
            self._cache_map = self.model.encode_dense(np.asarray(img.samples))
            self._cache_key = key
        return self._cache_map

    def describe_crop(self, img, center):
        half = self.window // 2
        cx, cy = center
        if not (half <= cx <= img.width - 1 - half and half <= cy <= img.height - 1 - half):
            raise InvalidInputError(
                f"reference center {center} has no full window in the frame"
            )
        return self._dense(img)[cy - half, cx - half].astype(np.float64)

    def landscape(self, img, ref):
        desc = self._dense(img)
        grid = matchcore.position_grid(img.width, img.height, self.window, 1)
        candidates = desc.reshape(-1, desc.shape[-1])
        return matchcore.ssr_landscape(ref, candidates, grid)


class PixelSsrMatcher(DescriptorMatcher):
    """Raw flattened crop pixels as the descriptor; the no-learning baseline."""

    def describe_crop(self, img, center):
        crop = raster.extract_crop(img, center, self.window)
        return np.asarray(crop.samples, dtype=np.float64).reshape(-1)

    def landscape(self, img, ref):
        crop = ref.reshape(3, self.window, self.window)
        return matchcore.dense_pixel_landscape(
            crop, np.asarray(img.samples, dtype=np.float64), self.window
        )


class LkMatcher:
    """Pyramidal optical flow from the reference frame to the target.

    The pyramid depth is clamped to what the frame size supports so the
    default 4-level window works on small sequences too.
    """

    def __init__(self, win: flow_lk.FlowWindow | None = None):
        self.win = win or flow_lk.FlowWindow()
        self._ref_gray: PlanarImage | None = None
        self._ref_point: tuple[float, float] | None = None

    def _gray(self, img: PlanarImage) -> PlanarImage:
        return img if img.space == GRAY01 else raster.to_grayscale(img)

    def _fitted_window(self, img: PlanarImage) -> flow_lk.FlowWindow:
        level = self.win.max_level
        floor_dim = 2 * self.win.size
        while level > 0 and min(img.width, img.height) // (2**level) < floor_dim:
            level -= 1
        if level == self.win.max_level:
            return self.win
        return flow_lk.FlowWindow(
            size=self.win.size, max_level=level,
            max_iterations=self.win.max_iterations, epsilon=self.win.epsilon,
        )

    def set_reference(self, img: PlanarImage, point: tuple[float, float]) -> None:
        self._ref_gray = self._gray(img)
        self._ref_point = (float(point[0]), float(point[1]))

    def locate(self, img: PlanarImage) -> MatchResult:
        if self._ref_gray is None or self._ref_point is None:
            raise InvalidInputError("matcher has no reference bound")
        win = self._fitted_window(self._ref_gray)
        result = flow_lk.lk_pyramidal(self._ref_gray, self._gray(img), self._ref_point, win)
        ok = result.status in (flow_lk.CONVERGED, flow_lk.MAX_ITERATIONS)
        px = (int(round(result.v[0])), int(round(result.v[1])))
        return MatchResult(
            pixel_pos=px,
            subpixel_pos=result.v,
            ssr_min=float("nan"),
            curvature=0.0,
            nn_ratio=0.0,
            accepted=ok,
            diagnostic=None if ok else result.status,
        )


def make_matcher(kind: str, model=None, win: flow_lk.FlowWindow | None = None):
    if kind == "dfe":
        if model is None:
            raise InvalidInputError("the dfe matcher needs a trained model")
        return DfeMatcher(model)
    if kind == "pixel":
        return PixelSsrMatcher()
    if kind == "lk":
        return LkMatcher(win)
    raise InvalidInputError(f"unknown matcher {kind!r}")


# ---------------------------------------------------------------------------

def ci_line(n_frames: int, p: float = 0.99) -> list[float]:
    """chi2_inv(p, 2i) for i = 1..n_frames; strictly increasing in i."""
    if n_frames < 1:
        raise InvalidInputError("need at least one frame")
    return [evalstat.chi2_inv(p, 2 * i) for i in range(1, n_frames + 1)]


def _window_fits(img: PlanarImage, point: tuple[float, float], window: int) -> bool:
    half = window // 2
    x, y = int(round(point[0])), int(round(point[1]))
    return half <= x <= img.width - 1 - half and half <= y <= img.height - 1 - half


def track(
    frames: list[PlanarImage],
    start: tuple[float, float],
    matcher,
    scheme: TrackScheme,
    labels: np.ndarray | None = None,
    model: ErrorModel | None = None,
    window: int = 31,
) -> tuple[list[FramePrediction], TrackReport | None]:
    """Run the matcher over a frame sequence.

    ``labels`` is an (n_frames, 2) ground-truth array; when given together
    with an error model, the full evaluation report is produced over the
    matched frames (frame 0 is the reference and carries no error).
    """
    if len(frames) < 2:
        raise InvalidInputError("need at least two frames to track")
    if not _window_fits(frames[0], start, window):
        raise InvalidInputError(
            f"start point {start} does not admit a {window}px window in frame 0"
        )
    diagonal = matchcore.unmatched_error(frames[0].width, frames[0].height)

    matcher.set_reference(frames[0], start)
    predictions = [FramePrediction(frame=0, x=float(start[0]), y=float(start[1]), matched=True)]
    err_values: list[float] = []
    last_good = (float(start[0]), float(start[1]))

    for i in range(1, len(frames)):
        result = matcher.locate(frames[i])
        ratio = result.nn_ratio
        unmatched = (
            scheme.ratio_threshold is not None and ratio is not None and ratio > scheme.ratio_threshold
        )
        if unmatched:
            pred = FramePrediction(
                frame=i, x=last_good[0], y=last_good[1], matched=False,
                nn_ratio=ratio, note="ratio-threshold",
            )
        else:
            pred = FramePrediction(
                frame=i, x=result.subpixel_pos[0], y=result.subpixel_pos[1],
                matched=True, nn_ratio=ratio, note=result.diagnostic,
            )
            last_good = (pred.x, pred.y)
        predictions.append(pred)

        if labels is not None:
            truth = labels[i]
            if unmatched and scheme.unmatched_policy == ASSIGN_DIAGONAL:
                err_values.append(diagonal)
            else:
                err_values.append(math.hypot(pred.x - truth[0], pred.y - truth[1]))

        if scheme.mode == PREVIOUS_FRAME:
            if pred.matched or scheme.reencode_held:
                candidate = (pred.x, pred.y)
                if _window_fits(frames[i], candidate, window):
                    matcher.set_reference(frames[i], candidate)
                else:
                    predictions[-1] = FramePrediction(
                        frame=i, x=pred.x, y=pred.y, matched=pred.matched,
                        nn_ratio=pred.nn_ratio, note="window-out-of-bounds",
                    )

    report = None
    if labels is not None and model is not None:
        report = build_report(predictions, err_values, labels, model, diagonal)
    return predictions, report


def build_report(
    predictions: list[FramePrediction],
    errors: list[float],
    labels: np.ndarray,
    model: ErrorModel,
    diagonal: float,
    cdf: EmpiricalCdf | None = None,
) -> TrackReport:
    """Assemble the evaluation report from per-frame errors."""
    if not errors:
        raise InvalidInputError("no errors to report on")
    frame_errors = []
    for pred, err in zip(predictions[1:], errors):
        truth = labels[pred.frame]
        if not pred.matched and err == diagonal:
            # Diagonal-assigned frames carry no axis decomposition; the
            # whole distance is charged as one residual.
            fe = FrameError(frame=pred.frame, dx=err, dy=0.0)
        else:
            fe = FrameError(frame=pred.frame, dx=pred.x - truth[0], dy=pred.y - truth[1])
        frame_errors.append(fe)

    e_std = [evalstat.standardized_squared_error(fe, model) for fe in frame_errors]
    cumulative = list(np.cumsum(e_std))
    ci = ci_line(len(errors))
    if cdf is None:
        cdf = evalstat.simulate_distance_cdf(model, seed=0)
    weighted = [evalstat.weighted_error(e, model, cdf) for e in errors]
    chi2 = evalstat.chi2_statistic(frame_errors, model)
    return TrackReport(
        predictions=predictions,
        errors=list(errors),
        e_std=e_std,
        cumulative=cumulative,
        ci=ci,
        sorted_errors=sorted(errors, reverse=True),
        mean_error=float(np.mean(errors)),
        max_error=float(np.max(errors)),
        weighted_mean_error=float(np.mean(weighted)),
        chi2=chi2,
        diverged=bool(any(e >= diagonal for e in errors)),
    )


def nn_within_threshold(land: matchcore.SsrLandscape, truth: tuple[float, float], threshold: float) -> int:
    """Neighbors (ranked by ascending SSR) inside the spatial threshold.

    Returns the rank, minus one, of the first center whose distance to the
    ground truth exceeds the threshold; ties in SSR break by (y, x).
    """
    flat = land.ssr.ravel()
    if flat.size == 0:
        raise InvalidInputError("empty landscape")
    centers = land.grid.centers()
    order = np.lexsort((centers[:, 0], centers[:, 1], flat))
    dist = np.hypot(centers[order, 0] - truth[0], centers[order, 1] - truth[1])
    beyond = np.nonzero(dist > threshold)[0]
    if beyond.size == 0:
        return int(flat.size)
    return int(beyond[0])


# ---------------------------------------------------------------------------
# Report serialization.

def predictions_to_csv(predictions: list[FramePrediction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,pred_x,pred_y\n")
        for p in predictions:
            fh.write(f"{p.frame},{repr(float(p.x))},{repr(float(p.y))}\n")


def report_to_csv(report: TrackReport, path) -> None:
    """Per-frame CSV: frame, pred_x, pred_y, err_px, e_std, cumulative, ci."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,pred_x,pred_y,err_px,e_std,cumulative,ci\n")
        rows = zip(report.predictions[1:], report.errors, report.e_std, report.cumulative, report.ci)
        for pred, err, es, cum, ci in rows:
            fh.write(
                f"{pred.frame},{repr(float(pred.x))},{repr(float(pred.y))},"
                f"{repr(float(err))},{repr(float(es))},{repr(float(cum))},{repr(float(ci))}\n"
            )


def report_to_json(report: TrackReport, path) -> None:
    summary = {
        "frames": len(report.errors),
        "mean_error": report.mean_error,
        "max_error": report.max_error,
        "weighted_mean_error": report.weighted_mean_error,
        "diverged": report.diverged,
        "chi2_statistic": report.chi2.statistic if report.chi2 else None,
        "chi2_dof": report.chi2.dof if report.chi2 else None,
        "chi2_p_value": report.chi2.p_value if report.chi2 else None,
        "chi2_p_underflow": report.chi2.underflow if report.chi2 else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
