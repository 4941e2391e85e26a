"""Pyramidal Lucas-Kanade sparse optical flow.

Tracks a single point between two grayscale images by iteratively solving
the windowed least-squares flow equations, coarse to fine over an image
pyramid.  Gradients are taken on the reference window once per level with
central differences and bilinear subpixel sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import raster
from .errors import InvalidInputError
from .raster import GRAY01, ImagePyramid, PlanarImage, bilinear_sample_grid, pyramid_coords

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
SINGULAR = "singular"
OUT_OF_BOUNDS = "out-of-bounds"

# det <= this multiple of trace^2 marks the normal matrix unusable; the
# scale-aware form survives arbitrary intensity scaling and the all-zero
# tensor of a constant region.
_SINGULAR_REL = 1e-12


@dataclass(frozen=True)
class FlowWindow:
    """Tracking parameters: window side, pyramid depth, termination."""

    size: int = 10
    max_level: int = 4
    max_iterations: int = 10
    epsilon: float = 0.03

    def __post_init__(self):
        if self.size < 3:
            raise InvalidInputError(f"window must be at least 3 px, got {self.size}")
        if not 0 <= self.max_level <= 4:
            raise InvalidInputError("pyramid depth must be in 0..4")
        if self.epsilon <= 0:
            raise InvalidInputError("epsilon must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("need at least one iteration")

    def offsets(self) -> np.ndarray:
        """Window sample offsets, centered; fractional for even sizes."""
        return np.arange(self.size) - (self.size - 1) / 2.0


@dataclass(frozen=True)
class StructureTensor:
    sum_ixix: float
    sum_ixiy: float
    sum_iyiy: float

    @property
    def det(self) -> float:
        return self.sum_ixix * self.sum_iyiy - self.sum_ixiy**2

    @property
    def trace(self) -> float:
        return self.sum_ixix + self.sum_iyiy

    def eigenvalues(self) -> tuple[float, float]:
        """Closed-form 2x2 eigenvalues, largest first."""
        mean = 0.5 * self.trace
        spread = math.sqrt(max(mean * mean - self.det, 0.0))
        return (mean + spread, mean - spread)


@dataclass(frozen=True)
class FlowResult:
    v: tuple[float, float]
    d: tuple[float, float]
    status: str
    eigen_ratio: float
    increments: tuple[float, ...] = ()
    level_estimates: tuple[tuple[int, tuple[float, float]], ...] = ()


def eigen_ratio(t: StructureTensor) -> float:
    """lambda1 / lambda2; +inf when the smaller eigenvalue vanishes."""
    l1, l2 = t.eigenvalues()
    if l2 <= 1e-15:
        return float("inf")
    return l1 / l2


def _gray_plane(img: PlanarImage) -> np.ndarray:
    if img.space != GRAY01:
        raise InvalidInputError(f"optical flow needs GRAY01 input, got {img.space}")
    return img.samples[0]


def _region_in_bounds(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray, margin: float) -> bool:
    h, w = plane.shape
    return bool(
        xs.min() >= margin
        and ys.min() >= margin
        and xs.max() <= w - 1 - margin
        and ys.max() <= h - 1 - margin
    )


def spatial_gradients(img: PlanarImage, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients sampled at real-valued coordinates.

    Every sample point must sit at least one pixel inside the image so
    the +/-1 stencils stay valid.
    """
    plane = _gray_plane(img)
    if not _region_in_bounds(plane, xs, ys, margin=1.0):
        raise InvalidInputError("gradient region touches the image border")
    ix = 0.5 * (bilinear_sample_grid(plane, xs + 1.0, ys) - bilinear_sample_grid(plane, xs - 1.0, ys))
    iy = 0.5 * (bilinear_sample_grid(plane, xs, ys + 1.0) - bilinear_sample_grid(plane, xs, ys - 1.0))
    return ix, iy


def lk_step(
    ref: PlanarImage,
    cur: PlanarImage,
    p: tuple[float, float],
    guess: tuple[float, float],
    win: FlowWindow,
) -> FlowResult:
    """One-level iterative flow solve from ``p`` in ref toward ``cur``.

    The structure tensor comes from the reference window once; each
    iteration re-samples only the current image at the running estimate.
    """
    ref_plane = _gray_plane(ref)
    cur_plane = _gray_plane(cur)
    off = win.offsets()
    ox, oy = np.meshgrid(off, off)
    px, py = float(p[0]), float(p[1])
    rx, ry = ox + px, oy + py

    def fail(status: str, v: tuple[float, float], ratio: float = 0.0, incs=()) -> FlowResult:
        return FlowResult(
            v=v, d=(v[0] - px, v[1] - py), status=status, eigen_ratio=ratio,
            increments=tuple(incs),
        )

    if not _region_in_bounds(ref_plane, rx, ry, margin=1.0):
        return fail(OUT_OF_BOUNDS, (px, py))

    ref_vals = bilinear_sample_grid(ref_plane, rx, ry)
    ix = 0.5 * (bilinear_sample_grid(ref_plane, rx + 1.0, ry) - bilinear_sample_grid(ref_plane, rx - 1.0, ry))
    iy = 0.5 * (bilinear_sample_grid(ref_plane, rx, ry + 1.0) - bilinear_sample_grid(ref_plane, rx, ry - 1.0))

    tensor = StructureTensor(
        sum_ixix=float(np.sum(ix * ix)),
        sum_ixiy=float(np.sum(ix * iy)),
        sum_iyiy=float(np.sum(iy * iy)),
    )
    ratio = eigen_ratio(tensor)
    if tensor.det <= _SINGULAR_REL * tensor.trace**2:
        return fail(SINGULAR, (px, py), ratio)

    inv = np.linalg.inv(
        np.array([[tensor.sum_ixix, tensor.sum_ixiy], [tensor.sum_ixiy, tensor.sum_iyiy]])
    )

    vx, vy = float(guess[0]), float(guess[1])
    increments: list[float] = []
    status = MAX_ITERATIONS
    for _ in range(win.max_iterations):
        cx, cy = ox + vx, oy + vy
        if not _region_in_bounds(cur_plane, cx, cy, margin=0.0):
            return fail(OUT_OF_BOUNDS, (vx, vy), ratio, increments)
        cur_vals = bilinear_sample_grid(cur_plane, cx, cy)
        diff = ref_vals - cur_vals  # -I_t
        b = np.array([float(np.sum(diff * ix)), float(np.sum(diff * iy))])
        eta = inv @ b
        vx += float(eta[0])
        vy += float(eta[1])
        step = math.hypot(float(eta[0]), float(eta[1]))
        increments.append(step)
        if step < win.epsilon:
            status = CONVERGED
            break
    return FlowResult(
        v=(vx, vy),
        d=(vx - px, vy - py),
        status=status,
        eigen_ratio=ratio,
        increments=tuple(increments),
    )


def lk_pyramidal(
    ref: PlanarImage,
    cur: PlanarImage,
    p: tuple[float, float],
    win: FlowWindow,
    guess: tuple[float, float] | None = None,
) -> FlowResult:
    """Coarse-to-fine flow: solve at the deepest level, double and refine.

    ``guess`` defaults to the point itself (zero prior motion); pass the
    previous frame's displacement to warm-start instead.
    """
    ref_pyr = build_flow_pyramid(ref, win)
    cur_pyr = build_flow_pyramid(cur, win)
    if guess is None:
        guess = p

    top = win.max_level
    gx, gy = pyramid_coords(guess, top)
    estimates: list[tuple[int, tuple[float, float]]] = []
    last: FlowResult | None = None
    for level in range(top, -1, -1):
        pl = pyramid_coords(p, level)
        result = lk_step(ref_pyr.levels[level], cur_pyr.levels[level], pl, (gx, gy), win)
        estimates.append((level, result.v))
        if result.status in (SINGULAR, OUT_OF_BOUNDS):
            scale = float(2**level)
            v0 = (result.v[0] * scale, result.v[1] * scale)
            return FlowResult(
                v=v0,
                d=(v0[0] - p[0], v0[1] - p[1]),
                status=result.status,
                eigen_ratio=result.eigen_ratio,
                increments=result.increments,
                level_estimates=tuple(estimates),
            )
        last = result
        gx, gy = result.v[0] * 2.0, result.v[1] * 2.0
    assert last is not None
    return FlowResult(
        v=last.v,
        d=(last.v[0] - p[0], last.v[1] - p[1]),
        status=last.status,
        eigen_ratio=last.eigen_ratio,
        increments=last.increments,
        level_estimates=tuple(estimates),
    )


def build_flow_pyramid(img: PlanarImage, win: FlowWindow) -> ImagePyramid:
    """Pyramid sized so the flow window fits at every level."""
    return raster.build_pyramid(img, win.max_level, min_dim=2 * win.size)
