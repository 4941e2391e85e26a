"""Descriptor-agnostic dense SSR matching with quadratic subpixel refinement.

A descriptor is any fixed-length 1-D float vector; the matcher never looks
inside it.  Matching a reference descriptor against an image means scoring
every candidate window center with the sum of squared residuals (SSR),
then refining the best local minimum of that landscape by fitting a
second-order surface to its 3x3 neighborhood and solving the zero-gradient
system in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BorderError, InvalidInputError

LOCAL_MIN = "local-min"
LOCAL_MAX = "local-max"
SADDLE = "saddle"
DEGENERATE = "degenerate"

_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class PositionGrid:
    """All window centers admitting a full window, at a fixed stride.

    Centers are ordered row-major: y varies slowest, x fastest.  The grid
    is inclusive of the trailing position on each axis.
    """

    xs: np.ndarray
    ys: np.ndarray
    window: int
    stride: int

    @property
    def nx(self) -> int:
        return len(self.xs)

    @property
    def ny(self) -> int:
        return len(self.ys)

    def __len__(self) -> int:
        return self.nx * self.ny

    def centers(self) -> np.ndarray:
        """(n, 2) array of (x, y) centers in row-major order."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def center_at(self, gx: int, gy: int) -> tuple[int, int]:
        return int(self.xs[gx]), int(self.ys[gy])


@dataclass(frozen=True)
class SsrLandscape:
    """SSR value per candidate window center over one image."""

    grid: PositionGrid
    ssr: np.ndarray  # shape (ny, nx)

    def __post_init__(self):
        if self.ssr.shape != (self.grid.ny, self.grid.nx):
            raise InvalidInputError(
                f"landscape shape {self.ssr.shape} != grid "
                f"{(self.grid.ny, self.grid.nx)}"
            )


@dataclass(frozen=True)
class SurfaceFit:
    """Coefficients of z = c6*y^2 + c5*x^2 + c4*xy + c3*y + c2*x + c1.

    Coordinates are centered on the middle pixel of the fitted 3x3 cell,
    in image-pixel units.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float

    @property
    def hessian_det(self) -> float:
        return 4.0 * self.c5 * self.c6 - self.c4 * self.c4

    @property
    def zxx(self) -> float:
        return 2.0 * self.c5


@dataclass(frozen=True)
class MatchResult:
    pixel_pos: tuple[int, int]
    subpixel_pos: tuple[float, float]
    ssr_min: float
    curvature: float
    nn_ratio: float
    accepted: bool
    diagnostic: str | None = None


def ssr(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of squared residuals between two descriptors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(
            f"descriptor shapes differ or are not vectors: {a.shape} vs {b.shape}"
        )
    d = a - b
    return float(np.dot(d, d))


def position_grid(width: int, height: int, window: int = 31, stride: int = 1) -> PositionGrid:
    """Every center where a window x window box fits, stepping by stride.

    Count per axis is floor((dim - window) / stride) + 1, which includes
    the trailing valid position.
    """
    if window < 1 or window % 2 != 1:
        raise InvalidInputError(f"window must be odd and positive, got {window}")
    if stride < 1:
        raise InvalidInputError(f"stride must be positive, got {stride}")
    if width < window or height < window:
        raise InvalidInputError(
            f"image {width}x{height} smaller than the {window}px window"
        )
    half = window // 2
    nx = (width - window) // stride + 1
    ny = (height - window) // stride + 1
    xs = half + stride * np.arange(nx)
    ys = half + stride * np.arange(ny)
    return PositionGrid(xs=xs, ys=ys, window=window, stride=stride)


def ssr_landscape(ref: np.ndarray, candidates: np.ndarray, grid: PositionGrid) -> SsrLandscape:
    """Score one descriptor per grid center against the reference.

    ``candidates`` has one row per center in the grid's row-major order.
    Each row is reduced independently, so the landscape does not depend on
    any evaluation order.
    """
    ref = np.asarray(ref, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] != len(grid):
        raise InvalidInputError(
            f"need {len(grid)} candidate descriptors, got shape {candidates.shape}"
        )
    if candidates.shape[1] != ref.shape[0]:
        raise InvalidInputError(
            f"candidate dimensionality {candidates.shape[1]} != reference {ref.shape[0]}"
        )
    d = candidates - ref[None, :]
    values = np.einsum("nd,nd->n", d, d)
    return SsrLandscape(grid=grid, ssr=values.reshape(grid.ny, grid.nx))


# Centered 3x3 design matrix rows are [1, x, y, xy, x^2, y^2]; the normal
# equations stay well conditioned because the coordinates are centered.
def _design(stride: float) -> np.ndarray:
    pts = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            x, y = dx * stride, dy * stride
            pts.append([1.0, x, y, x * y, x * x, y * y])
    return np.array(pts)


def fit_quadratic_surface(land: SsrLandscape, center: tuple[int, int]) -> SurfaceFit:
    """Least-squares second-order surface over the 3x3 cell at a grid index.

    ``center`` is (gx, gy) into the landscape grid and must have a full
    3x3 neighborhood.
    """
    gx, gy = center
    if not (1 <= gx <= land.grid.nx - 2 and 1 <= gy <= land.grid.ny - 2):
        raise BorderError(
            f"grid index ({gx}, {gy}) lacks a full 3x3 neighborhood in "
            f"{land.grid.nx}x{land.grid.ny}"
        )
    z = land.ssr[gy - 1 : gy + 2, gx - 1 : gx + 2].reshape(9)
    a = _design(float(land.grid.stride))
    ata = a.T @ a
    atz = a.T @ z
    c = np.linalg.solve(ata, atz)
    return SurfaceFit(*[float(v) for v in c])


def classify_critical(fit: SurfaceFit) -> str:
    """Sylvester test of the fitted surface's critical point."""
    d = fit.hessian_det
    if abs(d) <= _DEGENERATE_TOL:
        return DEGENERATE
    if d < 0.0:
        return SADDLE
    return LOCAL_MIN if fit.zxx > 0.0 else LOCAL_MAX


def subpixel_minimum(fit: SurfaceFit) -> tuple[float, float]:
    """Zero-gradient point of the fitted surface, as an offset in pixels."""
    if classify_critical(fit) != LOCAL_MIN:
        raise InvalidInputError("surface fit has no local minimum to refine")
    d = fit.hessian_det
    x = (fit.c3 * fit.c4 - 2.0 * fit.c2 * fit.c6) / d
    y = (fit.c2 * fit.c4 - 2.0 * fit.c3 * fit.c5) / d
    return (x, y)


def nn_ratio(land: SsrLandscape) -> float:
    """Nearest to second-nearest descriptor distance ratio, in [0, 1].

    Distances are square roots of the two smallest SSR values, evaluated
    at pixel-level grid resolution.
    """
    flat = land.ssr.ravel()
    if flat.size < 2:
        raise InvalidInputError("need at least 2 landscape centers for a ratio")
    two = np.partition(flat, 1)[:2]
    s1, s2 = float(min(two)), float(max(two))
    if s2 == 0.0:
        return 1.0
    return math.sqrt(s1 / s2)


def unmatched_error(width: float, height: float) -> float:
    """Image diagonal: the error charged to frames a matcher declines."""
    return math.hypot(width, height)


def match_feature(ref: np.ndarray, land: SsrLandscape) -> MatchResult:
    """Pick and refine the best landscape minimum.

    Unique SSR values are visited in ascending order; all centers
    attaining a value get a surface fit, and the first value with any
    center classified as a local minimum wins, breaking ties by the
    largest Hessian determinant.  Centers on the landscape border cannot
    be fitted and never survive the filter.  When no center in the whole
    landscape survives, the global-minimum pixel is returned with
    ``accepted=False`` and a diagnostic.
    """
    flat = land.ssr.ravel()
    if flat.size == 0:
        raise InvalidInputError("empty landscape")
    nx = land.grid.nx
    order = np.argsort(flat, kind="stable")
    ratio = nn_ratio(land) if flat.size >= 2 else 0.0

    best = None  # (curvature, fit, gx, gy)
    i = 0
    n = len(order)
    while i < n:
        j = i
        value = flat[order[i]]
        while j < n and flat[order[j]] == value:
            gy, gx = divmod(int(order[j]), nx)
            if 1 <= gx <= land.grid.nx - 2 and 1 <= gy <= land.grid.ny - 2:
                fit = fit_quadratic_surface(land, (gx, gy))
                if classify_critical(fit) == LOCAL_MIN:
                    d = fit.hessian_det
                    if best is None or d > best[0]:
                        best = (d, fit, gx, gy)
            j += 1
        if best is not None:
            break
        i = j

    if best is None:
        gy, gx = divmod(int(order[0]), nx)
        px, py = land.grid.center_at(gx, gy)
        return MatchResult(
            pixel_pos=(px, py),
            subpixel_pos=(float(px), float(py)),
            ssr_min=float(flat[order[0]]),
            curvature=0.0,
            nn_ratio=ratio,
            accepted=False,
            diagnostic="no-local-minimum",
        )

    curvature, fit, gx, gy = best
    px, py = land.grid.center_at(gx, gy)
    value = float(land.ssr[gy, gx])
    if value == 0.0:
        # An exact-zero SSR is the true optimum of a non-negative
        # objective; interpolation could only move away from it.
        return MatchResult(
            pixel_pos=(px, py),
            subpixel_pos=(float(px), float(py)),
            ssr_min=0.0,
            curvature=curvature,
            nn_ratio=ratio,
            accepted=True,
        )
    ox, oy = subpixel_minimum(fit)
    stride = land.grid.stride
    inside = abs(ox) <= stride and abs(oy) <= stride
    return MatchResult(
        pixel_pos=(px, py),
        subpixel_pos=(px + ox, py + oy),
        ssr_min=value,
        curvature=curvature,
        nn_ratio=ratio,
        accepted=inside,
        diagnostic=None if inside else "refined-offset-outside-cell",
    )


def dense_pixel_landscape(ref_crop: np.ndarray, img_planes: np.ndarray, window: int, stride: int = 1) -> SsrLandscape:
    """SSR landscape of a raw-pixel descriptor without materializing crops.

    Expands sum((W - R)^2) = sum(W^2) - 2*corr(W, R) + sum(R^2) so the
    whole image is scored with shifted-slice accumulation.  ``ref_crop``
    is (c, window, window); ``img_planes`` is (c, h, w).
    """
    c, h, w = img_planes.shape
    if ref_crop.shape != (c, window, window):
        raise InvalidInputError(
            f"reference crop shape {ref_crop.shape} != {(c, window, window)}"
        )
    grid = position_grid(w, h, window, stride)
    oh = h - window + 1
    ow = w - window + 1
    sq = np.zeros((oh, ow))
    cross = np.zeros((oh, ow))
    img2 = img_planes * img_planes
    for ch in range(c):
        plane = img_planes[ch]
        plane2 = img2[ch]
        r = ref_crop[ch]
        for dy in range(window):
            for dx in range(window):
                view = plane[dy : dy + oh, dx : dx + ow]
                sq += plane2[dy : dy + oh, dx : dx + ow]
                cross += r[dy, dx] * view
    rsum = float(np.sum(ref_crop * ref_crop))
    values = sq - 2.0 * cross + rsum
    np.maximum(values, 0.0, out=values)
    values = np.ascontiguousarray(values[::stride, ::stride])
    # The expanded form loses a few ulps to cancellation, which matters
    # exactly where values approach zero; recompute the smallest entries
    # directly so exact matches really score 0.
    flat = values.ravel()
    k = min(8, flat.size)
    for idx in np.argpartition(flat, k - 1)[:k]:
        gy, gx = divmod(int(idx), values.shape[1])
        y0, x0 = gy * stride, gx * stride
        patch = img_planes[:, y0 : y0 + window, x0 : x0 + window]
        d = (patch - ref_crop).ravel()
        flat[idx] = float(np.dot(d, d))
    return SsrLandscape(grid=grid, ssr=values)


def landscape_to_csv(land: SsrLandscape, path) -> None:
    """Dense CSV export: header x,y,ssr; one row per grid center."""
    centers = land.grid.centers()
    values = land.ssr.ravel()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,ssr\n")
        for (x, y), v in zip(centers, values):
            fh.write(f"{int(x)},{int(y)},{repr(float(v))}\n")
