"""Synthetic image sequences with exact ground truth.

Frames are a band-limited random texture with a planted dark blob (a
stand-in for a skin mole), bilinearly warped along a known subpixel
displacement path, optionally gain/offset-perturbed and noised.  The
ground-truth track is the blob center plus the displacement, exact by
construction, so any measured tracking error belongs to the tracker.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import raster
from .errors import InvalidInputError
from .raster import RGB01, PlanarImage


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _smooth(plane: np.ndarray, sigma: float) -> np.ndarray:
    k = _gaussian_kernel(sigma)
    pad = len(k) // 2
    tmp = np.pad(plane, ((pad, pad), (0, 0)), mode="reflect")
    tmp = np.apply_along_axis(lambda col: np.convolve(col, k, mode="valid"), 0, tmp)
    tmp = np.pad(tmp, ((0, 0), (pad, pad)), mode="reflect")
    return np.apply_along_axis(lambda row: np.convolve(row, k, mode="valid"), 1, tmp)


def skin_texture(
    seed: int,
    width: int,
    height: int,
    base_tone: tuple[float, float, float] = (0.72, 0.55, 0.45),
    contrast: float = 0.12,
    smoothness: float = 1.8,
    blob_center: tuple[float, float] | None = None,
    blob_amplitude: float = 0.35,
    blob_radius: float = 2.5,
) -> PlanarImage:
    """Smooth skin-like RGB texture with an optional planted dark blob."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    noise = _smooth(rng.standard_normal((height, width)), smoothness)
    scale = noise.std()
    if scale > 0:
        noise = noise / scale
    planes = np.empty((3, height, width))
    for c, tone in enumerate(base_tone):
        ripple = _smooth(rng.standard_normal((height, width)), smoothness * 2.0)
        rs = ripple.std()
        if rs > 0:
            ripple /= rs
        planes[c] = tone + contrast * noise + 0.25 * contrast * ripple
    if blob_center is not None:
        bx, by = blob_center
        ys, xs = np.mgrid[0:height, 0:width]
        blob = blob_amplitude * np.exp(
            -((xs - bx) ** 2 + (ys - by) ** 2) / (2.0 * blob_radius**2)
        )
        planes -= blob[None, :, :]
    return raster.from_planes(np.clip(planes, 0.0, 1.0), RGB01)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic sequence."""

    width: int = 72
    height: int = 72
    frame_count: int = 40
    texture_seed: int = 7
    noise_seed: int = 8
    feature: tuple[float, float] | None = None  # defaults to the image center
    displacements: tuple[tuple[float, float], ...] = ()
    gains: tuple[float, ...] = ()
    offsets: tuple[float, ...] = ()
    noise_sigma: float = 0.0
    blob_amplitude: float = 0.35
    blob_radius: float = 2.5
    contrast: float = 0.12
    smoothness: float = 1.8
    window: int = 31

    def __post_init__(self):
        if self.frame_count < 1:
            raise InvalidInputError("need at least one frame")
        feature = self.feature or ((self.width - 1) / 2.0, (self.height - 1) / 2.0)
        object.__setattr__(self, "feature", (float(feature[0]), float(feature[1])))
        disp = tuple((float(a), float(b)) for a, b in self.displacements)
        if not disp:
            disp = ((0.0, 0.0),) * self.frame_count
        if len(disp) != self.frame_count:
            raise InvalidInputError(
                f"{len(disp)} displacements for {self.frame_count} frames"
            )
        object.__setattr__(self, "displacements", disp)
        gains = tuple(float(g) for g in self.gains) or (1.0,) * self.frame_count
        offsets = tuple(float(o) for o in self.offsets) or (0.0,) * self.frame_count
        if len(gains) != self.frame_count or len(offsets) != self.frame_count:
            raise InvalidInputError("gain/offset paths must cover every frame")
        if any(g <= 0 for g in gains):
            raise InvalidInputError("illumination gains must be positive")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "offsets", offsets)
        half = self.window // 2
        fx, fy = self.feature
        for i, (dx, dy) in enumerate(disp):
            x, y = fx + dx, fy + dy
            if not (half <= x <= self.width - 1 - half and half <= y <= self.height - 1 - half):
                raise InvalidInputError(
                    f"frame {i}: displacement ({dx}, {dy}) pushes the feature "
                    f"window out of the {self.width}x{self.height} frame"
                )


def _warp_translate(planes: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """frame(x) = texture(x - d), bilinear, edge-clamped."""
    c, h, w = planes.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = np.clip(xs - dx, 0.0, w - 1.0)
    sy = np.clip(ys - dy, 0.0, h - 1.0)
    out = np.empty_like(planes)
    for ch in range(c):
        out[ch] = raster.bilinear_sample_grid(planes[ch], sx, sy)
    return out


def generate(spec: SynthSpec) -> tuple[list[PlanarImage], np.ndarray]:
    """Render the frames and the exact ground-truth track (n, 2)."""
    texture = skin_texture(
        spec.texture_seed,
        spec.width,
        spec.height,
        contrast=spec.contrast,
        smoothness=spec.smoothness,
        blob_center=spec.feature,
        blob_amplitude=spec.blob_amplitude,
        blob_radius=spec.blob_radius,
    )
    base = np.asarray(texture.samples)
    frames: list[PlanarImage] = []
    truth = np.empty((spec.frame_count, 2))
    for i, (dx, dy) in enumerate(spec.displacements):
        warped = _warp_translate(base, dx, dy)
        warped = warped * spec.gains[i] + spec.offsets[i]
        if spec.noise_sigma > 0:
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(spec.noise_seed, spawn_key=(i,)))
            )
            warped = warped + rng.normal(0.0, spec.noise_sigma, warped.shape)
        frames.append(raster.from_planes(np.clip(warped, 0.0, 1.0), RGB01))
        truth[i] = (spec.feature[0] + dx, spec.feature[1] + dy)
    return frames, truth


def sinusoidal_path(n: int, amp_x: float, amp_y: float, period: float, phase: float = 0.0) -> tuple[tuple[float, float], ...]:
    """Circular-ish sweep; with phase 0 the path starts at rest.

    d_i = (amp_x sin(w i + phase), amp_y (sin(w i + phase + pi/2) - 1)).
    """
    w = 2.0 * math.pi / period
    return tuple(
        (amp_x * math.sin(w * i + phase), amp_y * (math.sin(w * i + phase + math.pi / 2.0) - 1.0))
        for i in range(n)
    )


def jitter_path(n: int, amplitude: float, seed: int) -> tuple[tuple[float, float], ...]:
    """Independent uniform jitters within +/- amplitude, frame 0 at rest."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    steps = rng.uniform(-amplitude, amplitude, size=(n, 2))
    steps[0] = 0.0
    return tuple((float(a), float(b)) for a, b in steps)


def linear_ramp(n: int, start: float, end: float) -> tuple[float, ...]:
    if n == 1:
        return (start,)
    return tuple(start + (end - start) * i / (n - 1) for i in range(n))


def export_sequence(frames: list[PlanarImage], truth: np.ndarray, out_dir) -> None:
    """Numbered PNG frames plus a ground-truth labels CSV."""
    os.makedirs(out_dir, exist_ok=True)
    digits = max(4, len(str(len(frames) - 1)))
    for i, frame in enumerate(frames):
        raster.write_image(frame, os.path.join(out_dir, f"frame_{i:0{digits}d}.png"))
    with open(os.path.join(out_dir, "labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("frame,x,y\n")
        for i, (x, y) in enumerate(truth):
            fh.write(f"{i},{repr(float(x))},{repr(float(y))}\n")
