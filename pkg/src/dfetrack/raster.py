"""Image representation, color conversion, crop extraction, and pyramids.

Images are multi-channel rasters stored as one plane per channel with an
explicit color-space tag.  The public coordinate convention everywhere is
(x, y): x is the column index increasing rightward, y is the row index
increasing downward, and the origin sits at the center of the top-left
pixel.  Arrays are indexed samples[channel][y][x].

Supported spaces:

* ``RGB01``  - red/green/blue, each in [0, 1]
* ``CIELAB`` - L* in [0, 100], a* and b* in [-127, 127]
* ``LAB01``  - CIELAB after channel-wise min-max normalization to [0, 1]
* ``GRAY01`` - single channel in [0, 1]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BorderError, InvalidInputError

RGB01 = "RGB01"
CIELAB = "CIELAB"
LAB01 = "LAB01"
GRAY01 = "GRAY01"

_SPACES = {RGB01, CIELAB, LAB01, GRAY01}

# D65 sRGB-to-XYZ matrix and white point used by the conversion below.
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_X_N = 0.950456
_Z_N = 1.088754
_LAB_T0 = 0.008856

# Absolute channel bounds of CIELAB, used by the min-max normalization.
LAB_MIN = np.array([0.0, -127.0, -127.0])
LAB_MAX = np.array([100.0, 127.0, 127.0])


@dataclass(frozen=True)
class PlanarImage:
    """Immutable multi-channel raster with per-plane sample storage."""

    width: int
    height: int
    channels: int
    samples: np.ndarray  # shape (channels, height, width), float64
    space: str

    def __post_init__(self):
        if self.space not in _SPACES:
            raise InvalidInputError(f"unknown color space {self.space!r}")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image dimensions must be at least 1x1")
        expected = (self.channels, self.height, self.width)
        if self.samples.shape != expected:
            raise InvalidInputError(
                f"sample array shape {self.samples.shape} != {expected}"
            )
        if self.channels not in (1, 3):
            raise InvalidInputError("channel count must be 1 or 3")
        if (self.space == GRAY01) != (self.channels == 1):
            raise InvalidInputError(
                f"space {self.space} incompatible with {self.channels} channels"
            )
        self.samples.flags.writeable = False

    def plane(self, c: int) -> np.ndarray:
        return self.samples[c]


def from_planes(samples: np.ndarray, space: str) -> PlanarImage:
    """Build a PlanarImage from a (c, h, w) float array.

    Takes ownership: the array (or its float64 copy) is frozen read-only.
    """
    arr = np.ascontiguousarray(samples, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise InvalidInputError(f"expected (c, h, w) array, got shape {arr.shape}")
    c, h, w = arr.shape
    return PlanarImage(width=w, height=h, channels=c, samples=arr, space=space)


@dataclass(frozen=True)
class Crop:
    """Odd-sized square window fully inside its source image.

    The center is an integer pixel coordinate of the source.
    """

    center: tuple[int, int]
    size: int
    samples: np.ndarray  # (channels, size, size)
    space: str


@dataclass(frozen=True)
class ImagePyramid:
    """Resolution pyramid: level L+1 halves the dims of level L."""

    levels: tuple[PlanarImage, ...]

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_T0, np.cbrt(t), 7.787 * t + 16.0 / 116.0)


def rgb_to_cielab(img: PlanarImage) -> PlanarImage:
    """Convert floating-point RGB in [0,1] to CIELAB.

    The input is treated as already being in the working RGB space; no
    gamma decoding is applied.
    """
    if img.space != RGB01 or img.channels != 3:
        raise InvalidInputError(f"rgb_to_cielab needs a 3-channel RGB01 image, got {img.space}")
    flat = img.samples.reshape(3, -1)
    xyz = _RGB_TO_XYZ @ flat
    x = xyz[0] / _X_N
    y = xyz[1]
    z = xyz[2] / _Z_N
    lum = np.where(y > _LAB_T0, 116.0 * np.cbrt(y) - 16.0, 903.3 * y)
    fx, fy, fz = _lab_f(x), _lab_f(y), _lab_f(z)
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    out = np.stack([lum, a, b]).reshape(img.samples.shape)
    return from_planes(out, CIELAB)


def rgb_to_cielab_pixel(r: float, g: float, b: float) -> tuple[float, float, float]:
    """Scalar CIELAB conversion of one RGB triple (convenience wrapper)."""
    img = from_planes(np.array([[[r]], [[g]], [[b]]]), RGB01)
    lab = rgb_to_cielab(img).samples
    return float(lab[0, 0, 0]), float(lab[1, 0, 0]), float(lab[2, 0, 0])


def normalize_lab(img: PlanarImage) -> PlanarImage:
    """Min-max normalize CIELAB channels to [0,1] using the absolute bounds.

    L maps 0..100 to 0..1; a and b map -127..127 to 0..1.  The per-image
    extremes are deliberately not used so that the mapping is a fixed
    bijection.
    """
    if img.space != CIELAB:
        raise InvalidInputError(f"normalize_lab expects CIELAB, got {img.space}")
    lo = LAB_MIN[:, None, None]
    hi = LAB_MAX[:, None, None]
    return from_planes((img.samples - lo) / (hi - lo), LAB01)


def denormalize_lab(img: PlanarImage) -> PlanarImage:
    """Inverse of :func:`normalize_lab`."""
    if img.space != LAB01:
        raise InvalidInputError(f"denormalize_lab expects LAB01, got {img.space}")
    lo = LAB_MIN[:, None, None]
    hi = LAB_MAX[:, None, None]
    return from_planes(img.samples * (hi - lo) + lo, CIELAB)


def to_grayscale(img: PlanarImage) -> PlanarImage:
    """Reduce a color image to L*/100 lightness in [0,1]."""
    if img.channels != 3:
        raise InvalidInputError("to_grayscale needs a 3-channel input")
    if img.space == RGB01:
        lab = rgb_to_cielab(img)
    elif img.space == CIELAB:
        lab = img
    elif img.space == LAB01:
        lab = denormalize_lab(img)
    else:
        raise InvalidInputError(f"cannot convert {img.space} to grayscale")
    return from_planes(lab.samples[0:1] / 100.0, GRAY01)


def rgb01_of(img: PlanarImage) -> PlanarImage:
    """Pass RGB01 through; reject anything else (no inverse LAB path)."""
    if img.space != RGB01:
        raise InvalidInputError(f"expected an RGB01 image, got {img.space}")
    return img


def extract_crop(img: PlanarImage, center: tuple[int, int], size: int) -> Crop:
    """Cut the size x size window centered at an integer pixel coordinate."""
    if size % 2 != 1 or size < 1:
        raise InvalidInputError(f"crop size must be odd and positive, got {size}")
    cx, cy = int(center[0]), int(center[1])
    half = size // 2
    if cx - half < 0 or cx + half > img.width - 1:
        raise BorderError(
            f"crop center x={cx} too close to a vertical border for size {size}"
        )
    if cy - half < 0 or cy + half > img.height - 1:
        raise BorderError(
            f"crop center y={cy} too close to a horizontal border for size {size}"
        )
    window = np.ascontiguousarray(
        img.samples[:, cy - half : cy + half + 1, cx - half : cx + half + 1]
    )
    return Crop(center=(cx, cy), size=size, samples=window, space=img.space)


# 5-tap binomial smoothing kernel applied per axis before 2x decimation.
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _smooth_axis(plane: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (2, 2)
    padded = np.pad(plane, pad, mode="edge")
    out = np.zeros_like(plane)
    for k, w in enumerate(_BINOMIAL5):
        if axis == 0:
            out += w * padded[k : k + plane.shape[0], :]
        else:
            out += w * padded[:, k : k + plane.shape[1]]
    return out


def downsample_half(img: PlanarImage) -> PlanarImage:
    """Halve width and height: binomial prefilter, then 2x2 block average.

    Edge replication keeps constant images exactly constant.
    """
    if img.width < 2 or img.height < 2:
        raise InvalidInputError(
            f"cannot halve a {img.width}x{img.height} image"
        )
    ow, oh = img.width // 2, img.height // 2
    out = np.empty((img.channels, oh, ow))
    for c in range(img.channels):
        sm = _smooth_axis(_smooth_axis(img.samples[c], 0), 1)
        sm = sm[: 2 * oh, : 2 * ow]
        out[c] = 0.25 * (sm[0::2, 0::2] + sm[1::2, 0::2] + sm[0::2, 1::2] + sm[1::2, 1::2])
    return from_planes(out, img.space)


def build_pyramid(img: PlanarImage, max_level: int, min_dim: int = 2) -> ImagePyramid:
    """Stack of progressively halved images, level 0 being the input.

    ``min_dim`` is the smallest width/height allowed at any level; pass
    twice the tracking window size when the pyramid feeds optical flow.
    """
    if not 0 <= max_level <= 4:
        raise InvalidInputError(f"pyramid depth must be in 0..4, got {max_level}")
    if min(img.width, img.height) < min_dim:
        raise InvalidInputError(
            f"base image {img.width}x{img.height} below the {min_dim}px minimum"
        )
    levels = [img]
    for level in range(max_level):
        prev = levels[-1]
        if prev.width // 2 < min_dim or prev.height // 2 < min_dim:
            raise InvalidInputError(
                f"level {level + 1} would be {prev.width // 2}x{prev.height // 2}, "
                f"below the {min_dim}px minimum"
            )
        levels.append(downsample_half(prev))
    return ImagePyramid(levels=tuple(levels))


def pyramid_coords(p: tuple[float, float], level: int) -> tuple[float, float]:
    """Map a level-0 coordinate to pyramid level L: p / 2**L, no rounding."""
    if level < 0:
        raise InvalidInputError("pyramid level must be non-negative")
    s = float(2**level)
    return (p[0] / s, p[1] / s)


def bilinear_sample(plane: np.ndarray, x: float, y: float) -> float:
    """Sample one plane at a real-valued coordinate with bilinear weights."""
    h, w = plane.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise BorderError(f"sample point ({x}, {y}) outside {w}x{h} plane")
    x0 = min(int(math.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(math.floor(y)), h - 2) if h > 1 else 0
    fx, fy = x - x0, y - y0
    p = plane
    return float(
        p[y0, x0] * (1 - fx) * (1 - fy)
        + p[y0, x0 + 1] * fx * (1 - fy)
        + p[y0 + 1, x0] * (1 - fx) * fy
        + p[y0 + 1, x0 + 1] * fx * fy
    )


def bilinear_sample_grid(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized bilinear sampling; coordinates must already be in bounds."""
    h, w = plane.shape
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    return (
        plane[y0, x0] * (1 - fx) * (1 - fy)
        + plane[y0, x0 + 1] * fx * (1 - fy)
        + plane[y0 + 1, x0] * (1 - fx) * fy
        + plane[y0 + 1, x0 + 1] * fx * fy
    )


def resize_bilinear(img: PlanarImage, width: int, height: int) -> PlanarImage:
    """Resize with plain bilinear interpolation on the pixel-center grid."""
    if width < 1 or height < 1:
        raise InvalidInputError("target dimensions must be positive")
    sx = (img.width - 1) / max(width - 1, 1)
    sy = (img.height - 1) / max(height - 1, 1)
    xs = np.arange(width) * sx
    ys = np.arange(height) * sy
    gx, gy = np.meshgrid(xs, ys)
    out = np.empty((img.channels, height, width))
    for c in range(img.channels):
        out[c] = bilinear_sample_grid(img.samples[c], gx, gy)
    return from_planes(out, img.space)


# ---------------------------------------------------------------------------
# Raster file I/O.  8-bit samples map to [0,1] by division by 255.

def read_image(path, space_hint: str | None = None) -> PlanarImage:
    """Read a PNG or binary PPM/PGM file into RGB01 or GRAY01."""
    path = str(path)
    if path.lower().endswith((".ppm", ".pgm")):
        arr = _read_pnm(path)
    else:
        from PIL import Image

        with Image.open(path) as im:
            if im.mode in ("L", "I;16"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)[None] / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
                arr = np.moveaxis(arr, -1, 0)
    space = GRAY01 if arr.shape[0] == 1 else RGB01
    if space_hint is not None:
        space = space_hint
    return from_planes(arr, space)


def write_image(img: PlanarImage, path) -> None:
    """Write as PNG or binary PPM/PGM.

    [0,1]-ranged spaces quantize directly to 8 bits; CIELAB is first put
    through the min-max normalization so the file stays 8-bit per channel.
    """
    if img.space == CIELAB:
        img = normalize_lab(img)
    data = np.clip(np.rint(img.samples * 255.0), 0, 255).astype(np.uint8)
    path = str(path)
    if path.lower().endswith((".ppm", ".pgm")):
        _write_pnm(data, path)
        return
    from PIL import Image

    if img.channels == 1:
        Image.fromarray(data[0], mode="L").save(path)
    else:
        Image.fromarray(np.moveaxis(data, 0, -1), mode="RGB").save(path)


def _read_pnm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic not in (b"P5", b"P6"):
            raise InvalidInputError(f"{path}: not a binary PGM/PPM file")
        fields = []
        while len(fields) < 3:
            line = fh.readline()
            if not line:
                raise InvalidInputError(f"{path}: truncated PNM header")
            line = line.split(b"#", 1)[0]
            fields.extend(line.split())
        w, h, maxval = (int(v) for v in fields)
        if maxval != 255:
            raise InvalidInputError(f"{path}: only 8-bit PNM supported, maxval={maxval}")
        channels = 3 if magic == b"P6" else 1
        raw = fh.read(w * h * channels)
        if len(raw) != w * h * channels:
            raise InvalidInputError(f"{path}: truncated PNM payload")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, channels)
    return np.moveaxis(arr, -1, 0).astype(np.float64) / 255.0


def _write_pnm(data: np.ndarray, path: str) -> None:
    c, h, w = data.shape
    if path.lower().endswith(".pgm"):
        if c != 1:
            raise InvalidInputError("PGM holds a single channel")
        header = f"P5\n{w} {h}\n255\n".encode()
        payload = data[0].tobytes()
    else:
        if c != 3:
            raise InvalidInputError("PPM holds three channels")
        header = f"P6\n{w} {h}\n255\n".encode()
        payload = np.moveaxis(data, 0, -1).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
