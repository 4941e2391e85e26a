"""Dataset ingestion for autoencoder training.

Walks a directory of raster images, extracts 31x31 crop centers on a
stride grid, assigns each crop to a train/heldout split, and serves
deterministic LAB01 crop batches.  Split membership is driven by a keyed
hash of (seed, image, center), so it is independent of file enumeration
order; a rank quota pins the heldout count to the requested fraction.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import matchcore, raster
from .errors import InvalidInputError

log = logging.getLogger(__name__)

TRAIN = "train"
HELDOUT = "heldout"

_IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    cx: int
    cy: int
    split: str


@dataclass(frozen=True)
class CropManifest:
    entries: tuple[ManifestEntry, ...]
    seed: int
    skipped: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def extract_training_crops(img: raster.PlanarImage, window: int = 31, stride: int = 30) -> list[tuple[int, int]]:
    """Inclusive stride grid of crop centers; undersized images yield none."""
    if img.width < window or img.height < window:
        log.warning(
            "image %dx%d smaller than the %dpx window; skipped",
            img.width, img.height, window,
        )
        return []
    grid = matchcore.position_grid(img.width, img.height, window, stride)
    return [(int(x), int(y)) for x, y in grid.centers()]


def _entry_hash(seed: int, rel_path: str, cx: int, cy: int) -> int:
    digest = hashlib.sha256(f"{seed}:{rel_path}:{cx}:{cy}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def build_manifest(image_dir, seed: int, heldout_fraction: float, window: int = 31, stride: int = 30) -> CropManifest:
    """Deterministic crop manifest over a directory tree of raster files.

    Unreadable files land in the skip report instead of aborting.  The
    heldout split takes the round(n * fraction) entries with the smallest
    keyed hashes, so the fraction is honored to within one entry.
    """
    if not 0.0 <= heldout_fraction < 1.0:
        raise InvalidInputError("heldout fraction must be in [0, 1)")
    image_dir = str(image_dir)
    paths = []
    for root, _, files in os.walk(image_dir):
        for name in files:
            if name.lower().endswith(_IMAGE_SUFFIXES):
                paths.append(os.path.join(root, name))
    paths.sort()

    keyed: list[tuple[int, str, int, int]] = []
    skipped: list[str] = []
    for path in paths:
        rel = os.path.relpath(path, image_dir)
        try:
            img = raster.read_image(path)
        except Exception as exc:  # damaged files must not kill ingestion
            log.warning("skipping unreadable %s: %s", path, exc)
            skipped.append(rel)
            continue
        for cx, cy in extract_training_crops(img, window=window, stride=stride):
            keyed.append((_entry_hash(seed, rel, cx, cy), rel, cx, cy))

    keyed.sort()
    quota = round(len(keyed) * heldout_fraction)
    held = set(keyed[:quota])
    entries = []
    for item in sorted(keyed, key=lambda k: (k[1], k[3], k[2])):
        _, rel, cx, cy = item
        entries.append(
            ManifestEntry(rel, cx, cy, HELDOUT if item in held else TRAIN)
        )
    return CropManifest(entries=tuple(entries), seed=seed, skipped=tuple(skipped))


def write_manifest(manifest: CropManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("image_path,cx,cy,split\n")
        for e in manifest.entries:
            fh.write(f"{e.image_path},{e.cx},{e.cy},{e.split}\n")


def read_manifest(path, seed: int = 0) -> CropManifest:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "image_path,cx,cy,split":
            raise InvalidInputError(f"{path}: unexpected manifest header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            image_path, cx, cy, split = line.rsplit(",", 3)
            if split not in (TRAIN, HELDOUT):
                raise InvalidInputError(f"{path}: unknown split tag {split!r}")
            entries.append(ManifestEntry(image_path, int(cx), int(cy), split))
    return CropManifest(entries=tuple(entries), seed=seed)


def load_crops(manifest: CropManifest, image_dir, split: str | None = None, window: int = 31) -> np.ndarray:
    """Materialize LAB01 crops as an (N, 3, window, window) float32 array.

    Each source image is read and converted once; crops follow manifest
    order within the chosen split.
    """
    image_dir = str(image_dir)
    wanted = [e for e in manifest.entries if split is None or e.split == split]
    if not wanted:
        return np.zeros((0, 3, window, window), dtype=np.float32)
    cache: dict[str, raster.PlanarImage] = {}
    out = np.empty((len(wanted), 3, window, window), dtype=np.float32)
    for i, entry in enumerate(wanted):
        img = cache.get(entry.image_path)
        if img is None:
            rgb = raster.read_image(os.path.join(image_dir, entry.image_path))
            if rgb.channels != 3:
                raise InvalidInputError(
                    f"{entry.image_path}: training crops need 3-channel sources"
                )
            img = raster.normalize_lab(raster.rgb_to_cielab(rgb))
            cache[entry.image_path] = img
        crop = raster.extract_crop(img, (entry.cx, entry.cy), window)
        out[i] = crop.samples
    return out
