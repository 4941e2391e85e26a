"""Shared fixtures.

The desk-scale model fixture trains the default architecture once per
session on 10k+ texture crops; only the acceptance tests request it, so
the unit-test portion of the suite stays fast.
"""

import numpy as np
import pytest

from dfetrack import raster, synthgen, trainpipe
from dfetrack.dfe import CaeConfig, train

DESK_SEED = 7


def texture_corpus(n_images=68, size=128):
    """Gain-jittered skin-like textures, half with a planted blob."""
    rng = np.random.default_rng(42)
    images = []
    for i in range(n_images):
        gain = 0.7 + 0.6 * rng.random()
        blob = (
            (float(rng.uniform(40, size - 40)), float(rng.uniform(40, size - 40)))
            if i % 2
            else None
        )
        images.append(
            synthgen.skin_texture(
                seed=1000 + i, width=size, height=size,
                base_tone=(0.72 * gain, 0.55 * gain, 0.45 * gain),
                contrast=0.12, blob_center=blob,
            )
        )
    return images


def crops_from(images, stride=8, window=31):
    crops = []
    for img in images:
        lab = raster.normalize_lab(raster.rgb_to_cielab(img))
        for cx, cy in trainpipe.extract_training_crops(lab, window=window, stride=stride):
            crops.append(raster.extract_crop(lab, (cx, cy), window).samples)
    return np.asarray(crops, dtype=np.float32)


@pytest.fixture(scope="session")
def desk_training_data():
    crops = crops_from(texture_corpus())
    held = crops[::10]
    training = np.delete(crops, np.arange(0, len(crops), 10), axis=0)
    return training, held


@pytest.fixture(scope="session")
def desk_model(desk_training_data):
    training, held = desk_training_data
    assert len(training) >= 10_000
    result = train(CaeConfig(seed=DESK_SEED), training, epochs=3, batch_size=64)
    return result.model, result.loss_curve, held
