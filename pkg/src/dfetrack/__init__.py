"""Skin-feature matching and tracking toolkit.

Dense SSR matching over learned 31x31 crop encodings with quadratic
subpixel refinement, a pyramidal Lucas-Kanade baseline, synthetic
ground-truth sequence generation, and chi-square calibration of tracking
errors against human labelling noise.
"""

__version__ = "0.1.0"

from . import dfe, evalstat, flow_lk, matchcore, raster, synthgen, tracker, trainpipe
from .errors import (
    BorderError,
    DfeTrackError,
    InvalidInputError,
    ModelFormatError,
    ModelShapeError,
    NumericError,
)

__all__ = [
    "BorderError",
    "DfeTrackError",
    "InvalidInputError",
    "ModelFormatError",
    "ModelShapeError",
    "NumericError",
    "dfe",
    "evalstat",
    "flow_lk",
    "matchcore",
    "raster",
    "synthgen",
    "tracker",
    "trainpipe",
]
