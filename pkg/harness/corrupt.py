"""Synthetic corruptions of the test split for out-of-distribution probes."""

import logging
from enum import Enum

import numpy as np
from scipy import ndimage

from numeric.core import RngStream, STREAM_CORRUPT
from numeric.errors import DomainError

log = logging.getLogger(__name__)

NOISE_SIGMA = (0.04, 0.06, 0.08, 0.09, 0.10)
BRIGHTNESS_STEP = 0.08


class Corruption(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    BRIGHTNESS = "brightness"
    BLUR = "blur"


def blur_size(severity):
    return severity + 2


def _blur(x, severity, image_shape):
    size = blur_size(severity)
    if image_shape is not None:
        images = x.reshape((x.shape[0],) + tuple(image_shape))
        return ndimage.uniform_filter(images, size=(1, size, size), mode="nearest").reshape(x.shape)
    return ndimage.uniform_filter1d(x, size=size, axis=1, mode="nearest")


def corrupt(data, kind, severity, seed, sigma=None):
    """
    Corrupted copy of a dataset's test split; the training split is untouched.

    Args:
        data (DatasetHandle): source dataset
        kind (Corruption): gaussian_noise, brightness or blur
        severity (int): 1..5
        seed (int): noise seed
        sigma (float): overrides the gaussian_noise level (0 leaves the data unchanged)

    Returns:
        DatasetHandle: same data with corrupted test inputs clipped to [0, 1]
    """
    kind = Corruption(kind)
    if int(severity) != severity or not 1 <= severity <= 5:
        raise DomainError(f"severity must be an integer in 1..5, got {severity}")
    severity = int(severity)
    x = data.test_x
    if kind is Corruption.GAUSSIAN_NOISE:
        level = NOISE_SIGMA[severity - 1] if sigma is None else float(sigma)
        if level == 0.0:
            out = x.copy()
        else:
            rng = RngStream(seed, STREAM_CORRUPT, severity)
            out = x + level * rng.normal(x.shape)
    elif kind is Corruption.BRIGHTNESS:
        out = x + BRIGHTNESS_STEP * severity
    else:
        out = _blur(x, severity, data.image_shape)
    out = np.clip(out, 0.0, 1.0)
    log.debug("corrupted %s test split with %s severity %d", data.name, kind.value, severity)
    return data.with_test_inputs(out, name=f"{data.name}-{kind.value}{severity}")
