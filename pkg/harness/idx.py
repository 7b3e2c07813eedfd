"""Reader for IDX image/label files (the MNIST container format)."""

import logging
import os
import struct

import numpy as np

from harness.datasets import DatasetHandle, Provenance
from numeric.core import RngStream, STREAM_DATA
from numeric.errors import ConfigError, FormatError

log = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IMAGE_HEADER = struct.Struct(">IIII")
LABEL_HEADER = struct.Struct(">II")


def _read_header(raw, header, expected_magic, what):
    if len(raw) < 4:
        raise FormatError(f"{what} file too short for a magic number", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise FormatError(f"bad {what} magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    if len(raw) < header.size:
        raise FormatError(f"truncated {what} header", offset=len(raw))
    return header.unpack_from(raw, 0)


def parse_idx_images(raw):
    """
    Decode an IDX3 image file.

    Args:
        raw (bytes): full file contents

    Returns:
        np.ndarray: uint8 array of shape (count, rows, cols)
    """
    _, count, rows, cols = _read_header(raw, IMAGE_HEADER, IMAGE_MAGIC, "image")
    need = count * rows * cols
    body = len(raw) - IMAGE_HEADER.size
    if body < need:
        raise FormatError(f"image data truncated: {body} of {need} bytes", offset=len(raw))
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=IMAGE_HEADER.size)
    return pixels.reshape(count, rows, cols)


def parse_idx_labels(raw):
    _, count = _read_header(raw, LABEL_HEADER, LABEL_MAGIC, "label")
    body = len(raw) - LABEL_HEADER.size
    if body < count:
        raise FormatError(f"label data truncated: {body} of {count} bytes", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=LABEL_HEADER.size)


def read_idx_pair(images_path, labels_path):
    with open(images_path, "rb") as f:
        images = parse_idx_images(f.read())
    with open(labels_path, "rb") as f:
        labels = parse_idx_labels(f.read())
    if images.shape[0] != labels.shape[0]:
        # The count field sits right after the label magic.
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64), images.shape[1:]


def load_idx(images_path, labels_path, test_images=None, test_labels=None, test_fraction=0.2, seed=0):
    """
    Load IDX files into a DatasetHandle with pixels scaled to [0, 1].

    Without a separate test pair, a seeded `test_fraction` of the examples is held out.
    """
    x, y, shape = read_idx_pair(images_path, labels_path)
    if test_images is not None:
        test_x, test_y, test_shape = read_idx_pair(test_images, test_labels)
        if test_shape != shape:
            raise FormatError(f"test images are {test_shape}, train images {shape}", offset=8)
        train_x, train_y = x, y
    else:
        if not 0.0 <= test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in [0, 1), got {test_fraction}")
        order = RngStream(seed, STREAM_DATA).permutation(x.shape[0])
        n_test = int(round(test_fraction * x.shape[0]))
        test_idx, train_idx = order[:n_test], order[n_test:]
        train_x, train_y, test_x, test_y = x[train_idx], y[train_idx], x[test_idx], y[test_idx]
    K = int(max(train_y.max(initial=0), test_y.max(initial=0))) + 1
    name = os.path.splitext(os.path.basename(images_path))[0]
    log.info("loaded %s: %d train / %d test, %dx%d pixels, %d classes",
             name, train_x.shape[0], test_x.shape[0], shape[0], shape[1], K)
    return DatasetHandle(name, train_x, train_y, test_x, test_y, int(shape[0] * shape[1]), K,
                         Provenance.IDX_FILES, image_shape=tuple(int(s) for s in shape))
