"""Whole-image probability maps from a trained patch classifier.

Two back ends fill the same map layout. :func:`swd` crops and scores every
window independently. :func:`fast_scnn` runs the convolutions once over the
whole image and scores (28, 28, 32) slices of the shared feature volume; valid
convolution is translation-equivariant, so both give the same scores.
"""

import re
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import model
from .colorspace import BT601, rgb_to_crcb
from .errors import FormatError, ParameterError, ShapeError

WINDOW = model.PATCH
MAP_MAGIC = b"PMAP"


@dataclass
class ProbabilityMap:
    """Scores of stride-spaced windows; cell (r, c) is the window at (r*stride, c*stride)."""

    scores: np.ndarray
    stride: int
    window: int = WINDOW

    @property
    def rows(self):
        return self.scores.shape[0]

    @property
    def cols(self):
        return self.scores.shape[1]

    def to_bytes(self):
        header = f"{MAP_MAGIC.decode()} {self.rows} {self.cols} {self.stride} {self.window}\n"
        return header.encode("ascii") + np.ascontiguousarray(self.scores, dtype="<f4").tobytes()

    @classmethod
    def from_bytes(cls, data):
        end = data.find(b"\n")
        m = re.fullmatch(rb"PMAP (\d+) (\d+) (\d+) (\d+)", data[:end]) if end > 0 else None
        if m is None:
            raise FormatError("bad probability-map header at byte offset 0")
        rows, cols, stride, window = (int(g) for g in m.groups())
        need = rows * cols * 4
        if len(data) - end - 1 != need:
            raise FormatError(f"probability map payload at byte offset {end + 1} has "
                              f"{len(data) - end - 1} bytes, expected {need}")
        scores = np.frombuffer(data, dtype="<f4", offset=end + 1).reshape(rows, cols)
        return cls(scores.astype(np.float32), stride, window)

    def to_raster(self):
        """8-bit grayscale view of the scores (score * 255, rounded)."""
        return np.clip(np.rint(self.scores.astype(np.float64) * 255), 0, 255).astype(np.uint8)


def map_shape(image_shape, stride, window=WINDOW):
    h, w = image_shape[:2]
    return (h - window) // stride + 1, (w - window) // stride + 1


def _check(image, stride):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected an RGB image (h, w, 3), got shape {image.shape}")
    if image.shape[0] < WINDOW or image.shape[1] < WINDOW:
        raise ShapeError(f"image {image.shape[:2]} is smaller than the {WINDOW}x{WINDOW} window")
    if int(stride) != stride or stride < 1:
        raise ParameterError(f"stride must be a positive integer, got {stride}")
    return image, int(stride)


def swd(params, image, stride=2, batch_size=64, counter=None, constants=BT601):
    """Sliding Window Detection: score every window crop with a full forward pass."""
    image, stride = _check(image, stride)
    rows, cols = map_shape(image.shape, stride)
    crops = sliding_window_view(image, (WINDOW, WINDOW), axis=(0, 1))[::stride, ::stride]
    crops = crops.reshape(rows * cols, 3, WINDOW, WINDOW)
    scores = np.empty(rows * cols, dtype=np.float32)
    for start in range(0, rows * cols, batch_size):
        batch = crops[start:start + batch_size].transpose(0, 2, 3, 1)
        scores[start:start + batch_size] = model.forward(params, batch, counter=counter,
                                                         constants=constants)
    return ProbabilityMap(scores.reshape(rows, cols), stride)


BAND_ROWS = 64


def feature_volume(params, image, counter=None, constants=BT601, band_rows=BAND_ROWS):
    """conv1+ReLU -> conv2+ReLU over the whole image: shape (n-4, m-4, 32).

    Computed in horizontal bands that overlap by four rows, which keeps the
    im2col buffers bounded without changing any output value.
    """
    crcb = rgb_to_crcb(np.asarray(image, dtype=np.float32), constants)
    n = crcb.shape[0]
    out = np.empty((n - 4, crcb.shape[1] - 4, model.N_FILTERS), dtype=np.float32)
    for r0 in range(0, n - 4, band_rows):
        r1 = min(r0 + band_rows, n - 4)
        out[r0:r1] = model.conv_features(params, crcb[r0:r1 + 4], counter=counter)
    return out


def fast_scnn(params, image, stride=2, batch_size=256, counter=None, constants=BT601):
    """Score (28, 28, 32) slices of the shared feature volume with the dense head."""
    image, stride = _check(image, stride)
    rows, cols = map_shape(image.shape, stride)
    feats = feature_volume(params, image, counter=counter, constants=constants)
    side = model.FEATURE_SIDE
    slices = sliding_window_view(feats, (side, side), axis=(0, 1))[::stride, ::stride]
    slices = slices.reshape(rows * cols, model.N_FILTERS, side, side)
    scores = np.empty(rows * cols, dtype=np.float32)
    for start in range(0, rows * cols, batch_size):
        # back to (h, w, c) order before flattening, as in training
        flat = slices[start:start + batch_size].transpose(0, 2, 3, 1).reshape(-1, model.FLAT)
        scores[start:start + batch_size] = model.dense_head(params, flat, counter=counter)
    return ProbabilityMap(scores.reshape(rows, cols), stride)


BACKENDS = {"swd": swd, "fast": fast_scnn}


def probability_map(params, image, backend="fast", stride=2, counter=None, constants=BT601):
    try:
        fn = BACKENDS[backend]
    except KeyError:
        raise ParameterError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}")
    return fn(params, image, stride, counter=counter, constants=constants)


def read_map(path):
    with open(path, "rb") as fh:
        return ProbabilityMap.from_bytes(fh.read())


def write_map(pmap, path):
    with open(path, "wb") as fh:
        fh.write(pmap.to_bytes())


def theoretical_macs(image_shape, stride, band_rows=BAND_ROWS):
    """Analytic MAC counts ``{"swd": ..., "fast": ...}`` for one image.

    The fast count includes the two conv1 rows recomputed at every band seam
    of :func:`feature_volume`.
    """
    n, m = image_shape[:2]
    rows, cols = map_shape(image_shape, stride)
    conv_patch = 30 * 30 * 32 * 18 + 28 * 28 * 32 * 288
    head = model.FLAT * model.HIDDEN + model.HIDDEN
    windows = rows * cols
    seams = -(-(n - 4) // band_rows) - 1
    conv1_rows = n - 2 + 2 * seams
    fast_conv = conv1_rows * (m - 2) * 32 * 18 + (n - 4) * (m - 4) * 32 * 288
    return {"swd": windows * (conv_patch + head), "fast": fast_conv + windows * head}

