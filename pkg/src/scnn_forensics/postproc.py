"""Probability map -> bounding boxes -> IoU verdicts.

threshold -> majority (median) filter -> 8-connected components -> pixel
boxes -> merge overlapping boxes; a detection is correct when its best IoU
against the ground-truth box exceeds 0.5.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError, FormatError, ParameterError

DEFAULT_THRESHOLD = 0.5
DEFAULT_MEDIAN_K = 5
DEFAULT_FOOTPRINT = "center"
IOU_CORRECT = 0.5


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open pixel rectangle [top, bottom) x [left, right)."""

    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        if self.bottom <= self.top or self.right <= self.left:
            raise ParameterError(f"degenerate box {self}")

    @property
    def area(self):
        return (self.bottom - self.top) * (self.right - self.left)

    def intersects(self, other):
        """Positive-area overlap; boxes that only touch do not intersect."""
        return (min(self.bottom, other.bottom) > max(self.top, other.top)
                and min(self.right, other.right) > max(self.left, other.left))

    def union(self, other):
        return BoundingBox(min(self.top, other.top), min(self.left, other.left),
                           max(self.bottom, other.bottom), max(self.right, other.right))

    def __str__(self):
        return f"{self.top},{self.left},{self.bottom},{self.right}"

    @classmethod
    def parse(cls, text):
        try:
            return cls(*(int(v) for v in text.split(",")))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad box {text!r}: {exc}") from None


@dataclass
class BinaryMap:
    bits: np.ndarray
    stride: int
    window: int = 32

    @property
    def rows(self):
        return self.bits.shape[0]

    @property
    def cols(self):
        return self.bits.shape[1]


def threshold(pmap, t=DEFAULT_THRESHOLD):
    """Set a bit wherever the score is strictly above ``t``."""
    return BinaryMap((pmap.scores > t).astype(np.uint8), pmap.stride, pmap.window)


def median_filter(bmap, k=DEFAULT_MEDIAN_K):
    """k x k majority vote with edge replication."""
    if k < 1 or k % 2 == 0:
        raise ParameterError(f"median window must be odd and >= 1, got {k}")
    if k == 1 or bmap.bits.size == 0:
        return BinaryMap(bmap.bits.copy(), bmap.stride, bmap.window)
    bits = ndimage.median_filter(bmap.bits, size=k, mode="nearest")
    return BinaryMap(bits, bmap.stride, bmap.window)


def merge_boxes(boxes):
    """Replace intersecting pairs by their union until no two boxes intersect."""
    boxes = list(boxes)
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if boxes[i].intersects(boxes[j]):
                    boxes[i] = boxes[i].union(boxes.pop(j))
                    merged = True
                    break
            if merged:
                break
    return sorted(boxes)


FOOTPRINTS = ("window", "center")


def cell_extent(stride, window, footprint):
    """``(offset, size)`` of the pixel square a map cell stands for.

    ``"window"``: the whole window the cell scored. ``"center"``: the
    stride-sized block at the window centre, so neighbouring cells tile the
    image without overlap.
    """
    if footprint == "window":
        return 0, window
    if footprint == "center":
        return (window - stride) // 2, stride
    raise ParameterError(f"footprint must be one of {FOOTPRINTS}, got {footprint!r}")


def component_boxes(bmap, footprint="window"):
    """One pixel box per 8-connected component of set cells, before merging."""
    offset, size = cell_extent(bmap.stride, bmap.window, footprint)
    if bmap.bits.size == 0 or not bmap.bits.any():
        return []
    labels, _ = ndimage.label(bmap.bits, structure=np.ones((3, 3), dtype=int))
    s = bmap.stride
    return [BoundingBox(rs.start * s + offset, cs.start * s + offset,
                        (rs.stop - 1) * s + offset + size, (cs.stop - 1) * s + offset + size)
            for rs, cs in ndimage.find_objects(labels)]


def components_to_boxes(bmap, footprint="window"):
    """Pixel boxes around 8-connected components of set cells, overlaps merged."""
    return merge_boxes(component_boxes(bmap, footprint))


def iou(a, b):
    inter_h = min(a.bottom, b.bottom) - max(a.top, b.top)
    inter_w = min(a.right, b.right) - max(a.left, b.left)
    if inter_h <= 0 or inter_w <= 0:
        return 0.0
    inter = inter_h * inter_w
    return inter / (a.area + b.area - inter)


def mask_box(mask):
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise DataError("ground-truth mask has no tampered pixels")
    return BoundingBox(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


@dataclass
class Verdict:
    correct: bool
    best_iou: float


def evaluate(predicted, mask):
    gt = mask_box(mask)
    best = max((iou(p, gt) for p in predicted), default=0.0)
    return Verdict(best > IOU_CORRECT, best)


def corpus_accuracy(results):
    results = list(results)
    if not results:
        raise DataError("cannot compute accuracy of an empty result list")
    return sum(bool(r.correct) for r in results) / len(results)


def localize(pmap, t=DEFAULT_THRESHOLD, k=DEFAULT_MEDIAN_K, footprint=DEFAULT_FOOTPRINT):
    """Full chain from probability map to ``(binary map, merged boxes)``."""
    bmap = median_filter(threshold(pmap, t), k)
    return bmap, components_to_boxes(bmap, footprint)


def format_result(image_id, boxes, verdict=None):
    """``id box box ... best_iou verdict``; the last two are omitted without ground truth."""
    parts = [str(image_id)] + [str(b) for b in boxes]
    if verdict is not None:
        parts += [f"{verdict.best_iou:.6f}", "correct" if verdict.correct else "incorrect"]
    return " ".join(parts)


def parse_result(line):
    """Inverse of :func:`format_result`: ``(image_id, boxes, verdict-or-None)``."""
    parts = line.split()
    if not parts:
        raise FormatError("empty result line")
    verdict = None
    if parts[-1] in ("correct", "incorrect"):
        if len(parts) < 3:
            raise FormatError(f"bad result line {line!r}")
        try:
            best = float(parts[-2])
        except ValueError:
            raise FormatError(f"bad IoU value {parts[-2]!r} in {line!r}") from None
        verdict = Verdict(parts[-1] == "correct", best)
        parts = parts[:-2]
    return parts[0], [BoundingBox.parse(p) for p in parts[1:]], verdict


def write_results(lines, path):
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def read_results(path):
    with open(path) as fh:
        return [parse_result(line) for line in fh if line.strip()]
