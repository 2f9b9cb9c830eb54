"""Patch dataset construction and a synthetic splice generator.

Patches are 32x32 windows taken every 10 pixels from a tampered image.
A window is a *boundary* patch when its tampered fraction lies strictly
between 35% and 65%, a *normal* patch when it contains no tampered pixel,
and is dropped otherwise.
"""

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from . import imageio
from .colorspace import BT601, luma, rgb_to_crcb, ycrcb_to_rgb
from .errors import DataError, FormatError, ParameterError, ShapeError

NORMAL = 0
BOUNDARY = 1

WINDOW = 32
STRIDE = 10
LOW_FRACTION = 35  # percent, exclusive
HIGH_FRACTION = 65  # percent, exclusive
DEFAULT_TAU = 8 / 255

CORPUS_MAGIC = b"FPD1"
_RECORD_HEAD = struct.Struct("<BIHH")

# plus-shaped 3x3 footprint: removes speckles, keeps rectangle corners
_CLEANUP_FOOTPRINT = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class PatchRecord:
    pixels: np.ndarray
    label: int
    image_id: int
    top: int
    left: int

    def __post_init__(self):
        if np.shape(self.pixels) != (WINDOW, WINDOW, 3):
            raise ShapeError(f"patch must be 32x32x3, got {np.shape(self.pixels)}")


def diff_mask(tampered, original, tau=DEFAULT_TAU):
    """Binary mask of pixels where any channel differs by more than ``tau``."""
    tampered = np.asarray(tampered, dtype=np.float32)
    original = np.asarray(original, dtype=np.float32)
    if tampered.shape != original.shape:
        raise ShapeError(f"image shapes differ: {tampered.shape} vs {original.shape}")
    diff = np.abs(tampered - original)
    if diff.ndim == 3:
        diff = diff.max(axis=-1)
    mask = (diff > np.float32(tau)).astype(np.uint8)
    return ndimage.median_filter(mask, footprint=_CLEANUP_FOOTPRINT, mode="nearest")


def window_counts(mask, window=WINDOW, stride=STRIDE):
    """Tampered-pixel count of every stride-spaced window, shape (rows, cols)."""
    mask = np.asarray(mask)
    if mask.shape[0] < window or mask.shape[1] < window:
        return np.zeros((0, 0), dtype=np.int64)
    sums = sliding_window_view(mask.astype(np.int64), (window, window))[::stride, ::stride]
    return sums.sum(axis=(2, 3))


def classify_count(count, area):
    if count == 0:
        return NORMAL
    if LOW_FRACTION * area < 100 * count < HIGH_FRACTION * area:
        return BOUNDARY
    return None


def extract_patches(image, mask, window=WINDOW, stride=STRIDE, image_id=0):
    """Slide a window over ``image`` and keep boundary and normal patches."""
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(mask)
    if image.shape[:2] != mask.shape:
        raise ShapeError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    counts = window_counts(mask, window, stride)
    area = window * window
    records = []
    for r, c in np.ndindex(counts.shape):
        label = classify_count(int(counts[r, c]), area)
        if label is None:
            continue
        top, left = r * stride, c * stride
        records.append(PatchRecord(image[top:top + window, left:left + window].copy(),
                                   label, image_id, top, left))
    return records


@dataclass
class ForgerySpec:
    """Where and how a donor region is spliced into a host image."""

    shape: str = "rectangle"
    top: int = 0
    left: int = 0
    height: int = 32
    width: int = 32
    chroma_shift: float = 0.08
    blur_radius: int = 1
    seed: int = 0
    host_seed: int = 0
    donor_seed: int = 1


def region_mask(spec, size):
    h, w = size
    mask = np.zeros((h, w), dtype=np.uint8)
    if spec.shape == "rectangle":
        mask[spec.top:spec.top + spec.height, spec.left:spec.left + spec.width] = 1
    elif spec.shape == "ellipse":
        rr, cc = np.mgrid[0:spec.height, 0:spec.width]
        ry, rx = spec.height / 2.0, spec.width / 2.0
        inside = ((rr + 0.5 - ry) / ry) ** 2 + ((cc + 0.5 - rx) / rx) ** 2 <= 1.0
        mask[spec.top:spec.top + spec.height, spec.left:spec.left + spec.width] = inside
    else:
        raise ParameterError(f"unknown region shape {spec.shape!r}")
    return mask


def synthesize_forgery(host, donor, spec, constants=BT601):
    """Paste ``spec``'s region of ``donor`` into ``host``.

    The pasted pixels get a chroma offset of magnitude ``spec.chroma_shift`` in
    a seeded random (Cr, Cb) direction, luma untouched; then a two-pixel band
    straddling the seam is box-blurred with radius ``spec.blur_radius``.
    Returns ``(composite, mask)``.
    """
    host = np.asarray(host, dtype=np.float32)
    donor = np.asarray(donor, dtype=np.float32)
    if spec.height < 1 or spec.width < 1 or spec.top < 0 or spec.left < 0:
        raise ParameterError(f"invalid region geometry in {spec}")
    for label, img in (("host", host), ("donor", donor)):
        if spec.top + spec.height > img.shape[0] or spec.left + spec.width > img.shape[1]:
            raise ParameterError(f"region {spec.height}x{spec.width} at ({spec.top}, "
                                 f"{spec.left}) does not fit the {label} {img.shape[:2]}")
    rng = np.random.default_rng(spec.seed)
    mask = region_mask(spec, host.shape[:2])
    inside = mask.astype(bool)
    composite = host.copy()
    composite[inside] = donor[inside]

    if spec.chroma_shift > 0:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        shift = spec.chroma_shift * np.array([np.cos(angle), np.sin(angle)])
        pasted = composite[inside].astype(np.float64)
        rgb = ycrcb_to_rgb(luma(pasted, constants), rgb_to_crcb(pasted, constants) + shift,
                           constants)
        composite[inside] = np.clip(rgb, 0.0, 1.0)

    if spec.blur_radius > 0:
        band = ndimage.binary_dilation(inside) & ~ndimage.binary_erosion(inside)
        size = (2 * spec.blur_radius + 1, 2 * spec.blur_radius + 1, 1)
        blurred = ndimage.uniform_filter(composite, size=size, mode="nearest")
        composite[band] = blurred[band]
    return composite, mask


MIN_CAST_GAP = 0.06


def _cast_chroma(base):
    return rgb_to_crcb(np.asarray(base, dtype=np.float64))


def render_scene(seed, size=(128, 128), avoid_cast=None, min_cast_gap=MIN_CAST_GAP):
    """Procedural host/donor image: a colour-cast field with luminance-only shapes.

    Scene edges change brightness but not chroma, so the only chroma
    discontinuities in a composite are the splice seams. ``avoid_cast`` is
    another scene's base colour; the cast is redrawn until its chroma lies at
    least ``min_cast_gap`` away, as for two photographs taken under different
    light.
    """
    rng = np.random.default_rng(seed)
    h, w = size
    base = rng.uniform(0.1, 0.9, size=3)
    while avoid_cast is not None and np.linalg.norm(
            _cast_chroma(base) - _cast_chroma(avoid_cast)) < min_cast_gap:
        base = rng.uniform(0.1, 0.9, size=3)
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    slope = rng.uniform(-0.08, 0.08, size=(2, 3))
    img = base + yy[..., None] * slope[0] + xx[..., None] * slope[1]
    for _ in range(rng.integers(4, 9)):
        sh, sw = rng.integers(8, max(9, h // 2)), rng.integers(8, max(9, w // 2))
        top, left = rng.integers(0, h - sh + 1), rng.integers(0, w - sw + 1)
        spec = ForgerySpec(shape=rng.choice(["rectangle", "ellipse"]), top=int(top),
                           left=int(left), height=int(sh), width=int(sw))
        offset = rng.choice([-1, 1]) * rng.uniform(0.06, 0.2)
        img += region_mask(spec, size)[..., None] * offset
    img += ndimage.gaussian_filter(rng.normal(0, 0.03, size=(h, w, 1)), sigma=(1, 1, 0))
    img += rng.normal(0, 0.006, size=(h, w, 3))
    return np.clip(img, 0.0, 1.0).astype(np.float32), base


def quantize(image):
    return imageio.to_uint8(image).astype(np.float32) / np.float32(255.0)


def random_forgery_spec(rng, size=(128, 128), extent=(56, 96), chroma_shift=0.08,
                        blur_radius=1):
    h, w = size
    rh = int(rng.integers(extent[0], min(extent[1], h) + 1))
    rw = int(rng.integers(extent[0], min(extent[1], w) + 1))
    return ForgerySpec(
        shape=str(rng.choice(["rectangle", "ellipse"])),
        top=int(rng.integers(0, h - rh + 1)), left=int(rng.integers(0, w - rw + 1)),
        height=rh, width=rw, chroma_shift=chroma_shift, blur_radius=blur_radius,
        seed=int(rng.integers(2**31)), host_seed=int(rng.integers(2**31)),
        donor_seed=int(rng.integers(2**31)),
    )


def make_pair(spec, size=(128, 128)):
    """Render host and donor for ``spec``; return 8-bit-exact (original, tampered, mask)."""
    host, cast = render_scene(spec.host_seed, size)
    donor, _ = render_scene(spec.donor_seed, size, avoid_cast=cast)
    host, donor = quantize(host), quantize(donor)
    tampered, mask = synthesize_forgery(host, donor, spec)
    return host, quantize(tampered), mask


def balance_and_split(records, max_per_class, val_fraction, rng):
    """Cap each class by seeded subsampling, then split both classes by ``val_fraction``."""
    if not 0.0 <= val_fraction < 1.0:
        raise ParameterError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    train, val = [], []
    for label in (NORMAL, BOUNDARY):
        group = [r for r in records if r.label == label]
        if not group:
            raise DataError(f"no {'boundary' if label else 'normal'} patches to split")
        order = rng.permutation(len(group))[:max_per_class]
        n_val = int(round(len(order) * val_fraction))
        val.extend(group[i] for i in order[:n_val])
        train.extend(group[i] for i in order[n_val:])
    return train, val


def as_arrays(records):
    if not records:
        return np.zeros((0, WINDOW, WINDOW, 3), dtype=np.float32), np.zeros(0, dtype=np.int64)
    x = np.stack([r.pixels for r in records]).astype(np.float32)
    y = np.array([r.label for r in records], dtype=np.int64)
    return x, y


def encode_records(records):
    out = [CORPUS_MAGIC, struct.pack("<I", len(records))]
    for r in records:
        out.append(_RECORD_HEAD.pack(r.label, r.image_id, r.top, r.left))
        out.append(imageio.to_uint8(r.pixels).tobytes())
    return b"".join(out)


def decode_records(data):
    if data[:4] != CORPUS_MAGIC:
        raise FormatError("bad magic: not an FPD1 patch corpus")
    if len(data) < 8:
        raise FormatError("truncated FPD1 header at byte offset 4")
    (count,) = struct.unpack_from("<I", data, 4)
    rec_size = _RECORD_HEAD.size + WINDOW * WINDOW * 3
    if len(data) != 8 + count * rec_size:
        raise FormatError(f"FPD1 length mismatch: header says {count} records "
                          f"({8 + count * rec_size} bytes), file has {len(data)} bytes")
    records = []
    for i in range(count):
        at = 8 + i * rec_size
        label, image_id, top, left = _RECORD_HEAD.unpack_from(data, at)
        if label not in (NORMAL, BOUNDARY):
            raise FormatError(f"bad label byte {label} at byte offset {at}")
        raw = np.frombuffer(data, dtype=np.uint8, count=WINDOW * WINDOW * 3,
                            offset=at + _RECORD_HEAD.size)
        pixels = raw.reshape(WINDOW, WINDOW, 3).astype(np.float32) / np.float32(255.0)
        records.append(PatchRecord(pixels, label, image_id, top, left))
    return records


def write_records(records, path):
    with open(path, "wb") as fh:
        fh.write(encode_records(records))


def read_records(path):
    with open(path, "rb") as fh:
        return decode_records(fh.read())


MANIFEST = "manifest.json"


def generate_corpus(out_dir, count=64, seed=0, size=128, chroma_shift=0.08, blur_radius=1):
    """Write ``count`` original/tampered/mask triples plus a manifest of their specs."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for image_id in range(count):
        spec = random_forgery_spec(rng, (size, size), chroma_shift=chroma_shift,
                                   blur_radius=blur_radius)
        original, tampered, mask = make_pair(spec, (size, size))
        stem = f"{image_id:04d}"
        files = {"original": f"original_{stem}.ppm", "tampered": f"tampered_{stem}.ppm",
                 "mask": f"mask_{stem}.pgm"}
        imageio.write_image(original, os.path.join(out_dir, files["original"]))
        imageio.write_image(tampered, os.path.join(out_dir, files["tampered"]))
        imageio.write_mask(mask, os.path.join(out_dir, files["mask"]))
        entries.append({"id": image_id, **files, "spec": asdict(spec)})
    manifest = {"seed": seed, "size": size, "count": count, "images": entries}
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(corpus_dir):
    path = os.path.join(corpus_dir, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"no corpus manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def iter_corpus(corpus_dir):
    """Yield ``(image_id, original, tampered, mask)`` in id order."""
    manifest = load_manifest(corpus_dir)
    for entry in manifest["images"]:
        join = lambda key: os.path.join(corpus_dir, entry[key])  # noqa: E731
        yield (entry["id"], imageio.read_image(join("original")),
               imageio.read_image(join("tampered")), imageio.read_mask(join("mask")))
