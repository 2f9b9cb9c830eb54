"""Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only."""

import numpy as np

from .errors import FormatError

_MAGIC = {b"P6": 3, b"P5": 1}


def _header_fields(data):
    """Yield (token, end-offset) for the magic, width, height and maxval."""
    pos = 0
    fields = []
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"truncated header at byte offset {pos}")
        fields.append((data[start:pos], start))
    if pos >= len(data):
        raise FormatError(f"truncated header at byte offset {pos}")
    # exactly one whitespace byte separates maxval from the raster
    return fields, pos + 1


def decode(data):
    """Parse PPM/PGM bytes into a uint8 array of shape (h, w, 3) or (h, w)."""
    fields, offset = _header_fields(data)
    magic, _ = fields[0]
    if magic not in _MAGIC:
        raise FormatError(f"unsupported magic {magic!r} at byte offset 0")
    values = []
    for token, at in fields[1:]:
        if not token.isdigit():
            raise FormatError(f"expected an integer, found {token!r} at byte offset {at}")
        values.append(int(token))
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"max value {maxval} at byte offset {fields[3][1]}: "
                          "only 8-bit (255) rasters are supported")
    if width < 1 or height < 1:
        raise FormatError(f"empty raster {width}x{height} at byte offset {fields[1][1]}")
    channels = _MAGIC[magic]
    need = width * height * channels
    have = len(data) - offset
    if have < need:
        raise FormatError(f"truncated raster: expected {need} bytes from byte offset "
                          f"{offset}, found {have}")
    raster = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raster.reshape(shape).copy()


def encode(pixels):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise FormatError(f"encode expects uint8 pixels, got {pixels.dtype}")
    if pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    elif pixels.ndim == 2:
        magic = b"P5"
    else:
        raise FormatError(f"cannot encode array of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def to_uint8(image):
    """Map [0, 1] floats to 8-bit codes (round half to even, clipped)."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_image(path):
    """Read a P6 or P5 file as float32 in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    return decode(data).astype(np.float32) / np.float32(255.0)


def write_image(image, path):
    """Write an (h, w, 3) image as P6 or an (h, w) image as P5."""
    with open(path, "wb") as fh:
        fh.write(encode(to_uint8(image)))


def read_mask(path):
    raster = decode(open(path, "rb").read())
    if raster.ndim != 2:
        raise FormatError(f"{path}: mask must be a single-channel PGM")
    return (raster > 127).astype(np.uint8)


def write_mask(mask, path):
    with open(path, "wb") as fh:
        fh.write(encode(np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)))
