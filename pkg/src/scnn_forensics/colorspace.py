"""RGB to YCrCb conversion, keeping only the two chroma planes."""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SpaceError


@dataclass(frozen=True)
class ColorConstants:
    """Luma weights for R, G and B. Must be positive and sum to one."""

    kr: float = 0.299
    kg: float = 0.587
    kb: float = 0.114

    def __post_init__(self):
        if min(self.kr, self.kg, self.kb) <= 0:
            raise ParameterError(f"colour constants must be positive: {self}")
        if abs(self.kr + self.kg + self.kb - 1.0) > 1e-9:
            raise ParameterError(f"colour constants must sum to 1: {self}")


BT601 = ColorConstants()


def _check_rgb(image):
    image = np.asarray(image)
    if image.ndim < 1 or image.shape[-1] != 3:
        raise SpaceError(f"expected an RGB image with 3 channels, got shape {image.shape}")
    return image


def luma(image, constants=BT601):
    image = _check_rgb(image)
    return (constants.kr * image[..., 0] + constants.kg * image[..., 1]
            + constants.kb * image[..., 2])


def rgb_to_crcb(image, constants=BT601):
    """Return the ``(..., 2)`` chroma planes (Cr, Cb) of an RGB image in [0, 1].

    Luma is computed only to form the colour differences and is then dropped,
    so each output channel lies in [-0.5, 0.5].
    """
    image = _check_rgb(image)
    if not np.issubdtype(image.dtype, np.floating):
        image = image.astype(np.float32)
    ftype = image.dtype.type
    y = luma(image, constants).astype(image.dtype, copy=False)
    cr = (image[..., 0] - y) / ftype(2.0 * (1.0 - constants.kr))
    cb = (image[..., 2] - y) / ftype(2.0 * (1.0 - constants.kb))
    return np.stack([cr, cb], axis=-1)


def ycrcb_to_rgb(y, crcb, constants=BT601):
    """Inverse of the forward transform given luma and both chroma planes."""
    crcb = np.asarray(crcb)
    r = y + 2.0 * (1.0 - constants.kr) * crcb[..., 0]
    b = y + 2.0 * (1.0 - constants.kb) * crcb[..., 1]
    g = (y - constants.kr * r - constants.kb * b) / constants.kg
    return np.stack([r, g, b], axis=-1)
