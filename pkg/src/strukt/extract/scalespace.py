"""Sign persistence of difference-of-Gaussians responses across dyadic scales."""

import math

import numpy as np
from scipy import ndimage

RESPONSE_FLOOR = 1e-9


def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian truncated at ``ceil(3 * sigma)`` samples."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth(image, sigma):
    """Separable Gaussian blur with half-sample symmetric (reflected) borders."""
    kern = gaussian_kernel(sigma)
    out = ndimage.correlate1d(image, kern, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kern, axis=1, mode="reflect")


def dog_signs(image, n_scales, base_sigma):
    """Sign (-1, 0, +1) of ``G(s) - G(2s)`` at ``s = base_sigma * 2**m``.

    Responses with magnitude below ``RESPONSE_FLOOR`` get sign 0.
    """
    image = np.asarray(image, dtype=np.float64)
    blurred = [smooth(image, base_sigma * 2.0 ** m) for m in range(n_scales + 1)]
    signs = []
    for m in range(n_scales):
        resp = blurred[m] - blurred[m + 1]
        s = np.sign(resp).astype(np.int8)
        s[np.abs(resp) < RESPONSE_FLOOR] = 0
        signs.append(s)
    return np.stack(signs)


def persistence(image, n_scales, base_sigma):
    """Fraction of scales whose response sign agrees with the pixel's majority sign.

    Zero responses agree with neither sign. A positive/negative tie scores
    the tied count whichever sign is taken as the majority.
    """
    if n_scales < 2:
        raise ValueError("n_scales must be at least 2")
    signs = dog_signs(image, n_scales, base_sigma)
    pos = np.sum(signs > 0, axis=0)
    neg = np.sum(signs < 0, axis=0)
    return np.maximum(pos, neg) / float(n_scales)
