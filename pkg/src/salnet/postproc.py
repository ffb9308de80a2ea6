"""Turn raw network output into a full-resolution saliency map.

Chain: 2304-vector -> 48 x 48 grid (row-major) -> bilinear resize to the
stimulus size (align-corners) -> separable Gaussian blur, sigma in stimulus
pixels -> clamp to [0, 1] (optionally min-max normalised first).

Saliency maps are plain 2-D float64 arrays.
"""

import math

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError
from .layers import OUTPUT_SIDE, OUTPUT_SIZE, net_forward
from .tensor import DTYPE

DEFAULT_SIGMA = 3.0


def vector_to_map(v):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1 or v.size != OUTPUT_SIZE:
        raise InvalidShapeError(f"expected a vector of length {OUTPUT_SIZE}, got shape {v.shape}")
    return v.reshape(OUTPUT_SIDE, OUTPUT_SIDE).copy()


def _lerp_axis(m, n_out, axis):
    n_in = m.shape[axis]
    if n_out == n_in:
        return m
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    a = np.take(m, lo, axis=axis)
    b = np.take(m, hi, axis=axis)
    shape = [1] * m.ndim
    shape[axis] = n_out
    # a + f * (b - a) keeps constant inputs exactly constant
    return a + frac.reshape(shape) * (b - a)


def resize_bilinear(m, out_h, out_w):
    """Bilinear resize with corner pixels mapped onto corner pixels.

    Output pixel ``y`` samples input row ``y * (in_h - 1) / (out_h - 1)``
    (row 0 when ``out_h == 1``); same for columns.
    """
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise InvalidShapeError(f"expected a 2-D map, got shape {m.shape}")
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"target size must be positive, got {(out_h, out_w)}")
    return _lerp_axis(_lerp_axis(m, int(out_h), 0), int(out_w), 1)


def gaussian_kernel(sigma):
    """Normalised 1-D Gaussian taps for offsets ``-r..r`` with ``r = ceil(3 sigma)``."""
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=DTYPE)
    k = np.exp(-(offsets**2) / (2 * sigma**2))
    return k / k.sum()


def _blur_axis(m, kernel, axis):
    """Correlate every line along ``axis`` with ``kernel``; each output is
    divided by the sum of the taps that fell inside the map."""
    m = np.moveaxis(m, axis, 0)
    n = m.shape[0]
    radius = len(kernel) // 2
    out = np.zeros_like(m)
    weight = np.zeros(n)
    for k, tap in enumerate(kernel):
        off = k - radius
        lo, hi = max(0, -off), min(n, n - off)
        if lo >= hi:
            continue
        out[lo:hi] += tap * m[lo + off:hi + off]
        weight[lo:hi] += tap
    out /= weight.reshape((n,) + (1,) * (m.ndim - 1))
    return np.moveaxis(out, 0, axis)


def gaussian_blur(m, sigma=DEFAULT_SIGMA, order="rows"):
    """Separable Gaussian blur; at the borders the kernel is renormalised over in-bounds taps.

    ``order`` picks which pass runs first ("rows" filters along each row,
    i.e. horizontally, then vertically); results agree to rounding.
    """
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    if order not in ("rows", "cols"):
        raise InvalidArgumentError(f"order must be 'rows' or 'cols', got {order!r}")
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise InvalidShapeError(f"expected a 2-D map, got shape {m.shape}")
    k = gaussian_kernel(sigma)
    axes = (1, 0) if order == "rows" else (0, 1)
    for axis in axes:
        m = _blur_axis(m, k, axis)
    return m


def finalize(m, normalize=False):
    m = np.asarray(m, dtype=DTYPE)
    lo, hi = m.min(), m.max()
    if normalize and hi > lo:
        m = (m - lo) / (hi - lo)
    return np.clip(m, 0.0, 1.0)


def postprocess(v, stimulus_h, stimulus_w, sigma=DEFAULT_SIGMA, normalize=False):
    """Raw 2304-vector to a finished stimulus-sized map."""
    m = resize_bilinear(vector_to_map(v), stimulus_h, stimulus_w)
    return finalize(gaussian_blur(m, sigma), normalize)


def predict_pipeline(image, net, stimulus_h, stimulus_w, sigma=DEFAULT_SIGMA, normalize=False):
    """Network forward pass followed by :func:`postprocess`, for one 1 x 3 x 96 x 96 image."""
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim == 4 and image.shape[0] != 1:
        raise InvalidShapeError(f"predict_pipeline takes a single image, got batch {image.shape[0]}")
    out, _ = net_forward(image, net)
    return postprocess(out[0], stimulus_h, stimulus_w, sigma, normalize)
