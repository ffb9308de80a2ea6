"""Dense 4-D tensor helpers.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 laid out as
N x C x H x W in C (row-major) order. Image files store pixels as H x W x C;
:func:`from_hwc` and :func:`to_hwc` convert between the two layouts.

Random initialisation uses numpy's ``Generator`` over the PCG64 bit
generator, seeded directly with the caller's integer seed. Normal variates
come from ``Generator.standard_normal`` (ziggurat), so a given
``(shape, mean, stddev, seed)`` always yields the same bits for a given
numpy release.
"""

from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError

DTYPE = np.float64


class Shape4(NamedTuple):
    n: int
    c: int
    h: int
    w: int

    @property
    def size(self):
        return self.n * self.c * self.h * self.w


def as_shape4(shape):
    """Coerce a 4-sequence into a :class:`Shape4`, rejecting zero or negative extents."""
    try:
        dims = tuple(int(d) for d in shape)
    except TypeError as exc:
        raise InvalidShapeError(f"shape must be a 4-sequence, got {shape!r}") from exc
    if len(dims) != 4:
        raise InvalidShapeError(f"shape must have 4 extents (N, C, H, W), got {dims}")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"all extents must be >= 1, got {dims}")
    return Shape4(*dims)


def make_rng(seed):
    # 64-bit seeds are accepted as-is; negative seeds are folded into uint64.
    return np.random.Generator(np.random.PCG64(int(seed) % (1 << 64)))


def init_gaussian(shape, mean=0.0, stddev=0.01, seed=0):
    """Return a tensor of i.i.d. N(mean, stddev**2) samples.

    ``stddev == 0`` yields the constant ``mean`` exactly (used for bias init).
    """
    shape = as_shape4(shape)
    if stddev < 0:
        raise InvalidArgumentError(f"stddev must be non-negative, got {stddev}")
    out = np.full(shape, mean, dtype=DTYPE)
    if stddev > 0:
        out += stddev * make_rng(seed).standard_normal(shape.size).reshape(shape)
    return out


def hflip(t):
    """Mirror along the width axis: column ``w`` goes to ``W - 1 - w``."""
    return np.ascontiguousarray(np.asarray(t)[..., ::-1])


def reshape(t, new_shape):
    new_shape = as_shape4(new_shape)
    t = np.asarray(t)
    if t.size != new_shape.size:
        raise InvalidShapeError(
            f"cannot reshape {t.size} elements into {tuple(new_shape)} ({new_shape.size} elements)"
        )
    return np.ascontiguousarray(t).reshape(new_shape)


def from_hwc(image):
    """H x W x C image (or batch N x H x W x C) to N x C x H x W float64."""
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim == 3:
        image = image[None]
    if image.ndim != 4:
        raise InvalidShapeError(f"expected HWC or NHWC array, got shape {image.shape}")
    return np.ascontiguousarray(image.transpose(0, 3, 1, 2))


def to_hwc(t):
    t = np.asarray(t)
    return np.ascontiguousarray(t.transpose(0, 2, 3, 1))
