"""Synthetic stimuli with known saliency, for smoke tests and overfit checks.

Each image is a dim textured background with a few bright coloured blobs;
its ground-truth map is a sum of Gaussians centred on the blobs, scaled to
peak at 1. Fixations are sampled around the blob centres.
"""

from typing import NamedTuple

import numpy as np

from .tensor import DTYPE, make_rng


class SyntheticSet(NamedTuple):
    images: np.ndarray  # N x 3 x H x W in [0, 1]
    maps: np.ndarray  # N x map_size x map_size in [0, 1]
    fixations: list  # per image, list of (row, col) in image pixels


def _gaussian_grid(size, centres, sigma):
    yy, xx = np.mgrid[0:size, 0:size].astype(DTYPE)
    out = np.zeros((size, size))
    for cy, cx in centres:
        out += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return out / out.max()


def make_blob_dataset(n, seed=0, image_size=96, map_size=48, n_blobs=(1, 3),
                      blob_sigma=6.0, fixations_per_image=12):
    rng = make_rng(seed)
    images = np.empty((n, 3, image_size, image_size))
    maps = np.empty((n, map_size, map_size))
    fixations = []
    scale = map_size / image_size
    for k in range(n):
        count = int(rng.integers(n_blobs[0], n_blobs[1] + 1))
        centres = rng.uniform(0.15 * image_size, 0.85 * image_size, size=(count, 2))
        img = 0.15 + 0.05 * rng.random((3, image_size, image_size))
        for cy, cx in centres:
            blob = _gaussian_grid(image_size, [(cy, cx)], blob_sigma)
            img += 0.8 * rng.uniform(0.3, 1.0, size=3)[:, None, None] * blob
        images[k] = np.clip(img, 0.0, 1.0)
        maps[k] = _gaussian_grid(map_size, centres * scale - 0.5 * (1 - scale), blob_sigma * scale * 1.5)
        pts = centres[rng.integers(0, count, fixations_per_image)]
        pts = pts + rng.normal(0.0, blob_sigma / 2, size=pts.shape)
        pts = np.clip(np.rint(pts), 0, image_size - 1).astype(int)
        fixations.append([tuple(p) for p in pts])
    return SyntheticSet(images, maps, fixations)
