"""Saliency evaluation metrics: Similarity, CC, AUC-Judd, AUC-Borji, shuffled AUC.

Conventions used by every ROC-based score here:

* Positives are the map values at the *distinct* fixated pixels (a pixel
  fixated several times counts once, as in a binary fixation map).
* A pixel counts as detected at threshold ``t`` when its value is ``>= t``.
* The ROC curve runs from (0, 0) to (1, 1) and is integrated with the
  trapezoidal rule. Ties between a positive and a negative therefore earn
  half credit, and a constant map scores exactly 0.5.

AUC-Judd and AUC-Borji place thresholds at the distinct positive values.
Shuffled AUC places thresholds at every distinct value of positives and
negatives, which makes it equal to ``P(pos > neg) + P(pos == neg) / 2``.
"""

import csv
from dataclasses import astuple, dataclass

import numpy as np

from .errors import DegenerateInputError, FixationValidationError, InvalidArgumentError, InvalidShapeError
from .tensor import DTYPE


@dataclass(frozen=True)
class FixationSet:
    """Fixation points as (row, col), origin at the top-left, inside ``frame`` = (height, width)."""

    points: np.ndarray
    frame: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        h, w = (int(d) for d in self.frame)
        if h < 1 or w < 1:
            raise InvalidArgumentError(f"frame must be positive, got {self.frame}")
        bad = (pts[:, 0] < 0) | (pts[:, 0] >= h) | (pts[:, 1] < 0) | (pts[:, 1] >= w)
        if bad.any():
            r, c = pts[np.argmax(bad)]
            raise FixationValidationError(f"fixation ({r}, {c}) outside frame {h}x{w}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frame", (h, w))

    def __len__(self):
        return len(self.points)

    def unique_flat(self):
        """Sorted distinct fixated pixels as flat row-major indices."""
        return np.unique(self.points[:, 0] * self.frame[1] + self.points[:, 1])

    def rescaled(self, frame):
        """Same fixations mapped proportionally (pixel centres) into another frame."""
        h0, w0 = self.frame
        h1, w1 = frame
        rows = np.floor((self.points[:, 0] + 0.5) * h1 / h0).astype(np.int64)
        cols = np.floor((self.points[:, 1] + 0.5) * w1 / w0).astype(np.int64)
        return FixationSet(np.stack([np.clip(rows, 0, h1 - 1), np.clip(cols, 0, w1 - 1)], 1), frame)


def _as_map(m):
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise InvalidShapeError(f"expected a 2-D saliency map, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise InvalidArgumentError("saliency map contains non-finite values")
    return m


def _same_shape(p, q):
    p, q = _as_map(p), _as_map(q)
    if p.shape != q.shape:
        raise InvalidShapeError(f"map shapes differ: {p.shape} vs {q.shape}")
    return p, q


def _check_frame(m, fix):
    if tuple(m.shape) != tuple(fix.frame):
        raise InvalidShapeError(f"map shape {m.shape} does not match fixation frame {fix.frame}")
    if len(fix) == 0:
        raise InvalidArgumentError("AUC needs at least one fixation")


def similarity(p, q):
    """Histogram intersection of the two maps after scaling each to unit mass."""
    p, q = _same_shape(p, q)
    if (p < 0).any() or (q < 0).any():
        raise InvalidArgumentError("similarity needs non-negative maps")
    sp, sq = p.sum(), q.sum()
    if sp <= 0 or sq <= 0:
        raise DegenerateInputError("similarity is undefined for a map with zero mass")
    return float(np.minimum(p / sp, q / sq).sum())


def cc(p, q):
    """Pearson correlation over all pixels."""
    p, q = _same_shape(p, q)
    dp = p - p.mean()
    dq = q - q.mean()
    vp, vq = (dp * dp).sum(), (dq * dq).sum()
    if vp == 0 or vq == 0:
        raise DegenerateInputError("cc is undefined for a constant map")
    return float((dp * dq).sum() / np.sqrt(vp * vq))


def sweep_auc(pos, neg, thresholds):
    """Trapezoidal ROC area for detection rule ``value >= threshold``.

    ``thresholds`` need not be sorted or unique. The curve is closed with the
    points (0, 0) and (1, 1).
    """
    pos = np.sort(np.asarray(pos, dtype=DTYPE))
    neg = np.sort(np.asarray(neg, dtype=DTYPE))
    if pos.size == 0 or neg.size == 0:
        raise DegenerateInputError("ROC needs at least one positive and one negative")
    t = np.unique(thresholds)[::-1]
    tpr = (pos.size - np.searchsorted(pos, t, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg, t, side="left")) / neg.size
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])) / 2)


def auc_judd(m, fix):
    m = _as_map(m)
    _check_frame(m, fix)
    flat = m.ravel()
    fixated = fix.unique_flat()
    mask = np.ones(flat.size, dtype=bool)
    mask[fixated] = False
    if not mask.any():
        raise DegenerateInputError("every pixel is fixated; no negatives for AUC-Judd")
    pos = flat[fixated]
    return sweep_auc(pos, flat[mask], pos)


def _rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def auc_borji(m, fix, n_splits=100, n_negatives=None, seed=0, exclude_fixated=False):
    """AUC with negatives drawn uniformly (with replacement) from the map's pixels.

    ``n_negatives`` defaults to the number of positives. With
    ``exclude_fixated`` the negatives come from non-fixated pixels only.
    Thresholds sit at the distinct positive values, as for AUC-Judd.
    """
    m = _as_map(m)
    _check_frame(m, fix)
    if n_splits < 1:
        raise InvalidArgumentError(f"n_splits must be >= 1, got {n_splits}")
    flat = m.ravel()
    fixated = fix.unique_flat()
    pos = flat[fixated]
    n_neg = len(pos) if n_negatives is None else int(n_negatives)
    if n_neg < 1:
        raise InvalidArgumentError(f"n_negatives must be >= 1, got {n_neg}")
    pool = np.arange(flat.size)
    if exclude_fixated:
        pool = np.setdiff1d(pool, fixated)
        if pool.size == 0:
            raise DegenerateInputError("every pixel is fixated; no negatives to draw")
    rng = _rng(seed)
    scores = [
        sweep_auc(pos, flat[pool[rng.integers(0, pool.size, n_neg)]], pos) for _ in range(n_splits)
    ]
    return float(np.mean(scores))


def auc_shuffled(m, fix, other_fix, n_splits=100, n_negatives=None, seed=0):
    """AUC with negatives taken from fixations of other images.

    Each split draws ``n_negatives`` (default: number of positives) of the
    other fixations without replacement, or all of them if fewer exist.
    ``other_fix`` must share the map's frame.
    """
    m = _as_map(m)
    _check_frame(m, fix)
    if len(other_fix) == 0:
        raise InvalidArgumentError("shuffled AUC needs fixations from other images")
    if tuple(other_fix.frame) != tuple(m.shape):
        raise InvalidShapeError(f"other fixations frame {other_fix.frame} != map shape {m.shape}")
    if n_splits < 1:
        raise InvalidArgumentError(f"n_splits must be >= 1, got {n_splits}")
    flat = m.ravel()
    pos = flat[fix.unique_flat()]
    other = flat[other_fix.points[:, 0] * m.shape[1] + other_fix.points[:, 1]]
    n_neg = len(pos) if n_negatives is None else int(n_negatives)
    n_neg = min(max(n_neg, 1), other.size)
    rng = _rng(seed)
    scores = []
    for _ in range(n_splits):
        neg = other if n_neg == other.size else other[rng.choice(other.size, n_neg, replace=False)]
        scores.append(sweep_auc(pos, neg, np.concatenate([pos, neg])))
    return float(np.mean(scores))


@dataclass(frozen=True)
class MetricConfig:
    n_splits: int = 100
    n_negatives: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class MetricReport:
    similarity: float
    cc: float
    auc_shuffled: float
    auc_borji: float
    auc_judd: float

    COLUMNS = ("Similarity", "CC", "AUC shuffled", "AUC Borji", "AUC Judd")

    def as_row(self):
        return astuple(self)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            writer.writerow([repr(v) for v in self.as_row()])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) != 2 or tuple(rows[0]) != cls.COLUMNS:
            raise InvalidArgumentError(f"{path}: not a metric report")
        return cls(*(float(v) for v in rows[1]))


def per_image_metrics(predictions, fixations, gt_maps, cfg=None):
    """Metric rows (one per image, columns in :attr:`MetricReport.COLUMNS` order)."""
    cfg = cfg or MetricConfig()
    n = len(predictions)
    if n == 0 or len(fixations) != n or len(gt_maps) != n:
        raise InvalidArgumentError(
            f"need aligned non-empty lists, got {n} predictions, {len(fixations)} fixation sets, "
            f"{len(gt_maps)} ground-truth maps"
        )
    rows = []
    for i, (pred, fix, gt) in enumerate(zip(predictions, fixations, gt_maps)):
        pred = _as_map(pred)
        others = [f.rescaled(pred.shape) for j, f in enumerate(fixations) if j != i and len(f)]
        if not others:
            raise InvalidArgumentError("shuffled AUC needs fixations from at least one other image")
        other = FixationSet(np.concatenate([o.points for o in others]), pred.shape)
        rows.append((
            similarity(pred, gt),
            cc(pred, gt),
            auc_shuffled(pred, fix, other, cfg.n_splits, cfg.n_negatives, seed=(cfg.seed, i, 1)),
            auc_borji(pred, fix, cfg.n_splits, cfg.n_negatives, seed=(cfg.seed, i, 0)),
            auc_judd(pred, fix),
        ))
    return rows


def evaluate_dataset(predictions, fixations, gt_maps, cfg=None):
    """Average each metric over images.

    Similarity and CC compare predictions to the ground-truth maps; the AUCs
    use fixations. Shuffled-AUC negatives for image ``i`` are the pooled
    fixations of all other images, rescaled into image ``i``'s frame. Random
    draws for image ``i`` are seeded from ``(cfg.seed, i)`` only.
    """
    rows = np.array(per_image_metrics(predictions, fixations, gt_maps, cfg))
    return MetricReport(*(float(v) for v in rows.mean(axis=0)))


