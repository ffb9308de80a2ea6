"""scikit-learn style wrappers around training, prediction and post-processing."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InvalidArgumentError, InvalidShapeError
from .layers import INPUT_SHAPE, OUTPUT_SIDE, OUTPUT_SIZE
from .postproc import DEFAULT_SIGMA, postprocess
from .tensor import DTYPE
from .training import TrainConfig, predict_raw, train


def _check_images(X, means=None):
    """Validate an N x 3 x 96 x 96 stack; uint8 input is scaled to [0, 1]."""
    X = check_array(X, allow_nd=True, dtype=None, ensure_2d=False)
    if X.ndim != 4 or X.shape[1:] != INPUT_SHAPE:
        raise InvalidShapeError(f"expected N x 3 x 96 x 96 images, got {X.shape}")
    X = X.astype(DTYPE) / 255.0 if X.dtype == np.uint8 else X.astype(DTYPE, copy=False)
    if means is not None:
        X = X - np.asarray(means, dtype=DTYPE).reshape(1, 3, 1, 1)
    return X


class SaliencyNetRegressor(RegressorMixin, BaseEstimator):
    """Five-layer convolutional saliency regressor.

    ``fit(X, y)`` takes RGB images ``X`` (N x 3 x 96 x 96, uint8 or floats in
    [0, 1]) and target maps ``y`` (N x 48 x 48 or N x 2304). Per-channel
    means of ``X`` are learned and subtracted before the network sees it.
    ``predict`` returns raw N x 2304 outputs.
    """

    def __init__(self, lr_start=0.03, lr_end=0.0001, epochs=1000, batch_size=32, momentum=0.9,
                 maxnorm_cap=2.0, seed=0, val_fraction=0.2, lr_decay="geometric", augment=True,
                 maxout_weighted=True, weight_std=0.01, bias_init=0.1):
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.maxnorm_cap = maxnorm_cap
        self.seed = seed
        self.val_fraction = val_fraction
        self.lr_decay = lr_decay
        self.augment = augment
        self.maxout_weighted = maxout_weighted
        self.weight_std = weight_std
        self.bias_init = bias_init

    def config(self):
        return TrainConfig(**self.get_params())

    def fit(self, X, y, callback=None):
        cfg = self.config()
        X = _check_images(X)
        y = np.asarray(y, dtype=DTYPE)
        if len(y) != len(X):
            raise InvalidArgumentError(f"{len(X)} images but {len(y)} targets")
        self.channel_means_ = X.mean(axis=(0, 2, 3))
        result = train(X - self.channel_means_.reshape(1, 3, 1, 1), y, cfg, callback)
        self.network_ = result.network
        self.history_ = result.history
        self.n_features_in_ = int(np.prod(INPUT_SHAPE))
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        return predict_raw(_check_images(X, self.channel_means_), self.network_)

    def predict_maps(self, X):
        return self.predict(X).reshape(-1, OUTPUT_SIDE, OUTPUT_SIDE)

    def score(self, X, y, sample_weight=None):
        """Negative mean squared error (higher is better)."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=DTYPE).reshape(len(pred), -1)
        return -float(np.mean((pred - y) ** 2))

    def save(self, path):
        from .io import save_checkpoint

        check_is_fitted(self, "network_")
        save_checkpoint(self.network_, path, self.config().to_dict(), self.channel_means_)

    @classmethod
    def from_checkpoint(cls, path):
        from .io import load_checkpoint

        ckpt = load_checkpoint(path)
        known = cls().get_params()
        est = cls(**{k: v for k, v in ckpt.config.items() if k in known})
        est.network_ = ckpt.network
        est.channel_means_ = ckpt.channel_means
        est.history_ = []
        est.n_features_in_ = int(np.prod(INPUT_SHAPE))
        return est


class SaliencyPostprocessor(TransformerMixin, BaseEstimator):
    """Raw N x 2304 outputs -> N x H x W maps (upsample, blur, clamp)."""

    def __init__(self, height=OUTPUT_SIDE, width=OUTPUT_SIDE, sigma=DEFAULT_SIGMA, normalize=False):
        self.height = height
        self.width = width
        self.sigma = sigma
        self.normalize = normalize

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != OUTPUT_SIZE:
            raise InvalidShapeError(f"expected N x {OUTPUT_SIZE} raw outputs, got {X.shape}")
        return np.stack([postprocess(v, self.height, self.width, self.sigma, self.normalize) for v in X])
