import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from salnet.errors import InvalidArgumentError, InvalidShapeError
from salnet.estimator import SaliencyNetRegressor, SaliencyPostprocessor
from salnet.training import TrainConfig


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 256, (5, 3, 96, 96), dtype=np.uint8)
    y = rng.random((5, 48, 48))
    return X, y


@pytest.fixture(scope="module")
def fitted(data):
    X, y = data
    return SaliencyNetRegressor(epochs=1, batch_size=8, seed=2).fit(X, y)


def test_params_mirror_train_config():
    est = SaliencyNetRegressor()
    assert TrainConfig(**est.get_params()) == TrainConfig()
    est.set_params(momentum=0.5, epochs=3)
    assert est.config().momentum == 0.5
    assert clone(est).get_params() == est.get_params()


def test_invalid_params_raise_on_fit(data):
    with pytest.raises(InvalidArgumentError):
        SaliencyNetRegressor(momentum=1.5).fit(*data)


def test_unfitted_predict():
    with pytest.raises(NotFittedError):
        SaliencyNetRegressor().predict(np.zeros((1, 3, 96, 96)))


def test_fit_predict(fitted, data):
    X, y = data
    means = X.astype(float).mean(axis=(0, 2, 3)) / 255
    np.testing.assert_allclose(fitted.channel_means_, means, rtol=1e-12)
    assert len(fitted.history_) == 1
    out = fitted.predict(X)
    assert out.shape == (5, 2304)
    assert fitted.predict_maps(X[:2]).shape == (2, 48, 48)
    # uint8 and [0, 1] floats are the same input
    np.testing.assert_array_equal(fitted.predict(X[:1].astype(float) / 255), fitted.predict(X[:1]))
    assert fitted.score(X, y) <= 0


def test_wrong_image_shape(fitted):
    with pytest.raises(InvalidShapeError):
        fitted.predict(np.zeros((1, 3, 64, 64)))


def test_save_and_reload(tmp_path, fitted, data):
    X, _ = data
    fitted.save(tmp_path / "m.ckpt")
    again = SaliencyNetRegressor.from_checkpoint(tmp_path / "m.ckpt")
    assert again.get_params() == fitted.get_params()
    np.testing.assert_array_equal(again.channel_means_, fitted.channel_means_)
    np.testing.assert_array_equal(again.predict(X[:2]), fitted.predict(X[:2]))


def test_postprocessor():
    rng = np.random.default_rng(1)
    raw = rng.standard_normal((3, 2304))
    maps = SaliencyPostprocessor(height=30, width=40).fit_transform(raw)
    assert maps.shape == (3, 30, 40)
    assert maps.min() >= 0 and maps.max() <= 1
    with pytest.raises(InvalidShapeError):
        SaliencyPostprocessor().transform(np.zeros((1, 100)))
