import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from salnet.errors import InvalidArgumentError, InvalidShapeError
from salnet.tensor import Shape4, as_shape4, from_hwc, hflip, init_gaussian, reshape, to_hwc

small_tensors = arrays(
    np.float64,
    st.tuples(*[st.integers(1, 4)] * 4),
    elements=st.floats(-1e6, 1e6, allow_nan=False),
)


def test_zero_stddev_gives_exact_zero():
    t = init_gaussian((1, 1, 2, 2), mean=0.0, stddev=0.0, seed=7)
    assert t.shape == (1, 1, 2, 2)
    assert np.all(t == 0.0)


def test_zero_stddev_gives_exact_bias_value():
    t = init_gaussian((2, 3, 4, 4), mean=0.1, stddev=0.0, seed=1)
    assert np.all(t == 0.1)


def test_gaussian_statistics():
    t = init_gaussian((1, 1, 64, 64), mean=0.0, stddev=0.01, seed=42)
    # standard error of the mean is 0.01 / 64; allow four of them
    assert abs(t.mean()) <= 0.01 * 4 / 64
    assert abs(t.std() - 0.01) <= 0.15 * 0.01


def test_init_is_bit_reproducible():
    a = init_gaussian((2, 3, 5, 5), 0.0, 0.01, seed=123)
    b = init_gaussian((2, 3, 5, 5), 0.0, 0.01, seed=123)
    assert a.tobytes() == b.tobytes()
    c = init_gaussian((2, 3, 5, 5), 0.0, 0.01, seed=124)
    assert not np.array_equal(a, c)


def test_init_accepts_full_64bit_seed():
    a = init_gaussian((1, 1, 2, 2), 0.0, 1.0, seed=2**64 - 1)
    assert np.isfinite(a).all()


@pytest.mark.parametrize("shape", [(0, 1, 2, 2), (1, 1, 0, 3), (1, 2, 3), (1, 1, 1, -1)])
def test_init_rejects_bad_shapes(shape):
    with pytest.raises(InvalidShapeError):
        init_gaussian(shape, 0.0, 0.01, 0)


def test_init_rejects_negative_stddev():
    with pytest.raises(InvalidArgumentError):
        init_gaussian((1, 1, 1, 1), 0.0, -1.0, 0)


def test_shape4():
    s = as_shape4([1, 3, 96, 96])
    assert isinstance(s, Shape4)
    assert s.size == 3 * 96 * 96


def test_hflip_examples():
    assert hflip(np.array([[[[1.0, 2.0, 3.0]]]])).tolist() == [[[[3.0, 2.0, 1.0]]]]
    assert hflip(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])).tolist() == [[[[2.0, 1.0], [4.0, 3.0]]]]


@given(small_tensors)
def test_hflip_involution_and_multiset(t):
    f = hflip(t)
    assert f.shape == t.shape
    assert np.array_equal(hflip(f), t)
    assert np.array_equal(np.sort(f, axis=None), np.sort(t, axis=None))


def test_hflip_column_mapping():
    t = np.arange(2 * 3 * 4 * 5, dtype=float).reshape(2, 3, 4, 5)
    f = hflip(t)
    for w in range(5):
        assert np.array_equal(f[..., w], t[..., 4 - w])


def test_reshape_examples():
    v = np.arange(2304, dtype=float).reshape(1, 1, 1, 2304)
    m = reshape(v, (1, 1, 48, 48))
    assert m[0, 0, 1, 0] == 48.0
    assert np.array_equal(m.ravel(), v.ravel())
    t = np.arange(12, dtype=float).reshape(1, 3, 2, 2)
    assert reshape(t, (1, 1, 1, 12)).ravel().tolist() == list(range(12))
    with pytest.raises(InvalidShapeError):
        reshape(np.zeros((1, 1, 1, 6)), (1, 1, 2, 2))


@settings(max_examples=50)
@given(small_tensors)
def test_reshape_preserves_flat_sequence(t):
    r = reshape(t, (1, 1, 1, t.size))
    assert np.array_equal(r.ravel(), t.ravel())


def test_hwc_roundtrip():
    img = np.random.default_rng(0).random((5, 7, 3))
    t = from_hwc(img)
    assert t.shape == (1, 3, 5, 7)
    assert t[0, 2, 4, 6] == img[4, 6, 2]
    assert np.array_equal(to_hwc(t)[0], img)
