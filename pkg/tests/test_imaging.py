import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lungsound.imaging import (
    GRAYSCALE,
    ImageConfig,
    apply_colormap,
    load_colormap,
    normalize_minmax,
    resize_bilinear,
    save_colormap,
    to_feature_image,
)

matrices = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                  elements=st.floats(-1e3, 1e3))


def test_normalize_minmax():
    assert np.array_equal(normalize_minmax([[0, 5], [10, 5]]), [[0, 0.5], [1, 0.5]])
    assert np.array_equal(normalize_minmax(np.full((3, 4), 7.0)), np.zeros((3, 4)))


@given(matrices)
def test_normalize_range(m):
    out = normalize_minmax(m)
    if m.max() > m.min():
        assert out.min() == 0 and out.max() == 1
    else:
        assert np.all(out == 0)


def test_resize_hand_values():
    out = resize_bilinear([[0, 1], [2, 3]], 3, 3)
    assert np.array_equal(out, [[0, 0.5, 1], [1, 1.5, 2], [2, 2.5, 3]])


@given(matrices)
def test_resize_identity(m):
    assert np.array_equal(resize_bilinear(m, *m.shape), m)


@given(st.floats(-10, 10), st.integers(1, 9), st.integers(1, 9), st.integers(1, 20), st.integers(1, 20))
def test_resize_constant(c, h, w, oh, ow):
    out = resize_bilinear(np.full((h, w), c), oh, ow)
    assert out.shape == (oh, ow)
    assert np.allclose(out, c, rtol=0, atol=1e-12 * max(1, abs(c)))


@given(matrices, st.integers(1, 30))
def test_resize_commutes_with_transpose(m, n):
    assert np.array_equal(resize_bilinear(m.T, n, n), resize_bilinear(m, n, n).T)


def test_resize_rejects_zero_dims():
    with pytest.raises(ValueError):
        resize_bilinear(np.ones((2, 2)), 0, 3)


def test_colormap_endpoints_and_grayscale():
    table = np.random.default_rng(0).uniform(0, 1, (256, 3))
    out = apply_colormap(np.array([[0.0, 1.0]]), table)
    assert np.array_equal(out[0, 0], table[0]) and np.array_equal(out[0, 1], table[255])
    v = np.linspace(0, 1, 1001).reshape(7, 143)
    g = apply_colormap(v, GRAYSCALE)
    assert g.shape == (7, 143, 3)
    assert np.array_equal(g[..., 0], g[..., 1]) and np.array_equal(g[..., 1], g[..., 2])
    assert np.allclose(g[..., 0], v, atol=1e-12)


def test_colormap_monotone():
    ramp = np.linspace(0, 1, 256) ** 2
    table = np.stack([ramp, 1 - ramp, np.full(256, 0.3)], axis=1)
    v = np.linspace(0, 1, 500)
    out = apply_colormap(v, table)
    assert np.all(np.diff(out[:, 0]) >= 0)
    assert np.all(np.diff(out[:, 1]) <= 0)


def test_colormap_file_round_trip(tmp_path):
    table = np.random.default_rng(1).uniform(0, 1, (256, 3))
    save_colormap(tmp_path / "c.txt", table)
    assert np.array_equal(load_colormap(tmp_path / "c.txt"), table)
    (tmp_path / "bad.txt").write_text("0 0 0\n" * 10)
    with pytest.raises(ValueError):
        load_colormap(tmp_path / "bad.txt")


def test_feature_image_shape_and_determinism():
    m = np.random.default_rng(2).standard_normal((597, 128))
    a = to_feature_image(m)
    assert a.shape == (256, 256, 3)
    assert np.array_equal(a, to_feature_image(m))
    assert a.min() >= 0 and a.max() <= 1
    b = to_feature_image(m, ImageConfig(64, GRAYSCALE))
    assert b.shape == (64, 64, 3)


@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 40)), elements=st.floats(-1e6, 1e6)))
def test_feature_image_range(m):
    img = to_feature_image(m, ImageConfig(32))
    assert img.shape == (32, 32, 3)
    assert img.min() >= 0 and img.max() <= 1


# Dyadic grid values and power-of-two scales keep a*x + b exact in floating
# point, so the invariance can be checked bit-for-bit.
dyadic = arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 20)),
                elements=st.integers(-512, 512).map(lambda v: v / 8))


@given(dyadic, st.integers(-6, 6), st.integers(-64, 64))
def test_feature_image_affine_invariance_exact(m, log2a, b):
    a = 2.0 ** log2a
    cfg = ImageConfig(48, GRAYSCALE)
    assert np.array_equal(to_feature_image(a * m + b, cfg), to_feature_image(m, cfg))


grid = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.integers(-100, 100).map(float))


@given(grid, st.floats(1e-2, 1e2), st.floats(-1e3, 1e3))
def test_feature_image_affine_invariance_general(m, a, b):
    cfg = ImageConfig(16)
    assert np.allclose(to_feature_image(a * m + b, cfg), to_feature_image(m, cfg), atol=1e-9)
