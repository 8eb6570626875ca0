import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from updscope.raster import (
    ActivationMap,
    FeatureGrid,
    ImageRaster,
    RasterError,
    bilinear_resize,
    load_image,
    minmax_normalize,
    save_activation_png,
    save_image,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def naive_resize(src, th, tw):
    """Per-pixel loop with half-pixel centres and edge clamping."""
    h, w = src.shape
    out = np.empty((th, tw))
    for i in range(th):
        y = min(max((i + 0.5) * h / th - 0.5, 0.0), h - 1)
        y0 = int(np.floor(y))
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(tw):
            x = min(max((j + 0.5) * w / tw - 0.5, 0.0), w - 1)
            x0 = int(np.floor(x))
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * src[y0, x0] + fx * src[y0, x1])
                         + fy * ((1 - fx) * src[y1, x0] + fx * src[y1, x1]))
    return out


class TestBilinearResize:
    def test_constant_map(self):
        out = bilinear_resize(np.full((3, 5), 0.5), 7, 11)
        np.testing.assert_array_equal(out, 0.5)

    def test_single_pixel_broadcast(self):
        np.testing.assert_allclose(bilinear_resize(np.array([[0.3]]), 4, 4), np.full((4, 4), 0.3))

    def test_half_pixel_centre_column(self):
        out = bilinear_resize(np.array([[0.0, 1.0], [0.0, 1.0]]), 2, 3)
        np.testing.assert_allclose(out[:, 1], 0.5)
        np.testing.assert_allclose(out[:, 0], 0.0)
        np.testing.assert_allclose(out[:, 2], 1.0)

    def test_identity_size(self, rng):
        x = rng.random((6, 9))
        np.testing.assert_array_equal(bilinear_resize(x, 6, 9), x)

    def test_matches_loop_oracle(self, rng):
        for _ in range(20):
            h, w, th, tw = rng.integers(1, 9, size=4)
            x = rng.normal(size=(h, w))
            np.testing.assert_allclose(bilinear_resize(x, th, tw), naive_resize(x, th, tw), atol=1e-12)

    def test_stack_matches_per_channel(self, rng):
        x = rng.normal(size=(4, 5, 3))
        out = bilinear_resize(x, 9, 7)
        for k in range(3):
            np.testing.assert_allclose(out[:, :, k], bilinear_resize(x[:, :, k], 9, 7), atol=1e-15)

    @pytest.mark.parametrize("shape", [(0, 3), (3,), (2, 2, 2, 2)])
    def test_bad_source(self, shape):
        with pytest.raises(RasterError):
            bilinear_resize(np.zeros(shape), 2, 2)

    def test_bad_target(self):
        with pytest.raises(RasterError):
            bilinear_resize(np.zeros((2, 2)), 0, 3)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
           st.integers(1, 12), st.integers(1, 12))
    def test_range_never_expands(self, src, th, tw):
        out = bilinear_resize(src, th, tw)
        span = 1e-9 * max(1.0, np.abs(src).max())
        assert out.min() >= src.min() - span
        assert out.max() <= src.max() + span

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
           st.floats(-3, 3))
    def test_linear(self, a, b, alpha):
        lhs = bilinear_resize(a + alpha * b, 5, 7)
        rhs = bilinear_resize(a, 5, 7) + alpha * bilinear_resize(b, 5, 7)
        np.testing.assert_allclose(lhs, rhs, atol=1e-6 * (1 + np.abs(a).max() + np.abs(b).max()))


class TestMinmaxNormalize:
    def test_hand_values(self):
        np.testing.assert_allclose(minmax_normalize(np.array([2.0, 4.0, 6.0])), [0.0, 0.5, 1.0])

    def test_constant_is_zero(self):
        np.testing.assert_array_equal(minmax_normalize(np.full((3, 3), 7.0)), 0.0)

    def test_already_normalized(self):
        np.testing.assert_array_equal(minmax_normalize(np.array([0.0, 1.0])), [0.0, 1.0])

    def test_rejects_nan(self):
        with pytest.raises(RasterError):
            minmax_normalize(np.array([0.0, np.nan]))

    @settings(max_examples=80, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
    def test_unit_range(self, x):
        y = minmax_normalize(x)
        assert y.min() >= 0.0 and y.max() <= 1.0
        if x.max() > x.min():
            assert y.min() == 0.0 and y.max() == 1.0
            # monotone: sorting by x leaves y non-decreasing
            order = np.argsort(x, axis=None, kind="stable")
            assert np.all(np.diff(y.ravel()[order]) >= 0.0)


class TestTypes:
    def test_image_range_checked(self):
        with pytest.raises(RasterError):
            ImageRaster(np.full((2, 2, 3), 1.5))

    def test_image_shape_checked(self):
        with pytest.raises(RasterError):
            ImageRaster(np.zeros((2, 2)))

    def test_image_is_read_only(self):
        img = ImageRaster(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_divisibility(self):
        ImageRaster(np.zeros((64, 32, 3))).check_divisible(4)
        with pytest.raises(RasterError, match="divisible"):
            ImageRaster(np.zeros((60, 32, 3))).check_divisible(4)

    def test_activation_bounds(self):
        with pytest.raises(RasterError):
            ActivationMap(np.array([[1.2]]))
        assert ActivationMap(np.zeros((3, 4))).height == 3

    def test_feature_grid(self):
        g = FeatureGrid(np.arange(24.0).reshape(2, 3, 4))
        assert (g.rows, g.cols, g.dim) == (2, 3, 4)
        np.testing.assert_array_equal(g.channel(1), [[1, 5, 9], [13, 17, 21]])


class TestImageIO:
    def test_round_trip(self, tmp_path, rng):
        pix = rng.integers(0, 256, size=(8, 6, 3))
        save_image(pix / 255.0, tmp_path / "x.png")
        np.testing.assert_allclose(load_image(tmp_path / "x.png").data, pix / 255.0)

    def test_activation_png(self, tmp_path):
        from PIL import Image

        save_activation_png(ActivationMap(np.array([[0.0, 0.5, 1.0]])), tmp_path / "a.png")
        with Image.open(tmp_path / "a.png") as im:
            np.testing.assert_array_equal(np.asarray(im), [[0, 128, 255]])
