import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from altmap.preprocess import (
    PatchSource,
    ScalingParams,
    apply_scaling,
    concat_bands,
    extract_patch,
    fit_scaling,
    resample_nearest,
    select_bands,
)
from altmap.raster_io import RasterStack

from .conftest import random_stack


def _stack(values, **kw):
    return RasterStack(np.asarray(values, dtype=np.float32), **kw)


def test_select_identity(rng):
    s = random_stack(rng, bands=7)
    assert select_bands(s, range(7)) == s


def test_select_swaps_bands(rng):
    s = random_stack(rng, bands=2)
    out = select_bands(s, [1, 0])
    assert np.array_equal(out.data[0], s.data[1]) and np.array_equal(out.data[1], s.data[0])


def test_select_nine_aster_bands(rng):
    s = random_stack(rng, bands=9)
    assert select_bands(s, list(range(9))).bands == 9


def test_select_errors(rng):
    s = random_stack(rng, bands=3)
    with pytest.raises(IndexError):
        select_bands(s, [0, 3])
    with pytest.raises(ValueError, match="duplicate"):
        select_bands(s, [1, 1])


def test_select_does_not_touch_source(rng):
    s = random_stack(rng, bands=3)
    before = s.data.copy()
    out = select_bands(s, [2])
    assert np.array_equal(s.data, before) and out.data.base is not s.data


def test_fit_minmax_two_values():
    p = fit_scaling(_stack([[[2.0, 4.0]]]))
    assert (p.a, p.b) == ((2.0,), (4.0,))


def test_constant_band_maps_to_zero():
    s = _stack([[[5.0, 5.0]]])
    p = fit_scaling(s)
    assert (p.a, p.b) == ((5.0,), (5.0,))
    assert apply_scaling(s, p).data.tolist() == [[[0.0, 0.0]]]


def test_zscore_hand_values():
    s = _stack([[[1.0, 2.0, 3.0, 4.0]]])
    p = fit_scaling(s, "zscore")
    assert p.a[0] == 2.5
    assert p.b[0] == pytest.approx(np.sqrt(1.25))
    assert p.b[0] == pytest.approx(1.1180, abs=1e-4)
    out = apply_scaling(s, p).data.ravel()
    np.testing.assert_allclose(out, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4)


def test_apply_minmax_and_clamp():
    p = ScalingParams("minmax01", [2.0], [4.0])
    assert apply_scaling(_stack([[[2.0, 4.0]]]), p).data.ravel().tolist() == [0.0, 1.0]
    assert apply_scaling(_stack([[[5.0, 1.0]]]), p).data.ravel().tolist() == [1.0, 0.0]


def test_zero_std_band_maps_to_zero():
    p = ScalingParams("zscore", [3.0], [0.0])
    assert apply_scaling(_stack([[[3.0, 7.0]]]), p).data.ravel().tolist() == [0.0, 0.0]


def test_scaling_band_mismatch(rng):
    p = fit_scaling(random_stack(rng, bands=3))
    with pytest.raises(ValueError, match="bands"):
        apply_scaling(random_stack(rng, bands=2), p)


def test_all_nodata_band_rejected():
    s = RasterStack(np.full((1, 2, 2), -1.0, np.float32), nodata=-1.0)
    with pytest.raises(ValueError, match="nodata"):
        fit_scaling(s)


def test_nodata_excluded_and_propagated():
    data = np.array([[[0.0, 10.0], [-9999.0, 20.0]]], np.float32)
    s = RasterStack(data, nodata=-9999.0)
    p = fit_scaling(s)
    assert (p.a, p.b) == ((0.0,), (20.0,))
    out = apply_scaling(s, p)
    assert out.data.tolist() == [[[0.0, 0.5], [-9999.0, 1.0]]]
    assert out.nodata == -9999.0


def test_scaling_json_roundtrip(tmp_path, rng):
    p = fit_scaling(random_stack(rng, bands=4), "zscore")
    p.save(tmp_path / "s.json")
    assert ScalingParams.load(tmp_path / "s.json") == p


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_minmax_fit_then_apply_spans_unit_interval(seed):
    s = random_stack(np.random.default_rng(seed), bands=3, height=4, width=3)
    out = apply_scaling(s, fit_scaling(s)).data.reshape(3, -1)
    assert (out.min(axis=1) == 0).all() and (out.max(axis=1) == 1).all()


def test_resample_identity(rng):
    s = random_stack(rng)
    assert resample_nearest(s, 1) == s


def test_resample_single_pixel():
    out = resample_nearest(_stack([[[7.0]]], transform=(0, 30, 0, 0, 0, -30)), 2)
    assert out.data.tolist() == [[[7.0, 7.0], [7.0, 7.0]]]
    assert out.transform == (0.0, 15.0, 0.0, 0.0, 0.0, -15.0)


def test_resample_index_arithmetic(rng):
    out = resample_nearest(_stack([[[1.0, 2.0]]]), 2)
    assert out.data[0, 0].tolist() == [1.0, 1.0, 2.0, 2.0]
    s = random_stack(rng, bands=2, height=3, width=5)
    out = resample_nearest(s, 3)
    r, c = np.indices((9, 15))
    assert np.array_equal(out.data, s.data[:, r // 3, c // 3])


def test_resample_invalid_factor(rng):
    with pytest.raises(ValueError):
        resample_nearest(random_stack(rng), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_resample_introduces_no_new_values(seed, factor):
    s = random_stack(np.random.default_rng(seed), bands=2, height=3, width=3)
    out = resample_nearest(s, factor)
    assert set(np.unique(out.data)) <= set(np.unique(s.data))


def test_concat_bands(rng):
    a, b = random_stack(rng, bands=3), random_stack(rng, bands=6)
    out = concat_bands(a, b)
    assert out.bands == 9 and np.array_equal(out.data[3:], b.data)
    with pytest.raises(ValueError):
        concat_bands(a, random_stack(rng, bands=1, height=2))


# -- patches --------------------------------------------------------------------


def test_patch_size_one_is_pixel(rng):
    s = random_stack(rng, bands=4)
    p = extract_patch(s, 0, 0, 1)
    assert p.values.shape == (1, 1, 4)
    assert np.array_equal(p.values[0, 0], s.data[:, 0, 0])


def test_patch_corner_reflect101():
    s = _stack(np.arange(4, dtype=np.float32).reshape(1, 2, 2))  # [[0,1],[2,3]]
    p = extract_patch(s, 0, 0, 3).values[..., 0]
    # reflect-101: index -1 maps to 1, so the top-left cell is pixel (1, 1)
    assert p.tolist() == [[3, 2, 3], [1, 0, 1], [3, 2, 3]]


def test_patch_interior_exact(rng):
    s = random_stack(rng, bands=2, height=5, width=5)
    p = extract_patch(s, 2, 3, 3)
    expected = np.moveaxis(s.data[:, 2:5, 1:4], 0, -1)
    assert np.array_equal(p.values, expected)
    assert p.center == (2, 3)


def test_patch_even_size_rejected(rng):
    with pytest.raises(ValueError, match="odd"):
        extract_patch(random_stack(rng), 0, 0, 4)


def test_patch_out_of_bounds(rng):
    with pytest.raises(IndexError):
        PatchSource(random_stack(rng), 3).gather([4], [0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3, 5, 7]))
def test_patch_centres_stitch_to_raster(seed, size):
    s = random_stack(np.random.default_rng(seed), bands=2, height=4, width=6)
    rows, cols = np.indices((4, 6)).reshape(2, -1)
    patches = PatchSource(s, size).gather(cols, rows)
    centres = patches[:, size // 2, size // 2, :]
    assert np.array_equal(centres.T.reshape(2, 4, 6), s.data)


def test_patch_reflect_matches_index_oracle(rng):
    s = random_stack(rng, bands=1, height=6, width=7)

    def reflect(i, n):
        while i < 0 or i >= n:
            i = -i if i < 0 else 2 * (n - 1) - i
        return i

    src = PatchSource(s, 7)
    for r, c in [(0, 0), (5, 6), (2, 0), (0, 3)]:
        got = src.gather([c], [r])[0, ..., 0]
        want = [[s.data[0, reflect(r + dr, 6), reflect(c + dc, 7)] for dc in range(-3, 4)] for dr in range(-3, 4)]
        assert np.array_equal(got, np.array(want))
