import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bgbench import imaging
from bgbench.errors import DegenerateInputError, DimensionMismatchError


def _triple(rng, h=6, w=5):
    return rng.random((h, w, 3)), rng.integers(0, 2, (h, w)).astype(bool), rng.random((h, w, 3))


def test_composite_binary_mask_picks_pixels(rng):
    img, mask, bg = _triple(rng)
    out = imaging.composite(img, mask, bg)
    np.testing.assert_array_equal(out[mask], img[mask])
    np.testing.assert_array_equal(out[~mask], bg[~mask])


def test_composite_full_and_empty_masks(rng):
    img, _, bg = _triple(rng)
    np.testing.assert_array_equal(imaging.composite(img, np.ones((6, 5)), bg), img)
    np.testing.assert_array_equal(imaging.composite(img, np.zeros((6, 5)), bg), bg)


def test_composite_soft_mask_blends():
    img = np.full((1, 1, 3), 1.0)
    bg = np.zeros((1, 1, 3))
    np.testing.assert_allclose(imaging.composite(img, [[0.25]], bg), 0.25)


def test_composite_does_not_modify_inputs(rng):
    img, mask, bg = _triple(rng)
    copies = img.copy(), mask.copy(), bg.copy()
    imaging.composite(img, mask, bg)
    for a, b in zip((img, mask, bg), copies):
        np.testing.assert_array_equal(a, b)


def test_composite_mismatch_names_axis(rng):
    img, mask, _ = _triple(rng)
    with pytest.raises(DimensionMismatchError, match="width"):
        imaging.composite(img, mask, rng.random((6, 7, 3)))
    with pytest.raises(DimensionMismatchError, match="height"):
        imaging.composite(img, np.ones((4, 5)), img)


def test_composite_rejects_out_of_range(rng):
    img, mask, bg = _triple(rng)
    with pytest.raises(ValueError):
        imaging.composite(img * 2.0 + 0.1, mask, bg)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_composite_with_itself_is_identity(h, w, seed):
    r = np.random.default_rng(seed)
    img = r.random((h, w, 3))
    mask = r.random((h, w))
    np.testing.assert_array_equal(imaging.composite(img, mask, img), img)


def test_fit_background_same_size_is_copy(rng):
    bg = rng.random((8, 9, 3))
    out = imaging.fit_background(bg, 8, 9)
    np.testing.assert_array_equal(out, bg)
    assert out is not bg


def test_fit_background_crop_only_when_scale_one(rng):
    bg = rng.random((10, 9, 3))
    out = imaging.fit_background(bg, 6, 9)
    np.testing.assert_array_equal(out, bg[2:8])


def test_fit_background_constant_stays_constant():
    bg = np.full((5, 7, 3), 0.3)
    out = imaging.fit_background(bg, 16, 12)
    assert out.shape == (16, 12, 3)
    np.testing.assert_allclose(out, 0.3, atol=1e-15)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 40), st.integers(1, 40))
def test_fit_background_shape(h, w, th, tw):
    bg = np.random.default_rng(h * 41 + w).random((h, w, 3))
    out = imaging.fit_background(bg, th, tw)
    assert out.shape == (th, tw, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_fit_background_upscale_preserves_linear_ramp():
    # a horizontal ramp stays monotone after uniform upscaling
    ramp = np.linspace(0, 1, 6)[None, :, None] * np.ones((6, 6, 3))
    out = imaging.fit_background(ramp, 12, 12)
    assert np.all(np.diff(out[5, :, 0]) >= 0)


def test_binarize_threshold_inclusive():
    m = np.array([[0.49, 0.5, 0.51]])
    np.testing.assert_array_equal(imaging.binarize(m), [[False, True, True]])


def test_binarize_bad_threshold():
    with pytest.raises(ValueError):
        imaging.binarize(np.zeros((2, 2)), 1.5)


def test_overlap_examples():
    gt = np.zeros((4, 4), bool)
    gt[:2] = True
    assert imaging.overlap(gt, gt) == 1.0
    assert imaging.overlap(np.ones((4, 4), bool), gt) == 1.0  # false positives ignored
    half = np.zeros((4, 4), bool)
    half[0] = True
    assert imaging.overlap(half, gt) == 0.5
    assert imaging.overlap(~gt, gt) == 0.0


def test_overlap_empty_ground_truth():
    with pytest.raises(DegenerateInputError):
        imaging.overlap(np.ones((2, 2)), np.zeros((2, 2)))


def test_quantize_round_half_up():
    np.testing.assert_array_equal(imaging.quantize([0.0, 0.5 / 255, 1.0, 127.5 / 255]), [0, 1, 255, 128])


def test_png_roundtrip_is_exact_for_8bit_values(tmp_path, rng):
    img = rng.integers(0, 256, (5, 4, 3)) / 255.0
    imaging.save_image(tmp_path / "a.png", img)
    np.testing.assert_array_equal(imaging.load_image(tmp_path / "a.png"), img)
    mask = rng.integers(0, 2, (5, 4)).astype(float)
    imaging.save_mask(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(imaging.load_mask(tmp_path / "m.png"), mask)


def test_png_bytes_reproducible(tmp_path, rng):
    img = rng.random((7, 7, 3))
    imaging.save_image(tmp_path / "a.png", img)
    imaging.save_image(tmp_path / "b.png", img)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
