import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from camsim.errors import DimensionError, ParameterError
from camsim.raw import (CFA_ORDERS, ExposureSettings, NoiseLevelFunction, RawImage, cfa_offsets,
                        compute_psnr, compute_ssim, overexposure_mask, pack_bayer, unpack_bayer)

# hand-written layouts: (row, col) of R, Gr, Gb, B inside the 2x2 tile
LAYOUTS = {
    "RGGB": [(0, 0), (0, 1), (1, 0), (1, 1)],
    "BGGR": [(1, 1), (1, 0), (0, 1), (0, 0)],
    "GRBG": [(0, 1), (0, 0), (1, 1), (1, 0)],
    "GBRG": [(1, 0), (1, 1), (0, 0), (0, 1)],
}


@pytest.mark.parametrize("cfa", CFA_ORDERS)
def test_cfa_offsets_match_hand_layout(cfa):
    assert cfa_offsets(cfa) == LAYOUTS[cfa]


def test_unknown_cfa_rejected():
    with pytest.raises(ParameterError):
        cfa_offsets("RGBG")


def test_unpack_normalizes_black_and_white():
    mosaic = np.array([[512, 16383], [8447, 0]], dtype=np.uint16)
    raw = unpack_bayer(mosaic, 512, 16383)
    np.testing.assert_allclose(raw.data[0, 0], [0.0, 1.0, (8447 - 512) / 15871, 0.0])


def test_unpack_rejects_odd_mosaic():
    with pytest.raises(DimensionError):
        unpack_bayer(np.zeros((3, 4)), 0, 100)


@pytest.mark.parametrize("cfa", CFA_ORDERS)
def test_pack_unpack_roundtrip_is_bit_exact(cfa, rng):
    mosaic = rng.integers(64, 4095, (8, 10)).astype(np.uint16)
    raw = unpack_bayer(mosaic, 64, 4095, cfa)
    np.testing.assert_array_equal(pack_bayer(raw), mosaic)


def test_raw_image_validates_range_and_shape():
    with pytest.raises(ParameterError):
        RawImage(np.full((2, 2, 4), 1.5))
    with pytest.raises(DimensionError):
        RawImage(np.zeros((2, 2, 3)))
    with pytest.raises(ParameterError):
        RawImage(np.zeros((2, 2, 4)), black_level=10, white_level=10)


def test_with_data_clips():
    raw = RawImage(np.zeros((2, 2, 4)))
    out = raw.with_data(np.full((2, 2, 4), 2.0))
    assert out.data.max() == 1.0


def test_settings_must_be_positive():
    with pytest.raises(ParameterError):
        ExposureSettings(0.0, 100, 4.0)
    with pytest.raises(ParameterError):
        NoiseLevelFunction(-1e-6, 0.0)


def test_overexposure_mask_threshold():
    x = np.array([0.5, 0.99, 0.991, 1.0])
    np.testing.assert_array_equal(overexposure_mask(x), [False, False, True, True])


def test_psnr_known_value_and_cap():
    a = np.zeros((4, 4, 4))
    assert compute_psnr(a, a) == 100.0
    assert compute_psnr(a, a + 0.1) == pytest.approx(20.0)


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        compute_psnr(np.zeros((4, 4, 4)), np.zeros((4, 5, 4)))


def test_ssim_identity_is_one(rng):
    a = rng.random((16, 16, 4))
    assert compute_ssim(a, a) == pytest.approx(1.0)


def test_ssim_matches_skimage(rng):
    a = rng.random((24, 20, 4))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, win_size=7, data_range=1.0, channel_axis=-1,
                                gaussian_weights=False, use_sample_covariance=False)
    assert compute_ssim(a, b) == pytest.approx(ref, abs=1e-10)


@given(st.integers(0, 2**31 - 1))
def test_ssim_symmetric_and_bounded(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((10, 10, 4)), r.random((10, 10, 4))
    s = compute_ssim(a, b)
    assert s == pytest.approx(compute_ssim(b, a))
    assert -1.0 <= s <= 1.0
