import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from seqsal.fixdata import FixationMap
from seqsal.salmap import (
    NormalizationError,
    antonio_sigma,
    blur_fixations,
    center_prior,
    normalize_range,
    normalize_sum,
    quantize,
    read_map,
    write_map,
    zscore,
)


def _fft_lowpass(grid, fc):
    """Apply the transfer function exp(-f^2 / 2 s_f^2), gain 1/2 at fc cycles/image, in the Fourier domain."""
    h, w = grid.shape
    n = max(h, w)
    s_f = fc / math.sqrt(2.0 * math.log(2.0))  # cycles per image
    # zero padding keeps circular wrap-around away from the bump
    P = 2 * n
    big = np.zeros((P, P))
    big[:h, :w] = grid
    fy = np.fft.fftfreq(P)[:, None] * n  # cycles per image
    fx = np.fft.fftfreq(P)[None, :] * n
    H = np.exp(-(fx**2 + fy**2) / (2.0 * s_f**2))
    return np.real(np.fft.ifft2(np.fft.fft2(big) * H))[:h, :w]


def test_sigma_at_640_wide():
    s = antonio_sigma((480, 640), 8.0)
    assert s == pytest.approx(640 * math.sqrt(2 * math.log(2)) / (16 * math.pi))
    assert 14.9 < s < 15.1


def test_blur_matches_fourier_oracle():
    fix = np.zeros((480, 640), bool)
    fix[240, 320] = True
    fix[200, 150] = True
    ours = blur_fixations(fix, 8.0)
    oracle = _fft_lowpass(fix.astype(float), 8.0)
    oracle /= oracle.max()
    assert np.abs(ours - oracle).max() < 1e-3


def test_transfer_gain_half_at_cutoff():
    # a 1-D cosine at fc cycles/image comes out with half its amplitude
    n, fc = 512, 8
    x = np.arange(n)
    wave = np.cos(2 * np.pi * fc * x / n)[None, :].repeat(8, axis=0)
    s = antonio_sigma((8, n), fc)
    from scipy.ndimage import gaussian_filter1d
    out = gaussian_filter1d(wave, s, axis=1, mode="wrap", truncate=8)
    assert np.abs(out).max() == pytest.approx(0.5, abs=1e-6)


def test_single_centred_fixation_symmetric():
    fix = FixationMap.from_points([(20, 20)], (41, 41))
    m = blur_fixations(fix, 4.0)
    assert m[20, 20] == 1.0 and m.argmax() == 20 * 41 + 20
    np.testing.assert_allclose(m, m.T, atol=1e-15)
    np.testing.assert_allclose(m, m[::-1], atol=1e-15)
    np.testing.assert_allclose(m, m[:, ::-1], atol=1e-15)


def test_two_bumps_equal_and_order_free():
    a = blur_fixations(FixationMap.from_points([(30, 40), (170, 40)], (80, 200)), 8.0)
    b = blur_fixations(FixationMap.from_points([(170, 40), (30, 40)], (80, 200)), 8.0)
    np.testing.assert_array_equal(a, b)
    assert a[40, 30] == pytest.approx(a[40, 170], abs=1e-12)


def test_empty_map_blurs_to_zero():
    assert not blur_fixations(FixationMap.empty((10, 12))).any()


def test_center_prior():
    p = center_prior((48, 64))
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.unravel_index(p.argmax(), p.shape) in {(23, 31), (23, 32), (24, 31), (24, 32)}


def test_normalize_uniform():
    np.testing.assert_allclose(normalize_sum(np.full((4, 5), 3.0)), 1 / 20)


def test_degenerate_maps_raise():
    with pytest.raises(NormalizationError):
        zscore(np.ones((3, 3)))
    with pytest.raises(NormalizationError):
        normalize_range(np.ones((3, 3)))
    with pytest.raises(NormalizationError):
        normalize_sum(np.zeros((3, 3)))


maps = arrays(np.float64, (5, 6), elements=st.floats(0, 1e3, allow_nan=False))


@given(maps)
def test_normalize_sum_sums_to_one(m):
    if m.sum() == 0:
        return
    assert abs(normalize_sum(m).sum() - 1.0) <= 1e-12


@given(maps)
def test_range_and_zscore(m):
    if m.max() == m.min() or m.std() < 1e-9:
        return
    r = normalize_range(m)
    assert r.min() == 0.0 and r.max() == pytest.approx(1.0)
    z = zscore(m)
    assert abs(z.mean()) < 1e-9 and z.std() == pytest.approx(1.0)


def test_quantize():
    np.testing.assert_array_equal(quantize([0, 0.5, 1, 2, -1], 8), [0, 128, 255, 255, 0])


@pytest.mark.parametrize("ext, tol", [(".png", 0.5 / 65535 + 1e-12), (".pgm", 0.5 / 255 + 1e-12)])
def test_map_files_round_trip(tmp_path, ext, tol):
    m = np.random.default_rng(0).random((7, 9))
    path = tmp_path / f"m{ext}"
    write_map(m, path)
    back = read_map(path)
    assert back.shape == m.shape
    assert np.abs(back - m).max() <= tol


def test_png_is_deterministic(tmp_path):
    m = blur_fixations(FixationMap.from_points([(3, 3)], (16, 16)), 4)
    write_map(m, tmp_path / "a.png")
    write_map(m, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_unknown_extension(tmp_path):
    with pytest.raises(ValueError):
        write_map(np.zeros((2, 2)), tmp_path / "m.jpg")
