import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsgcc_tde.fsgcc import (FsGccConfig, auto_band_count, band_average, band_average_tdoa,
                             crop_lags, fs_gcc, spectral_window)
from fsgcc_tde.gcc import estimate_tdoa_gcc, gcc_phat
from oracles import naive_fsgcc_row


def _spectra(n, seed, delay=None):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x2 = np.roll(x1, -delay) if delay is not None else rng.standard_normal(n)
    return np.fft.fft(x1), np.fft.fft(x2)


def test_rect_window_of_four_bins():
    phi = spectral_window(FsGccConfig(dft_length=64, window_support=4, hop=1, band_count=1,
                                      window_shape="rect"))
    assert np.flatnonzero(phi).tolist() == [1, 2, 62, 63]
    assert np.all(phi[[1, 2, 62, 63]] == 1.0)


def test_default_hann_window_support_and_symmetry():
    phi = spectral_window(FsGccConfig())
    n = len(phi)
    assert np.count_nonzero(phi) == 128
    k = np.arange(1, n)
    assert np.array_equal(phi[k], phi[n - k])
    assert phi.max() == 1.0


def test_bands_cover_the_spectrum():
    cfg = FsGccConfig()
    phi = spectral_window(cfg)
    n = cfg.dft_length
    total = np.zeros(n)
    for band in range(cfg.band_count):
        total += np.roll(phi, band * cfg.hop)
    top = (cfg.band_count - 1) * cfg.hop + cfg.window_support // 2
    assert np.all(total[1:top + 1] > 0)


def test_config_validation():
    with pytest.raises(ValueError):
        FsGccConfig(dft_length=64, window_support=65, hop=1, band_count=1)
    with pytest.raises(ValueError):
        FsGccConfig(dft_length=100)
    with pytest.raises(ValueError):
        FsGccConfig(dft_length=64, window_support=8, hop=10, band_count=5)
    with pytest.raises(ValueError):
        FsGccConfig(window_shape="kaiser")


def test_default_matrix_shape():
    m = fs_gcc(*_spectra(2048, 0))
    assert m.entries.shape == (32, 2048)
    assert np.all(np.isfinite(m.entries))


@pytest.mark.parametrize("d", [-40, -3, 0, 11, 57])
def test_anechoic_delay_peaks_in_every_row(d):
    m = fs_gcc(*_spectra(2048, 1, delay=d)).magnitude
    assert np.all(np.argmax(m, axis=1) == 1024 + d)
    assert band_average_tdoa(m, 100) == d


@pytest.mark.parametrize("seed", range(20))
def test_rows_match_naive_sum(seed):
    cfg = FsGccConfig(dft_length=64, window_support=8, hop=5, band_count=7)
    x1, x2 = _spectra(64, seed)
    m = fs_gcc(x1, x2, cfg).entries
    for band in (0, 3, 6):
        ref = naive_fsgcc_row(x1, x2, band, 8, 5)
        assert np.max(np.abs(m[band] - ref)) <= 1e-9


def test_full_band_single_row_equals_gcc():
    rng = np.random.default_rng(5)
    x1, x2 = rng.standard_normal((2, 256))
    cfg = FsGccConfig(dft_length=256, window_support=256, hop=13, band_count=1, window_shape="rect")
    row = fs_gcc(np.fft.fft(x1), np.fft.fft(x2), cfg).entries[0]
    assert np.max(np.abs(row - gcc_phat(x1, x2))) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["hann", "rect"]))
def test_row_magnitude_bounded_by_window_mass(seed, shape):
    cfg = FsGccConfig(dft_length=256, window_support=16, hop=7, band_count=10, window_shape=shape)
    m = fs_gcc(*_spectra(256, seed), cfg).magnitude
    assert np.all(m <= 16 / 256 + 1e-12)


def test_auto_band_count():
    # B_phi = pi*128/2048, M_phi = 2*pi*29/2048: (pi - B_phi + M_phi)/M_phi = 34.3
    assert auto_band_count(2048, 128, 29) == 34
    assert FsGccConfig.auto().band_count == 34
    assert auto_band_count(64, 8, 4) == 8


def test_band_average_examples():
    m = np.zeros((4, 64))
    m[:, 32 + 5] = 1.0
    assert band_average_tdoa(m, 20) == 5
    m = np.zeros((4, 64))
    m[:2, 32 + 5] = 1.0
    m[2:, 32 - 9] = 0.4
    assert band_average_tdoa(m, 20) == 5
    assert np.allclose(band_average(m)[32 + 5], 0.5)


def test_single_row_reduces_to_gcc_estimate():
    row = np.abs(np.random.default_rng(6).standard_normal(128))
    assert band_average_tdoa(row[None, :], 30) == estimate_tdoa_gcc(row, 30)


def test_band_average_rejects_bad_input():
    with pytest.raises(ValueError):
        band_average_tdoa(np.zeros(64), 5)
    with pytest.raises(ValueError):
        band_average_tdoa(np.zeros((3, 64)), 5)


def test_crop_keeps_zero_lag_centred():
    m = np.zeros((2, 2048))
    m[:, 1024 + 7] = 1.0
    c = crop_lags(m, 128)
    assert c.shape == (2, 128)
    assert np.all(np.argmax(c, axis=1) == 64 + 7)
