import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lungsound.dataset import AudioClip
from lungsound.dsp import (
    DspConfig,
    FrameConfig,
    MelConfig,
    PowerSpectrogram,
    LogMelSpectrogram,
    dct_matrix,
    featurize_clip,
    frame_signal,
    hann_window,
    hz_to_mel,
    log_mel_spectrogram,
    mel_centers,
    mel_filterbank,
    mel_to_hz,
    mfcc,
    pad_or_truncate,
    power_spectrum,
)

from .oracles import brute_dct2, brute_dft_power


def test_pad_or_truncate():
    sr = 8000
    short = AudioClip(np.ones(3 * sr), sr)
    out = pad_or_truncate(short, 6.0)
    assert len(out) == 48000
    assert np.all(out.samples[24000:] == 0) and np.all(out.samples[:24000] == 1)
    exact = AudioClip(np.ones(6 * sr), sr)
    assert pad_or_truncate(exact, 6.0) is exact
    long = AudioClip(np.arange(10 * sr, dtype=float) / (10 * sr), sr)
    assert np.array_equal(pad_or_truncate(long, 6.0).samples, long.samples[:48000])


@given(st.integers(1, 5000), st.floats(0.01, 1.0))
def test_pad_idempotent(n, target):
    clip = AudioClip(np.ones(n), 1000)
    once = pad_or_truncate(clip, target)
    assert np.array_equal(pad_or_truncate(once, target).samples, once.samples)


def test_hann_closed_form():
    assert np.allclose(hann_window(3), [0, 1, 0], atol=1e-15)
    assert np.allclose(hann_window(5), [0, 0.5, 1, 0.5, 0], atol=1e-15)
    with pytest.raises(ValueError):
        hann_window(1)


@given(st.integers(2, 2000))
def test_hann_symmetric(length):
    w = hann_window(length)
    assert w[0] == 0
    assert np.array_equal(w, w[::-1])


def test_frame_counts():
    sr = 8000
    frames = frame_signal(AudioClip(np.zeros(48000), sr), FrameConfig(25, 10))
    assert frames.shape == (598, 200)
    assert frame_signal(AudioClip(np.zeros(200), sr)).shape == (1, 200)
    with pytest.raises(ValueError):
        frame_signal(AudioClip(np.zeros(199), sr))


def test_frames_of_constant_equal_window():
    frames = frame_signal(AudioClip(np.ones(1000), 8000))
    assert np.array_equal(frames, np.broadcast_to(hann_window(200), frames.shape))


def test_power_spectrum_zero_and_peak():
    assert np.all(power_spectrum(np.zeros(200), 256) == 0)
    n_fft, k0 = 256, 19
    x = np.cos(2 * np.pi * k0 * np.arange(n_fft) / n_fft)
    p = power_spectrum(x, n_fft)
    assert len(p) == n_fft // 2 + 1
    assert int(np.argmax(p)) == k0 == int(np.argmax(brute_dft_power(x, n_fft)))


def test_power_spectrum_rejects_bad_nfft():
    with pytest.raises(ValueError):
        power_spectrum(np.zeros(100), 200)
    with pytest.raises(ValueError):
        power_spectrum(np.zeros(300), 256)


@pytest.mark.parametrize("n", [256, 300, 1000])
def test_power_spectrum_matches_dft_with_zero_padding(n):
    x = np.random.default_rng(n).standard_normal(n)
    n_fft = 1 << (n - 1).bit_length()
    ref = brute_dft_power(x, n_fft)
    assert np.max(np.abs(power_spectrum(x, n_fft) - ref)) < 1e-6 * np.max(ref)


def test_parseval():
    rng = np.random.default_rng(3)
    for n_fft in (256, 1024):
        x = rng.standard_normal(n_fft)
        p = power_spectrum(x, n_fft)
        full = p[0] + p[-1] + 2 * p[1:-1].sum()
        assert abs(np.sum(x ** 2) - full / n_fft) < 1e-6 * np.sum(x ** 2)


def test_mel_scale():
    assert hz_to_mel(0) == 0
    assert hz_to_mel(700) == pytest.approx(2595 * math.log10(2))
    assert hz_to_mel(700) == pytest.approx(781.17, abs=0.01)
    for f in (50, 440, 4000):
        assert mel_to_hz(hz_to_mel(f)) == pytest.approx(f, rel=1e-9)


@pytest.mark.parametrize("sr, n_fft", [(22050, 1024), (8000, 256), (16000, 512)])
def test_filterbank_shape_peaks_and_order(sr, n_fft):
    cfg = MelConfig(n_mels=40)
    fb = mel_filterbank(cfg, n_fft, sr)
    assert fb.shape == (40, n_fft // 2 + 1)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)
    peaks = fb.argmax(axis=1)
    centers = mel_centers(cfg, sr)[1:-1]
    bin_hz = sr / n_fft
    assert np.all(np.abs(peaks * bin_hz - centers) <= bin_hz)
    assert np.all(np.diff(peaks) >= 0)


def test_default_filterbank_is_valid():
    fb = mel_filterbank(MelConfig(), 1024, 22050)
    assert fb.shape == (128, 513) and np.all(fb.max(axis=1) > 0)


def test_filterbank_too_coarse():
    with pytest.raises(ValueError, match="too coarse"):
        mel_filterbank(MelConfig(n_mels=128), 64, 8000)


def test_log_mel_floor_and_scaling():
    cfg = MelConfig(n_mels=40)
    fb = mel_filterbank(cfg, 256, 8000)
    zero = log_mel_spectrogram(PowerSpectrogram(np.zeros((5, 129)), 8000, 256), fb, cfg)
    assert np.all(zero.values == np.log(1e-10))
    x = np.random.default_rng(0).standard_normal(4000) * 0.1
    a = featurize_clip(AudioClip(x, 8000), DspConfig(8000, 0.5, mel=cfg))[0].values
    b = featurize_clip(AudioClip(2 * x, 8000), DspConfig(8000, 0.5, mel=cfg))[0].values
    live = a > np.log(1e-10) + 1
    assert np.allclose((b - a)[live], np.log(4), atol=1e-9)


def test_log_mel_matches_brute_force_and_tone_peaks():
    sr, n_fft = 22050, 1024
    cfg = MelConfig()
    fb = mel_filterbank(cfg, n_fft, sr)
    m = 80
    f0 = mel_centers(cfg, sr)[m + 1]
    t = np.arange(sr) / sr
    clip = AudioClip(0.5 * np.sin(2 * np.pi * f0 * t), sr)
    frames = frame_signal(clip)
    ps = PowerSpectrogram(power_spectrum(frames, n_fft), sr, n_fft)
    lm = log_mel_spectrogram(ps, fb, cfg).values
    # brute-force filter application on one frame
    ref = [math.log(max(sum(fb[j, k] * ps.values[10, k] for k in range(fb.shape[1])), 1e-10))
           for j in range(cfg.n_mels)]
    assert np.allclose(lm[10], ref, atol=1e-9)
    assert np.all(lm.argmax(axis=1) == m)
    top2 = np.sort(lm, axis=1)[:, -2:]
    assert np.all(top2[:, 1] > top2[:, 0])


def test_dct_orthonormal():
    g = dct_matrix(128)
    assert np.max(np.abs(g.T @ g - np.eye(128))) < 1e-9


def test_mfcc_constant_row_and_inverse():
    lm = LogMelSpectrogram(np.full((3, 128), 2.5))
    out = mfcc(lm, 40).values
    assert np.allclose(out[:, 0], 2.5 * math.sqrt(128), atol=1e-9)
    assert np.max(np.abs(out[:, 1:])) < 1e-9
    rows = np.random.default_rng(1).standard_normal((4, 64))
    full = mfcc(LogMelSpectrogram(rows), 64).values
    assert np.max(np.abs(full @ dct_matrix(64) - rows)) < 1e-9


def test_mfcc_matches_brute_dct():
    rows = np.random.default_rng(2).standard_normal((5, 32))
    out = mfcc(LogMelSpectrogram(rows), 13).values
    ref = np.array([brute_dct2(r)[:13] for r in rows])
    assert np.max(np.abs(out - ref)) < 1e-9


def test_mfcc_rejects_too_many_coefficients():
    with pytest.raises(ValueError):
        mfcc(LogMelSpectrogram(np.zeros((2, 10))), 11)


def test_featurize_deterministic_and_padding_idempotent():
    sr = 22050
    x = np.random.default_rng(5).uniform(-0.3, 0.3, 2 * sr)
    cfg = DspConfig()
    a = featurize_clip(AudioClip(x, sr), cfg)
    b = featurize_clip(AudioClip(x, sr), cfg)
    padded = pad_or_truncate(AudioClip(x, sr), 6.0)
    c = featurize_clip(padded, cfg)
    for u, v, w in zip(a, b, c):
        assert np.array_equal(u.values, v.values)
        assert np.array_equal(u.values, w.values)
    # L = 551, H = 221 samples at 22050 Hz: 1 + (132300 - 551) // 221 frames
    assert a[0].values.shape == (597, 128) and a[1].values.shape == (597, 40)


def test_featurize_padding_idempotent_across_resample():
    sr = 8000
    x = np.random.default_rng(6).uniform(-0.3, 0.3, 3 * sr)
    pre = pad_or_truncate(AudioClip(x, sr), 6.0)
    a = featurize_clip(AudioClip(x, sr))
    b = featurize_clip(pre)
    assert np.array_equal(a[0].values, b[0].values)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, st.integers(200, 3000), elements=st.floats(-1, 1)))
def test_pipeline_outputs_finite(x):
    lm, mf = featurize_clip(AudioClip(x, 8000), DspConfig(8000, 0.5, mel=MelConfig(n_mels=40)))
    assert np.all(np.isfinite(lm.values)) and np.all(np.isfinite(mf.values))
    assert np.all(lm.values >= np.log(1e-10))
