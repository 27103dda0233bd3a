"""Short-time spectral analysis: framing, power spectra, log-mel and MFCC."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import AudioClip, LabeledCycle, resample


@dataclass(frozen=True)
class FrameConfig:
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.frame_len_ms:
            raise ValueError("need 0 < hop_ms <= frame_len_ms")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    def frame_length(self, sr: int) -> int:
        return max(1, int(self.frame_len_ms * sr / 1000.0 + 0.5))

    def hop_length(self, sr: int) -> int:
        return max(1, int(self.hop_ms * sr / 1000.0 + 0.5))

    def n_fft(self, sr: int) -> int:
        return next_pow2(self.frame_length(sr))


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 128
    n_mfcc: int = 40
    fmin: float = 0.0
    fmax: float | None = None  # None means Nyquist
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels < 1 or not 1 <= self.n_mfcc <= self.n_mels:
            raise ValueError("need 1 <= n_mfcc <= n_mels")
        if self.fmin < 0 or (self.fmax is not None and self.fmax <= self.fmin):
            raise ValueError("need 0 <= fmin < fmax")
        if not self.log_floor > 0:
            raise ValueError("log_floor must be positive")

    def resolved_fmax(self, sr: int) -> float:
        return sr / 2.0 if self.fmax is None else float(self.fmax)


@dataclass(frozen=True, eq=False)
class PowerSpectrogram:
    values: np.ndarray  # [n_frames, n_fft // 2 + 1]
    sample_rate: int
    n_fft: int


@dataclass(frozen=True, eq=False)
class LogMelSpectrogram:
    values: np.ndarray  # [n_frames, n_mels]


@dataclass(frozen=True, eq=False)
class MfccMatrix:
    values: np.ndarray  # [n_frames, n_mfcc]


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def pad_or_truncate(clip: AudioClip, target_s: float) -> AudioClip:
    if not target_s > 0:
        raise ValueError("target duration must be positive")
    n = int(round(target_s * clip.sample_rate))
    x = clip.samples
    if len(x) == n:
        return clip
    if len(x) > n:
        return AudioClip(x[:n], clip.sample_rate)
    return AudioClip(np.concatenate([x, np.zeros(n - len(x))]), clip.sample_rate)


@functools.lru_cache(maxsize=32)
def _hann(length: int) -> np.ndarray:
    n = np.arange(length)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / (length - 1)))
    # force exact symmetry; cos rounding differs slightly between halves
    w = 0.5 * (w + w[::-1])
    w.setflags(write=False)
    return w


def hann_window(length: int) -> np.ndarray:
    """Symmetric Hann window, ``w[0] == w[-1] == 0``."""
    if length < 2:
        raise ValueError(f"Hann window needs length >= 2, got {length}")
    return _hann(int(length))


def frame_signal(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """Slice into overlapping Hann-windowed frames, shape ``[n_frames, L]``."""
    L = cfg.frame_length(clip.sample_rate)
    H = cfg.hop_length(clip.sample_rate)
    x = clip.samples
    if len(x) < L:
        raise ValueError(f"clip of {len(x)} samples is shorter than one frame ({L})")
    n_frames = 1 + (len(x) - L) // H
    idx = np.arange(L)[None, :] + H * np.arange(n_frames)[:, None]
    return x[idx] * hann_window(L)


def power_spectrum(frame, n_fft: int) -> np.ndarray:
    """One-sided ``|DFT_k|^2`` for k in 0..n_fft/2; works on the last axis."""
    frame = np.asarray(frame, dtype=np.float64)
    if n_fft < 1 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if frame.shape[-1] > n_fft:
        raise ValueError(f"frame length {frame.shape[-1]} exceeds n_fft {n_fft}")
    spec = np.fft.rfft(frame, n=n_fft, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def power_spectrogram(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> PowerSpectrogram:
    n_fft = cfg.n_fft(clip.sample_rate)
    return PowerSpectrogram(power_spectrum(frame_signal(clip, cfg), n_fft), clip.sample_rate, n_fft)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(cfg: MelConfig, sr: int) -> np.ndarray:
    """The ``n_mels + 2`` band edges/centres in Hz, equally spaced in mel."""
    lo, hi = hz_to_mel(cfg.fmin), hz_to_mel(cfg.resolved_fmax(sr))
    return mel_to_hz(np.linspace(lo, hi, cfg.n_mels + 2))


@functools.lru_cache(maxsize=16)
def _filterbank(cfg: MelConfig, n_fft: int, sr: int) -> np.ndarray:
    fmax = cfg.resolved_fmax(sr)
    if fmax > sr / 2.0:
        raise ValueError(f"fmax {fmax} above Nyquist {sr / 2.0}")
    edges = mel_centers(cfg, sr)
    bins = np.arange(n_fft // 2 + 1) * (sr / n_fft)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"n_fft={n_fft} at {sr} Hz is too coarse for {cfg.n_mels} mel bands "
            f"(band {int(empty[0])} covers no FFT bin)"
        )
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: MelConfig, n_fft: int, sr: int) -> np.ndarray:
    """Triangular mel filters, shape ``[n_mels, n_fft // 2 + 1]``, peak 1."""
    return _filterbank(cfg, int(n_fft), int(sr))


def log_mel_spectrogram(ps: PowerSpectrogram, fb: np.ndarray,
                        cfg: MelConfig = MelConfig()) -> LogMelSpectrogram:
    if fb.shape[1] != ps.values.shape[1]:
        raise ValueError(f"filterbank has {fb.shape[1]} bins, spectrum has {ps.values.shape[1]}")
    energies = ps.values @ fb.T
    return LogMelSpectrogram(np.log(np.maximum(energies, cfg.log_floor)))


@functools.lru_cache(maxsize=16)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row k is the k-th cosine."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    g = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * math.sqrt(2.0 / n)
    g[0] /= math.sqrt(2.0)
    g.setflags(write=False)
    return g


def mfcc(lm: LogMelSpectrogram, n_mfcc: int) -> MfccMatrix:
    n_mels = lm.values.shape[1]
    if n_mfcc > n_mels:
        raise ValueError(f"n_mfcc={n_mfcc} exceeds n_mels={n_mels}")
    return MfccMatrix(lm.values @ dct_matrix(n_mels)[:n_mfcc].T)


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 22050
    duration_s: float = 6.0
    frame: FrameConfig = field(default_factory=FrameConfig)
    mel: MelConfig = field(default_factory=MelConfig)


def featurize_clip(clip: AudioClip, cfg: DspConfig = DspConfig()):
    clip = pad_or_truncate(resample(clip, cfg.sample_rate), cfg.duration_s)
    ps = power_spectrogram(clip, cfg.frame)
    fb = mel_filterbank(cfg.mel, ps.n_fft, cfg.sample_rate)
    lm = log_mel_spectrogram(ps, fb, cfg.mel)
    return lm, mfcc(lm, cfg.mel.n_mfcc)


def featurize_cycle(cycle: LabeledCycle, cfg: DspConfig = DspConfig()):
    """Resample, pad to the fixed duration, and compute (log-mel, MFCC)."""
    return featurize_clip(cycle.clip, cfg)
