"""Deterministic synthetic breathing cycles for exercising the pipeline.

The signal models are caricatures: background pink noise, a steady tone for
wheezes, and Poisson-timed damped clicks for crackles.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (AudioClip, ClassLabel, CycleAnnotation, LabeledCycle, RecordingMeta,
                      flags_from_label, format_annotation_file, write_wav)

PEAK = 0.9
NOISE_RMS = 0.05


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    sample_rate: int = 8000
    cycle_s: float = 3.0
    per_class: int = 100
    wheeze_band: tuple = (200.0, 800.0)
    crackle_rate: float = 8.0
    snr_db: float = 10.0

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError("per_class must be at least 1")
        lo, hi = self.wheeze_band
        if not 0 < lo < hi <= self.sample_rate / 2:
            raise ValueError("wheeze band must lie strictly inside (0, Nyquist]")
        if self.cycle_s <= 0 or self.crackle_rate < 0:
            raise ValueError("cycle_s must be positive and crackle_rate non-negative")


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Noise with a 1/f power spectrum, unit RMS."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n)
    return x / np.sqrt(np.mean(x ** 2))


def _wheeze(n: int, sr: int, cfg: SynthConfig, rng) -> np.ndarray:
    f0 = rng.uniform(*cfg.wheeze_band)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(n) / sr
    return np.sqrt(2.0) * np.sin(2 * np.pi * f0 * t + phase)


def _crackles(n: int, sr: int, cfg: SynthConfig, rng) -> np.ndarray:
    x = np.zeros(n)
    count = max(1, rng.poisson(cfg.crackle_rate * n / sr))
    length = int(0.02 * sr)
    t = np.arange(length) / sr
    for onset in np.sort(rng.integers(0, n, size=count)):
        freq = rng.uniform(300.0, min(1500.0, 0.45 * sr))
        click = np.exp(-t / 0.003) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        click *= rng.choice([-1.0, 1.0])
        end = min(n, onset + length)
        x[onset:end] += click[:end - onset]
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def synth_cycle(label: ClassLabel, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    sr = cfg.sample_rate
    n = int(round(cfg.cycle_s * sr))
    x = pink_noise(n, rng) * NOISE_RMS
    gain = NOISE_RMS * 10.0 ** (cfg.snr_db / 20.0)
    crackles, wheezes = flags_from_label(label)
    if wheezes:
        x = x + gain * _wheeze(n, sr, cfg, rng)
    if crackles:
        x = x + gain * _crackles(n, sr, cfg, rng)
    return x * (PEAK / np.max(np.abs(x)))


def generate_corpus(cfg: SynthConfig) -> list[LabeledCycle]:
    """Build ``4 * per_class`` cycles.

    Patient ``101 + i`` contributes one cycle of each class, laid out
    back-to-back as a single recording, so patient-wise folds stay balanced.
    """
    rng = np.random.default_rng(cfg.seed)
    cycles = []
    for i in range(cfg.per_class):
        meta = synth_meta(i)
        for j, label in enumerate(ClassLabel):
            samples = synth_cycle(label, cfg, rng)
            start = j * cfg.cycle_s
            ann = CycleAnnotation(start, start + cfg.cycle_s, *flags_from_label(label))
            cycles.append(LabeledCycle(
                patient_id=meta.patient_id,
                clip=AudioClip(samples, cfg.sample_rate),
                label=label,
                source_annotation=ann,
                recording=meta.name,
                index=j,
            ))
    return cycles


def synth_meta(i: int) -> RecordingMeta:
    return RecordingMeta(101 + i, "1b1", "Al", "sc", "Synth")


def write_corpus(cycles: list[LabeledCycle], out_dir) -> list[Path]:
    """Write each recording as ``<name>.wav`` (PCM16) plus ``<name>.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_recording: dict[str, list[LabeledCycle]] = {}
    for c in cycles:
        by_recording.setdefault(c.recording, []).append(c)
    written = []
    for name, group in by_recording.items():
        group = sorted(group, key=lambda c: c.index)
        sr = group[0].clip.sample_rate
        audio = np.concatenate([c.clip.samples for c in group])
        wav = out_dir / f"{name}.wav"
        write_wav(wav, AudioClip(audio, sr))
        (out_dir / f"{name}.txt").write_text(
            format_annotation_file([c.source_annotation for c in group]), encoding="utf-8")
        written.append(wav)
    return written
