"""Recording ingestion: WAV decoding, annotation parsing and cycle extraction."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class AnnotationError(DataError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class CycleRangeError(DataError):
    def __init__(self, index: int, message: str):
        super().__init__(f"cycle {index}: {message}")
        self.index = index


class ClassLabel(enum.IntEnum):
    NORMAL = 0
    CRACKLES = 1
    WHEEZES = 2
    BOTH = 3

    @property
    def display(self) -> str:
        return self.name.capitalize()


# Row/column order used in confusion matrices and printed reports.
REPORT_ORDER = (ClassLabel.NORMAL, ClassLabel.WHEEZES, ClassLabel.CRACKLES, ClassLabel.BOTH)

ANNOTATION_TOLERANCE_S = 0.05


@dataclass(frozen=True)
class CycleAnnotation:
    start_s: float
    end_s: float
    crackles: int
    wheezes: int

    def __post_init__(self):
        if self.crackles not in (0, 1) or self.wheezes not in (0, 1):
            raise DataError(f"flags must be 0 or 1, got {self.crackles}, {self.wheezes}")
        if not (self.start_s >= 0 and self.end_s > self.start_s):
            raise DataError(f"invalid interval [{self.start_s}, {self.end_s}]")

    @property
    def label(self) -> ClassLabel:
        return label_from_flags(self.crackles, self.wheezes)

    def to_line(self) -> str:
        return f"{self.start_s!r}\t{self.end_s!r}\t{self.crackles}\t{self.wheezes}"


@dataclass(frozen=True)
class RecordingMeta:
    patient_id: int
    recording_index: str
    chest_location: str
    acquisition_mode: str
    equipment: str
    native_sample_rate: int | None = None

    @property
    def name(self) -> str:
        return "_".join(
            [str(self.patient_id), self.recording_index, self.chest_location,
             self.acquisition_mode, self.equipment]
        )


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError("audio clip must be one-dimensional")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise DataError(f"sample rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio clip contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True, eq=False)
class LabeledCycle:
    patient_id: int
    clip: AudioClip
    label: ClassLabel
    source_annotation: CycleAnnotation
    recording: str = ""
    index: int = 0

    def __post_init__(self):
        if len(self.clip) == 0:
            raise DataError("cycle clip is empty")
        if label_from_flags(self.source_annotation.crackles,
                            self.source_annotation.wheezes) != self.label:
            raise DataError("cycle label disagrees with its annotation flags")

    @property
    def identity(self) -> str:
        return f"{self.recording}#{self.index}"


def label_from_flags(crackles: int, wheezes: int) -> ClassLabel:
    return ClassLabel(int(crackles) + 2 * int(wheezes))


def flags_from_label(label: ClassLabel) -> tuple[int, int]:
    return int(label) & 1, int(label) >> 1


def _parse_flag(token: str, lineno: int, what: str) -> int:
    if token not in ("0", "1"):
        raise AnnotationError(lineno, f"{what} flag must be 0 or 1, got {token!r}")
    return int(token)


def parse_annotation_file(text: str | Iterable[str]) -> list[CycleAnnotation]:
    """Parse a cycle annotation listing.

    Each non-blank line holds ``start end crackles wheezes`` separated by
    whitespace. Blank lines are skipped.

    Args:
        text: the whole file as a string, or an iterable of lines.

    Returns:
        Annotations in file order.

    Raises:
        AnnotationError: on the first malformed line, with its 1-based number.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    out = []
    for lineno, line in enumerate(lines, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise AnnotationError(lineno, f"expected 4 fields, got {len(fields)}")
        try:
            start, end = float(fields[0]), float(fields[1])
        except ValueError:
            raise AnnotationError(lineno, "start/end times must be numeric") from None
        if not (math.isfinite(start) and math.isfinite(end)):
            raise AnnotationError(lineno, "start/end times must be finite")
        if start < 0:
            raise AnnotationError(lineno, f"negative start time {start}")
        if end <= start:
            raise AnnotationError(lineno, f"end {end} not after start {start}")
        crackles = _parse_flag(fields[2], lineno, "crackles")
        wheezes = _parse_flag(fields[3], lineno, "wheezes")
        out.append(CycleAnnotation(start, end, crackles, wheezes))
    return out


def format_annotation_file(anns: Sequence[CycleAnnotation]) -> str:
    return "".join(a.to_line() + "\n" for a in anns)


def parse_recording_filename(name: str) -> RecordingMeta:
    """Split an ICBHI-style stem like ``101_1b1_Al_sc_Meditron``.

    A trailing ``.wav``/``.txt`` suffix is ignored.
    """
    stem = Path(name).stem if name.endswith((".wav", ".txt")) else name
    parts = stem.split("_")
    if len(parts) != 5:
        raise DataError(f"{name!r}: expected 5 underscore-separated fields, got {len(parts)}")
    if not all(parts):
        raise DataError(f"{name!r}: empty field")
    try:
        patient = int(parts[0])
    except ValueError:
        raise DataError(f"{name!r}: patient id {parts[0]!r} is not an integer") from None
    if patient < 0:
        raise DataError(f"{name!r}: negative patient id")
    return RecordingMeta(patient, parts[1], parts[2], parts[3], parts[4])


def read_wav(path) -> AudioClip:
    """Decode PCM16 or float32 WAV; multi-channel files keep channel 0."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"{path}: cannot decode WAV ({exc})") from exc
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, float32: bool = False) -> None:
    x = np.clip(clip.samples, -1.0, 1.0)
    if float32:
        data = x.astype(np.float32)
    else:
        data = np.round(x * 32767.0).astype(np.int16)
    wavfile.write(path, clip.sample_rate, data)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling.

    The signal is treated as zero past its last sample, so resampling then
    zero-padding gives the same result as zero-padding then resampling.
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    n = len(clip)
    if n == 0:
        raise DataError("cannot resample an empty clip")
    if target_rate == clip.sample_rate:
        return clip
    # every output instant before the end of the input, so no input sample is dropped
    n_out = -(-n * target_rate // clip.sample_rate)
    t = np.arange(n_out) * (clip.sample_rate / target_rate)
    xp = np.arange(n + 1, dtype=np.float64)
    fp = np.append(clip.samples, 0.0)
    return AudioClip(np.interp(t, xp, fp), target_rate)


def extract_cycles(clip: AudioClip, meta: RecordingMeta,
                   anns: Sequence[CycleAnnotation]) -> list[LabeledCycle]:
    sr = clip.sample_rate
    duration = clip.duration_s
    cycles = []
    for i, ann in enumerate(anns):
        if ann.start_s < 0 or ann.start_s >= duration:
            raise CycleRangeError(i, f"start {ann.start_s} s outside clip of {duration:.3f} s")
        if ann.end_s > duration + ANNOTATION_TOLERANCE_S:
            raise CycleRangeError(i, f"end {ann.end_s} s past clip end {duration:.3f} s")
        lo = int(round(ann.start_s * sr))
        hi = min(int(round(min(ann.end_s, duration) * sr)), len(clip))
        if hi <= lo:
            raise CycleRangeError(i, "cycle covers no samples")
        cycles.append(LabeledCycle(
            patient_id=meta.patient_id,
            clip=AudioClip(clip.samples[lo:hi], sr),
            label=ann.label,
            source_annotation=ann,
            recording=meta.name,
            index=i,
        ))
    return cycles


@dataclass
class DatasetSummary:
    counts: dict = field(default_factory=lambda: {c: 0 for c in ClassLabel})

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, label: ClassLabel) -> int:
        return self.counts[label]

    def as_dict(self) -> dict:
        d = {c.display: self.counts[c] for c in REPORT_ORDER}
        d["Total"] = self.total
        return d

    def table(self) -> str:
        rows = [f"{'Class':<10}{'Cycles':>8}"]
        rows += [f"{c.display:<10}{self.counts[c]:>8}" for c in REPORT_ORDER]
        rows.append(f"{'Total':<10}{self.total:>8}")
        return "\n".join(rows)


def dataset_summary(cycles: Iterable[LabeledCycle]) -> DatasetSummary:
    tally = Counter(c.label for c in cycles)
    return DatasetSummary({c: tally.get(c, 0) for c in ClassLabel})


def recording_pairs(data_dir) -> tuple[list[tuple[Path, Path]], list[str]]:
    """Pair ``<stem>.wav`` with ``<stem>.txt`` in a directory.

    Returns the sorted pairs and a list of problems (files without a partner).
    """
    data_dir = Path(data_dir)
    wavs = {p.stem: p for p in data_dir.glob("*.wav")}
    txts = {p.stem: p for p in data_dir.glob("*.txt")}
    problems = [f"{wavs[s].name}: missing annotation file {s}.txt" for s in sorted(wavs.keys() - txts.keys())]
    problems += [f"{txts[s].name}: missing audio file {s}.wav" for s in sorted(txts.keys() - wavs.keys())]
    pairs = [(wavs[s], txts[s]) for s in sorted(wavs.keys() & txts.keys())]
    return pairs, problems


def load_recording(wav_path, ann_path) -> list[LabeledCycle]:
    wav_path = Path(wav_path)
    meta = parse_recording_filename(wav_path.stem)
    clip = read_wav(wav_path)
    meta = replace(meta, native_sample_rate=clip.sample_rate)
    try:
        anns = parse_annotation_file(Path(ann_path).read_text(encoding="utf-8"))
        return extract_cycles(clip, meta, anns)
    except DataError as exc:
        raise DataError(f"{Path(ann_path).name}: {exc}") from exc


def load_directory(data_dir) -> list[LabeledCycle]:
    pairs, problems = recording_pairs(data_dir)
    if problems:
        raise DataError("; ".join(problems))
    cycles = []
    for wav_path, ann_path in pairs:
        cycles.extend(load_recording(wav_path, ann_path))
    return cycles
