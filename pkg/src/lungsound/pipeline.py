"""Run configuration, feature cache, and the glue between modules."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import tensorio
from .dataset import AudioClip, ClassLabel, LabeledCycle, load_directory
from .dsp import DspConfig, FrameConfig, MelConfig, featurize_clip
from .imaging import GRAYSCALE, ImageConfig, load_colormap, to_feature_image
from .model import FeatureExtractor, TrainConfig, build_extractor, extract_features
from .synth import SynthConfig

log = logging.getLogger(__name__)

FEATURE_SOURCES = ("mfcc", "logmel", "colormapped-logmel")
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    data_dir: str = "data"
    cache_dir: str = "cache"
    out_dir: str = "out"
    model: str = "head.lswt"
    duration_s: float = 6.0
    sample_rate: int = 22050
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 128
    n_mfcc: int = 40
    fmin: float = 0.0
    fmax: float = 0.0  # 0 selects the Nyquist frequency
    log_floor: float = 1e-10
    image_size: int = 256
    feature_source: str = "colormapped-logmel"
    colormap: str = ""  # empty selects the grayscale ramp
    extractor: str = "seed:0"
    channels: str = "8,16,32,64,64"
    convs: str = "2,2,3,3,3"
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 30
    l2: float = 1e-4
    k: int = 5
    seed: int = 0
    holdout: bool = False
    workers: int = 1
    per_class: int = 100
    synth_rate: int = 8000
    cycle_s: float = 3.0
    snr_db: float = 10.0
    crackle_rate: float = 8.0
    wheeze_lo: float = 200.0
    wheeze_hi: float = 800.0

    def __post_init__(self):
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigError(f"feature_source must be one of {', '.join(FEATURE_SOURCES)}")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        try:
            self.dsp()
            self.train()
            self.synth()
            self.plan()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # --- views onto module configs -----------------------------------------

    def dsp(self) -> DspConfig:
        return DspConfig(
            sample_rate=self.sample_rate,
            duration_s=self.duration_s,
            frame=FrameConfig(self.frame_len_ms, self.hop_ms),
            mel=MelConfig(self.n_mels, self.n_mfcc, self.fmin, self.fmax or None, self.log_floor),
        )

    def image(self) -> ImageConfig:
        if self.feature_source != "colormapped-logmel":
            return ImageConfig(self.image_size)
        table = load_colormap(self.colormap) if self.colormap else GRAYSCALE
        return ImageConfig(self.image_size, table)

    def train(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.epochs, self.seed, self.l2)

    def synth(self) -> SynthConfig:
        return SynthConfig(self.seed, self.synth_rate, self.cycle_s, self.per_class,
                           (self.wheeze_lo, self.wheeze_hi), self.crackle_rate, self.snr_db)

    def plan(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        try:
            ch = tuple(int(v) for v in self.channels.split(","))
            nc = tuple(int(v) for v in self.convs.split(","))
        except ValueError:
            raise ConfigError("channels and convs must be comma-separated integers") from None
        if len(ch) != 5 or len(nc) != 5:
            raise ConfigError("channels and convs need 5 entries each")
        return ch, nc

    def build_extractor(self) -> FeatureExtractor:
        ch, nc = self.plan()
        return build_extractor(self.extractor, ch, nc, 3, (self.image_size, self.image_size))

    def feature_hash(self) -> str:
        """Digest of every setting that changes cached image bytes."""
        keys = ("duration_s", "sample_rate", "frame_len_ms", "hop_ms", "n_mels", "n_mfcc",
                "fmin", "fmax", "log_floor", "image_size", "feature_source")
        blob = {k: getattr(self, k) for k in keys}
        if self.feature_source == "colormapped-logmel" and self.colormap:
            blob["colormap"] = hashlib.sha256(Path(self.colormap).read_bytes()).hexdigest()
        raw = json.dumps(blob, sort_keys=True).encode()
        return hashlib.sha256(raw).hexdigest()[:16]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


CONFIG_KEYS = {f.name: f for f in fields(PipelineConfig)}
ALIASES = {"duration": "duration_s"}


def _coerce(key: str, raw):
    ftype = CONFIG_KEYS[key].type
    if not isinstance(raw, str):
        return raw
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None
    return raw


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[canonical_key(key)] = value
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    values = {}
    if path:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    for key, value in (overrides or {}).items():
        values[canonical_key(key)] = value
    return PipelineConfig(**{k: _coerce(k, v) for k, v in values.items()})


def format_config(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.as_dict().items())


# --- featurization -----------------------------------------------------------

def clip_image(clip: AudioClip, cfg: PipelineConfig) -> np.ndarray:
    """Feature image for one clip, rounded to float32 as stored in the cache."""
    lm, mf = featurize_clip(clip, cfg.dsp())
    source = mf if cfg.feature_source == "mfcc" else lm
    return to_feature_image(source, cfg.image()).astype(np.float32)


def _image_job(args):
    clip, cfg = args
    return clip_image(clip, cfg)


def source_digest(cycle: LabeledCycle) -> str:
    h = hashlib.sha256()
    h.update(str(cycle.clip.sample_rate).encode())
    h.update(bytes([int(cycle.label)]))
    h.update(np.ascontiguousarray(cycle.clip.samples).tobytes())
    return h.hexdigest()


def entry_filename(identity: str) -> str:
    name, _, idx = identity.rpartition("#")
    return f"{name}_c{int(idx):04d}.lsft"


@dataclass
class CacheResult:
    directory: Path
    written: int
    skipped: int
    identities: list


def featurize(cfg: PipelineConfig, cycles=None) -> CacheResult:
    """Populate the feature cache for every cycle under ``cfg.data_dir``.

    Entries live in ``<cache_dir>/<feature hash>/``; an entry whose source
    digest matches the manifest is left untouched.
    """
    if cycles is None:
        cycles = load_directory(cfg.data_dir)
    directory = Path(cfg.cache_dir) / cfg.feature_hash()
    directory.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / MANIFEST
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    seen = set()
    todo, digests = [], {}
    for c in cycles:
        if c.identity in seen:
            raise ValueError(f"duplicate cycle identity {c.identity}")
        seen.add(c.identity)
        digests[c.identity] = source_digest(c)
        if manifest.get(c.identity) == digests[c.identity] and (directory / entry_filename(c.identity)).exists():
            continue
        todo.append(c)
    jobs = [(c.clip, cfg) for c in todo]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            images = pool.map(_image_job, jobs, chunksize=8)
            for c, img in zip(todo, images):
                tensorio.write_feature(directory / entry_filename(c.identity), c.identity, c.label, img)
    else:
        for c, job in zip(todo, jobs):
            tensorio.write_feature(directory / entry_filename(c.identity), c.identity, c.label, _image_job(job))
    new_manifest = dict(manifest)
    new_manifest.update(digests)
    if new_manifest != manifest:
        manifest_path.write_text(json.dumps(new_manifest, indent=1, sort_keys=True) + "\n")
    log.info("feature cache %s: %d written, %d up to date", directory, len(todo), len(cycles) - len(todo))
    return CacheResult(directory, len(todo), len(cycles) - len(todo), [c.identity for c in cycles])


def load_images(directory, identities) -> tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for ident in identities:
        got, label, payload = tensorio.read_feature(Path(directory) / entry_filename(ident))
        if got != ident:
            raise ValueError(f"cache entry for {ident} holds {got}")
        images.append(payload)
        labels.append(label)
    return np.stack(images) if images else np.zeros((0,)), np.array(labels, dtype=np.intp)


def extract_all(images, fx: FeatureExtractor) -> np.ndarray:
    return np.stack([extract_features(img, fx) for img in images])


def cycle_features(cfg: PipelineConfig, cycles=None):
    """Featurize (through the cache) and run the extractor.

    Returns the cycles and their ``[N, D]`` feature matrix.
    """
    if cycles is None:
        cycles = load_directory(cfg.data_dir)
    if not cycles:
        raise ValueError(f"no cycles found under {cfg.data_dir}")
    res = featurize(cfg, cycles)
    images, labels = load_images(res.directory, res.identities)
    if not np.array_equal(labels, [int(c.label) for c in cycles]):
        raise AssertionError("cached labels disagree with annotations")
    return cycles, extract_all(images, cfg.build_extractor())


def label_name(label) -> str:
    return ClassLabel(int(label)).display
