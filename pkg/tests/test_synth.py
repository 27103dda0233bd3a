import numpy as np
import pytest

from lungsound.dataset import ClassLabel, dataset_summary, load_directory, parse_annotation_file
from lungsound.dsp import DspConfig, MelConfig, featurize_clip, mel_centers
from lungsound.synth import SynthConfig, generate_corpus, pink_noise, write_corpus


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(SynthConfig(seed=3, per_class=6))


def test_counts_and_patients(corpus):
    assert len(corpus) == 24
    assert dataset_summary(corpus).counts == {lab: 6 for lab in ClassLabel}
    by_patient = {}
    for c in corpus:
        by_patient.setdefault(c.patient_id, []).append(c.label)
    assert len(by_patient) == 6
    assert all(sorted(v) == list(ClassLabel) for v in by_patient.values())


def test_deterministic(corpus):
    again = generate_corpus(SynthConfig(seed=3, per_class=6))
    assert all(np.array_equal(a.clip.samples, b.clip.samples) for a, b in zip(corpus, again))
    other = generate_corpus(SynthConfig(seed=4, per_class=6))
    assert not np.array_equal(corpus[0].clip.samples, other[0].clip.samples)


def test_amplitude(corpus):
    for c in corpus:
        assert np.max(np.abs(c.clip.samples)) == pytest.approx(0.9)
        assert len(c.clip) == 24000


def test_pink_noise_unit_rms():
    x = pink_noise(10000, np.random.default_rng(0))
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0)


def _band_energy(cycle, lo, hi):
    cfg = DspConfig(8000, 3.0, mel=MelConfig(n_mels=40))
    lm = featurize_clip(cycle.clip, cfg)[0].values
    centers = mel_centers(cfg.mel, 8000)[1:-1]
    band = (centers >= lo) & (centers <= hi)
    return lm[:, band].mean() - lm[:, ~band].mean()


def test_wheeze_band_stands_out(corpus):
    wheeze = [_band_energy(c, 200, 800) for c in corpus if c.label == ClassLabel.WHEEZES]
    normal = [_band_energy(c, 200, 800) for c in corpus if c.label == ClassLabel.NORMAL]
    assert min(wheeze) > max(normal)


def test_crackles_are_impulsive(corpus):
    def kurtosis(x):
        x = x - x.mean()
        return np.mean(x ** 4) / np.mean(x ** 2) ** 2
    crackle = [kurtosis(c.clip.samples) for c in corpus if c.label == ClassLabel.CRACKLES]
    normal = [kurtosis(c.clip.samples) for c in corpus if c.label == ClassLabel.NORMAL]
    assert min(crackle) > max(normal)


def test_files_round_trip(tmp_path, corpus):
    write_corpus(corpus, tmp_path / "a")
    write_corpus(corpus, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 12
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    txt = next((tmp_path / "a").glob("*.txt")).read_text()
    assert [a.label for a in parse_annotation_file(txt)] == list(ClassLabel)
    loaded = load_directory(tmp_path / "a")
    assert dataset_summary(loaded).counts == {lab: 6 for lab in ClassLabel}
    for c in loaded:
        src = next(s for s in corpus if s.identity == c.identity)
        # write scales by 32767, read by 32768: half a step plus |x| / 32768
        assert np.max(np.abs(c.clip.samples - src.clip.samples)) <= 1.5 / 32768


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(per_class=0)
    with pytest.raises(ValueError):
        SynthConfig(wheeze_band=(200, 5000))
