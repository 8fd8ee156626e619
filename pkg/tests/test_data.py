import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from digitrec.audio import AudioClip, read_wav, write_wav
from digitrec.augment import AugmentationSpec, Noise, NoiseCategory, Speed
from digitrec.data import (
    DIGIT_WORDS,
    VOWELS,
    Manifest,
    ManifestEntry,
    Speaker,
    load_manifest,
    save_manifest,
    scan_directory,
    synth_digit_dataset,
    synth_word,
)
from digitrec.errors import NoFilesFound, ParseError, UnlabeledFile
from digitrec.features import MfccConfig, mfcc


def _touch_wav(path):
    write_wav(path, AudioClip(np.full(16, 0.1), 16000))


def test_scan_folder_rule(tmp_path):
    for c in range(10):
        for i in range(10):
            _touch_wav(tmp_path / str(c) / f"take{i}.wav")
    m = scan_directory(tmp_path)
    assert len(m) == 100
    np.testing.assert_array_equal(m.class_counts(), 10)


def test_scan_prefix_rule(tmp_path):
    _touch_wav(tmp_path / "7_speaker3_rep2.wav")
    m = scan_directory(tmp_path, "prefix")
    assert [e.label for e in m] == [7]


def test_scan_rejects_non_digit_folder(tmp_path):
    _touch_wav(tmp_path / "ten" / "a.wav")
    _touch_wav(tmp_path / "3" / "b.wav")
    with pytest.raises(UnlabeledFile) as info:
        scan_directory(tmp_path)
    assert [p.as_posix() for p in info.value.paths] == ["ten/a.wav"]


def test_scan_empty(tmp_path):
    with pytest.raises(NoFilesFound):
        scan_directory(tmp_path)


entries = st.builds(
    ManifestEntry,
    path=st.text("abc/_0123", min_size=1, max_size=12),
    label=st.integers(0, 9),
    source_id=st.text(min_size=1, max_size=8),
    augmentation=st.one_of(
        st.none(),
        st.builds(AugmentationSpec, st.builds(Noise, st.sampled_from(list(NoiseCategory)),
                                              st.sampled_from([0.0, 5.0, 20.0])), st.integers(0, 2**31 - 1)),
        st.builds(AugmentationSpec, st.builds(Speed, st.floats(0.9, 1.1)), st.integers(0, 2**31 - 1)),
    ),
    split=st.sampled_from([None, "train", "val", "test"]),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(entries, max_size=15))
def test_manifest_roundtrip(tmp_path_factory, items):
    path = tmp_path_factory.mktemp("m") / "m.jsonl"
    m = Manifest(items, path.parent)
    save_manifest(path, m)
    assert load_manifest(path) == m


def test_malformed_line_number(tmp_path):
    good = json.dumps(ManifestEntry("a.wav", 1, "a").to_json())
    lines = [good.replace("a.wav", f"{i}.wav") for i in range(16)] + ["{not json"]
    (tmp_path / "m.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_manifest(tmp_path / "m.jsonl")
    assert info.value.line == 17


def test_unknown_field_and_bad_label_rejected(tmp_path):
    d = ManifestEntry("a.wav", 1, "a").to_json()
    (tmp_path / "x.jsonl").write_text(json.dumps({**d, "extra": 1}) + "\n")
    with pytest.raises(ParseError):
        load_manifest(tmp_path / "x.jsonl")
    (tmp_path / "y.jsonl").write_text(json.dumps({**d, "label": 12}) + "\n")
    with pytest.raises(ParseError):
        load_manifest(tmp_path / "y.jsonl")


def test_empty_manifest(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert len(load_manifest(tmp_path / "e.jsonl")) == 0


# --------------------------------------------------------------------------
# synthetic corpus


def test_synth_dataset_counts_and_determinism(tmp_path):
    m = synth_digit_dataset(20, 16000, 1, tmp_path / "a")
    assert len(m) == 200
    np.testing.assert_array_equal(m.class_counts(), 20)
    m.validate()
    again = synth_digit_dataset(20, 16000, 1, tmp_path / "b")
    assert again == m
    for e in m.entries[::37]:
        assert m.resolve(e).read_bytes() == again.resolve(e).read_bytes()
    assert load_manifest(tmp_path / "a" / "manifest.jsonl") == m


def _peak_in_band(x, rate, lo, hi):
    n = 1 << 16
    mag = np.abs(np.fft.rfft(x * np.hanning(len(x)), n))
    f = np.fft.rfftfreq(n, 1 / rate)
    band = (f >= lo) & (f <= hi)
    return f[band][np.argmax(mag[band])]


@pytest.mark.parametrize("vowel", ["a", "e"])
def test_vowel_formant_peaks(vowel):
    f1, f2 = VOWELS[vowel]
    clip = synth_word(vowel, 16000, np.random.default_rng(0), Speaker(f0=120.0, scale=1.0, tempo=3.0))
    mid = (f1 + f2) / 2
    assert abs(_peak_in_band(clip.samples, 16000, 150, mid) / f1 - 1) < 0.1
    assert abs(_peak_in_band(clip.samples, 16000, mid, 2000) / f2 - 1) < 0.1


def test_speaker_scale_shifts_formants():
    rng = np.random.default_rng
    lo = synth_word("a", 16000, rng(0), Speaker(f0=100.0, scale=0.9, tempo=3.0))
    hi = synth_word("a", 16000, rng(0), Speaker(f0=100.0, scale=1.1, tempo=3.0))
    assert _peak_in_band(lo.samples, 16000, 975, 2000) < _peak_in_band(hi.samples, 16000, 975, 2000)


def test_digit_words_are_distinct_and_known():
    assert len(set(DIGIT_WORDS)) == 10
    known = set(VOWELS) | {"s", "f", "t", "n"}
    assert all(set(w.split()) <= known for w in DIGIT_WORDS)
    with pytest.raises(ValueError):
        synth_word("a x", 16000, np.random.default_rng(0))


def test_nearest_centroid_on_mean_mfcc_separates_classes(tmp_path):
    m = synth_digit_dataset(12, 16000, 2, tmp_path)
    # CMN zeroes the per-utterance mean, so use the raw cepstra
    vecs = np.array([mfcc(read_wav(m.resolve(e)), MfccConfig(cmn=False)).values.mean(axis=0)
                     for e in m.entries])
    y = m.labels()
    train = np.arange(len(y)) % 2 == 0
    centroids = np.array([vecs[train & (y == c)].mean(axis=0) for c in range(10)])
    d = ((vecs[~train, None, :] - centroids[None]) ** 2).sum(axis=2)
    assert np.mean(np.argmin(d, axis=1) == y[~train]) > 0.6
