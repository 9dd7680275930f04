import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convasr.frontend import (
    AudioError,
    Features,
    FrontendConfig,
    ManifestEntry,
    Waveform,
    extract_features,
    filter_dataset,
    load_audio,
    load_manifest,
    mel_filterbank,
    mel_project,
    normalize,
    resample,
    save_manifest,
    stft_power,
)
from convasr.synth import write_wav

CFG = FrontendConfig()


def sine(freq, rate, seconds):
    t = np.arange(int(rate * seconds)) / rate
    return np.sin(2 * np.pi * freq * t)


# ---------------------------------------------------------------------------
# load_audio


def test_load_max_amplitude_int16(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "one.wav"
    wavfile.write(path, 16000, np.array([32767], dtype=np.int16))
    w = load_audio(path)
    assert w.sample_rate == 16000
    assert w.samples == pytest.approx([32767 / 32768])


def test_load_stereo_averages_channels(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "stereo.wav"
    wavfile.write(path, 16000, np.array([[1.0, 0.0]], dtype=np.float32))
    w = load_audio(path)
    assert w.samples == pytest.approx([0.5])


def test_load_truncated_header_is_descriptive_error(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFF\x10\x00\x00\x00WAVE")
    with pytest.raises(AudioError, match="malformed WAV"):
        load_audio(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(AudioError):
        load_audio(tmp_path / "nope.wav")


# ---------------------------------------------------------------------------
# resample


def test_resample_identity():
    w = Waveform(np.linspace(-0.5, 0.5, 1000), 16000)
    out = resample(w, 16000)
    assert out is w


def test_resample_sine_against_closed_form():
    w = Waveform(sine(100, 48000, 2.0), 48000)
    out = resample(w, 16000)
    assert out.sample_rate == 16000
    assert out.samples.size == round(w.samples.size * 16000 / 48000)
    ref = sine(100, 16000, out.samples.size / 16000)[: out.samples.size]
    corr = np.corrcoef(out.samples, ref)[0, 1]
    assert corr >= 0.999


def test_resample_preserves_dc():
    w = Waveform(np.full(3000, 0.5), 44100)
    out = resample(w, 16000)
    assert np.all(np.abs(out.samples - 0.5) < 1e-3)


def test_resample_empty():
    out = resample(Waveform(np.array([]), 48000), 16000)
    assert out.samples.size == 0
    assert out.sample_rate == 16000


# ---------------------------------------------------------------------------
# stft_power


def test_stft_zero_in_zero_out():
    w = Waveform(np.zeros(4096), 16000)
    assert np.all(stft_power(w, CFG) == 0)


def test_stft_1khz_peaks_at_bin_32():
    w = Waveform(sine(1000, 16000, 1.0), 16000)
    p = stft_power(w, CFG)
    assert np.all(np.argmax(p, axis=1) == 32)


def test_stft_frame_count_8192():
    w = Waveform(np.random.default_rng(0).normal(size=8192) * 0.1, 16000)
    assert stft_power(w, CFG).shape == (61, 257)


def test_stft_too_short():
    with pytest.raises(AudioError, match="too short"):
        stft_power(Waveform(np.zeros(511), 16000), CFG)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=512, max_value=20000))
def test_stft_frame_count_formula(n):
    w = Waveform(np.zeros(n), 16000)
    assert stft_power(w, CFG).shape[0] == (n - 512) // 128 + 1


def test_stft_energy_scaling():
    rng = np.random.default_rng(1)
    x = rng.normal(size=2048) * 0.1
    p1 = stft_power(Waveform(x, 16000), CFG)
    p2 = stft_power(Waveform(3.0 * x, 16000), CFG)
    assert np.allclose(p2, 9.0 * p1, rtol=1e-9, atol=1e-18)


# ---------------------------------------------------------------------------
# mel filterbank / projection


def test_filterbank_no_empty_rows():
    fb = mel_filterbank(128, 512, 16000)
    assert fb.shape == (128, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)


def test_mel_zero_in_zero_out():
    out = mel_project(np.zeros((5, 257)), CFG)
    assert out.shape == (5, 128)
    assert np.all(out == 0)


def test_mel_single_bin_lights_covering_triangles():
    # energize one mid-frequency FFT bin; exactly the filters whose triangle
    # support overlaps that bin's band must respond
    fb = mel_filterbank(128, 512, 16000)
    cfg = CFG
    bin_idx = 100
    power = np.zeros((1, cfg.n_bins))
    power[0, bin_idx] = 1.0
    out = mel_project(power, cfg)[0]
    active = set(np.nonzero(out > 0)[0])
    from convasr.frontend import hz_to_mel, mel_to_hz

    corners = mel_to_hz(np.linspace(0, hz_to_mel(8000), 128 + 2))
    df = 16000 / 512
    lo, hi = bin_idx * df - df / 2, bin_idx * df + df / 2
    covering = {
        m for m in range(128)
        if corners[m] < hi and corners[m + 2] > lo
    }
    assert active == covering
    assert 1 <= len(active) <= 3


def test_mel_is_linear():
    rng = np.random.default_rng(2)
    a = rng.random((4, 257))
    b = rng.random((4, 257))
    lhs = mel_project(a + b, CFG)
    rhs = mel_project(a, CFG) + mel_project(b, CFG)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------------------
# normalize


def test_normalize_constant_matrix_gives_zeros():
    out = normalize(np.full((3, 4), 2.5))
    assert np.all(out.frames == 0)


def test_normalize_hand_case():
    out = normalize(np.array([[1.0, 3.0], [5.0, 7.0]]))
    expected = (np.array([[1.0, 3.0], [5.0, 7.0]]) - 4.0) / np.sqrt(5.0)
    assert np.allclose(out.frames, expected, atol=1e-12)


def test_normalize_moments():
    rng = np.random.default_rng(3)
    out = normalize(rng.random((7, 11)) * 100)
    assert abs(out.frames.mean()) <= 1e-6
    assert abs(out.frames.std() - 1.0) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_normalize_idempotent(seed):
    rng = np.random.default_rng(seed)
    mel = rng.normal(size=(5, 6)) * rng.uniform(0.1, 50)
    once = normalize(mel).frames
    twice = normalize(once).frames
    assert np.allclose(once, twice, atol=1e-6)


def test_full_chain_shapes():
    w = Waveform(sine(440, 48000, 1.0) * 0.3, 48000)
    feats = extract_features(w, CFG)
    assert isinstance(feats, Features)
    assert feats.n_mels == 128
    assert feats.num_frames == (16000 - 512) // 128 + 1


# ---------------------------------------------------------------------------
# manifests / filtering


def make_entry(tmp_path, name, seconds, text, rate=16000):
    w = Waveform(np.clip(sine(700, rate, seconds) * 0.3, -1, 1), rate)
    write_wav(tmp_path / name, w)
    return ManifestEntry(name, text)


def test_filter_dataset_categories(tmp_path):
    entries = [
        make_entry(tmp_path, "long.wav", 36.0, "too long here"),
        make_entry(tmp_path, "ok.wav", 10.0, "fine"),
        ManifestEntry("empty.wav", "   "),
        ManifestEntry("missing.wav", "ghost"),
    ]
    kept, report = filter_dataset(entries, CFG, base_dir=tmp_path)
    assert [e.audio for e in kept] == ["ok.wav"]
    assert report.too_long == 1
    assert report.empty_transcript == 1
    assert report.unreadable == 1
    assert report.kept == 1
    reasons = {e.audio: r for e, r in report.removed}
    assert reasons["long.wav"] == "too long"
    assert reasons["empty.wav"] == "empty transcript"
    assert reasons["missing.wav"] == "unreadable audio"


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry("a.wav", "hello there"), ManifestEntry("b.wav", "äöü")]
    path = tmp_path / "m.jsonl"
    save_manifest(entries, path)
    loaded = load_manifest(path)
    assert loaded == entries
    # file is valid JSON lines
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            assert set(obj) == {"audio", "text"}


def test_manifest_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"audio": "a.wav"\n', encoding="utf-8")
    with pytest.raises(ValueError, match="invalid JSON"):
        load_manifest(path)
