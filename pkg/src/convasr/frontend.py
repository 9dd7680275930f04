"""Audio frontend: WAV loading, resampling, spectrogram features, dataset filtering.

The feature chain is: resample to 16 kHz, STFT power spectrum (32 ms
periodic-Hann window, 8 ms stride for 75% frame overlap, 512-point FFT),
128-band mel filterbank (HTK scale), then per-utterance normalization to
mean 0 / standard deviation 1. There is no pre-emphasis and no log
compression of the mel energies.

Mel filters are triangles with corners equally spaced on the HTK mel scale
(mel = 2595 * log10(1 + f/700)). Each filter weight is the triangle's exact
integral over the FFT bin's frequency band divided by the band width, rather
than a point sample at the bin center. With 128 bands against 257 FFT bins
the lowest triangles are narrower than one bin and point sampling would
leave them empty; band integration guarantees every filter keeps positive
weight.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, resample_poly


class AudioError(Exception):
    """Raised when an audio file cannot be read or is too short to process."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio, amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError("Waveform samples must be 1-D (mono)")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("Waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    window_ms: int = 32
    stride_ms: int = 8
    fft_size: int = 512
    n_mels: int = 128
    sample_rate: int = 16000
    max_duration_s: float = 35.0

    def __post_init__(self):
        if self.window_ms * self.sample_rate != self.fft_size * 1000:
            raise ValueError(
                f"window of {self.window_ms} ms at {self.sample_rate} Hz does not "
                f"match fft_size {self.fft_size}"
            )
        if self.stride_ms * 4 != self.window_ms:
            raise ValueError("stride_ms must be window_ms/4 (75% overlap)")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")

    @property
    def hop(self) -> int:
        return self.stride_ms * self.sample_rate // 1000

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class Features:
    """Normalized mel spectrogram, [num_frames x n_mels]."""

    frames: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def load_audio(path) -> Waveform:
    """Read a RIFF/WAVE file (PCM or IEEE float), averaging channels to mono.

    Integer samples are scaled by 1/32768 (16-bit) or the matching power of
    two so the result lies in [-1, 1].
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise AudioError(f"cannot read {path}: file not found")
    except Exception as exc:
        raise AudioError(f"malformed WAV file {path}: {exc}") from exc
    if data.ndim == 2:
        data = data.mean(axis=1)
    elif data.ndim != 1:
        raise AudioError(f"malformed WAV file {path}: unsupported shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported WAV sample format {data.dtype} in {path}")
    if samples.size and not np.all(np.isfinite(samples)):
        raise AudioError(f"malformed WAV file {path}: non-finite samples")
    return Waveform(samples, int(rate))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited resampling (windowed-sinc polyphase, Kaiser beta=8).

    Output length is round(len * target / source). Returns the input
    unchanged when the rate already matches.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if w.sample_rate == target_rate:
        return w
    if w.samples.size == 0:
        return Waveform(w.samples.copy(), target_rate)
    up = target_rate // math.gcd(w.sample_rate, target_rate)
    down = w.sample_rate // math.gcd(w.sample_rate, target_rate)
    out = resample_poly(
        w.samples, up, down, window=_resample_filter(up, down), padtype="line"
    )
    n_out = int(round(w.samples.size * target_rate / w.sample_rate))
    return Waveform(out[:n_out], target_rate)


@lru_cache(maxsize=32)
def _resample_filter(up: int, down: int, taps_per_phase: int = 32, beta: float = 8.0):
    # Designed at the upsampled rate; resample_poly applies the gain factor.
    max_rate = max(up, down)
    half_len = (taps_per_phase * max_rate) // 2
    return firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", beta))


def stft_power(w: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Power spectrogram [num_frames x (fft_size/2+1)], periodic Hann window.

    Frame t covers samples [t*hop, t*hop + fft_size); num_frames is
    floor((N - fft_size)/hop) + 1.
    """
    x = w.samples
    if x.size < cfg.fft_size:
        raise AudioError(
            f"utterance too short: {x.size} samples < one window of {cfg.fft_size}"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size)[:: cfg.hop]
    window = _hann_periodic(cfg.fft_size)
    spec = np.fft.rfft(frames * window, axis=1)
    return spec.real**2 + spec.imag**2


@lru_cache(maxsize=8)
def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Filterbank matrix [n_mels x n_bins]; every row has positive weight."""
    n_bins = fft_size // 2 + 1
    nyquist = sample_rate / 2.0
    df = sample_rate / fft_size
    corners = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_mels + 2))
    centers = np.arange(n_bins) * df
    band_lo = np.clip(centers - df / 2.0, 0.0, nyquist)
    band_hi = np.clip(centers + df / 2.0, 0.0, nyquist)
    fb = np.empty((n_mels, n_bins))
    for m in range(n_mels):
        f0, f1, f2 = corners[m], corners[m + 1], corners[m + 2]
        area = _ramp_area(band_lo, band_hi, f0, f1, rising=True)
        area += _ramp_area(band_lo, band_hi, f1, f2, rising=False)
        fb[m] = area / np.maximum(band_hi - band_lo, 1e-12)
    return fb


def _ramp_area(lo, hi, a, b, rising):
    """Integral of the ramp between corner frequencies a < b over [lo, hi]."""
    x0 = np.clip(lo, a, b)
    x1 = np.clip(hi, a, b)
    span = max(b - a, 1e-12)
    if rising:
        return ((x1 - a) ** 2 - (x0 - a) ** 2) / (2.0 * span)
    return ((b - x0) ** 2 - (b - x1) ** 2) / (2.0 * span)


def mel_project(power: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Project a power spectrogram onto the mel filterbank."""
    if power.shape[1] != cfg.n_bins:
        raise ValueError(
            f"expected {cfg.n_bins} spectrum bins, got {power.shape[1]}"
        )
    fb = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate)
    return power @ fb.T


def normalize(mel: np.ndarray) -> Features:
    """Per-utterance normalization to mean 0, population std 1.

    Yields all zeros when the input is (numerically) constant.
    """
    mean = mel.mean()
    std = mel.std()
    if std < 1e-10:
        return Features(np.zeros_like(mel, dtype=np.float64))
    return Features((mel - mean) / std)


def extract_features(w: Waveform, cfg: FrontendConfig) -> Features:
    """Full chain: resample -> STFT power -> mel -> normalize."""
    w = resample(w, cfg.sample_rate)
    return normalize(mel_project(stft_power(w, cfg), cfg))


# ---------------------------------------------------------------------------
# Dataset manifests (UTF-8 JSON Lines: {"audio": path, "text": transcript})


@dataclass(frozen=True)
class ManifestEntry:
    audio: str
    text: str


@dataclass
class FilterReport:
    kept: int = 0
    too_long: int = 0
    empty_transcript: int = 0
    unreadable: int = 0
    removed: list = field(default_factory=list)  # (entry, reason) pairs

    def as_dict(self) -> dict:
        return {
            "kept": self.kept,
            "too_long": self.too_long,
            "empty_transcript": self.empty_transcript,
            "unreadable": self.unreadable,
        }


def load_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "audio" not in obj or "text" not in obj:
                raise ValueError(f"{path}:{lineno}: entry needs 'audio' and 'text'")
            text = unicodedata.normalize("NFC", str(obj["text"]))
            entries.append(ManifestEntry(str(obj["audio"]), text))
    return entries


def save_manifest(entries, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({"audio": e.audio, "text": e.text}, ensure_ascii=False))
            fh.write("\n")


def filter_dataset(entries, cfg: FrontendConfig, base_dir=None):
    """Drop over-long, empty-transcript, and unreadable utterances.

    Problems are reported, never raised. Returns (kept_entries, FilterReport).
    """
    base = Path(base_dir) if base_dir else None
    kept = []
    report = FilterReport()
    for e in entries:
        if not e.text.strip():
            report.empty_transcript += 1
            report.removed.append((e, "empty transcript"))
            continue
        path = base / e.audio if base and not Path(e.audio).is_absolute() else e.audio
        try:
            w = load_audio(path)
        except AudioError:
            report.unreadable += 1
            report.removed.append((e, "unreadable audio"))
            continue
        if w.duration_s > cfg.max_duration_s:
            report.too_long += 1
            report.removed.append((e, "too long"))
            continue
        kept.append(e)
    report.kept = len(kept)
    return kept, report
