"""Synthetic tone-language audio for desk-scale experiments.

Each grapheme of a language maps to a fixed pure-tone frequency; an
utterance renders its transcript as a sequence of short enveloped tones
(space is silence) plus background noise. The two built-in languages mirror
a close language pair: "beta" keeps the tones of the "alpha" graphemes it
shares (common letters sound alike) and adds four new graphemes on
interleaved frequency slots, while drawing its words from its own
vocabulary. Lower-layer features learned on alpha therefore carry over to
beta, which is what the transfer experiments rely on.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .frontend import ManifestEntry, Waveform, save_manifest
from .net import Alphabet

SAMPLE_RATE = 16000
BETA_EXTRA = ("ä", "ö", "ü", "ß")


@dataclass(frozen=True)
class ToneLanguage:
    name: str
    graphemes: tuple  # tone-carrying graphemes, in alphabet order
    frequencies: tuple  # Hz, one per grapheme
    vocab: tuple  # fixed word list

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.graphemes + (" ",))

    def frequency(self, grapheme: str) -> float:
        return self.frequencies[self.graphemes.index(grapheme)]


def _slot_hz(slot: int) -> float:
    return 380.0 + 140.0 * slot


def _make_vocab(name: str, graphemes, size: int = 24, weights=None) -> tuple:
    rng = np.random.default_rng(zlib.crc32(f"vocab:{name}".encode()))
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()
    words = []
    while len(words) < size:
        n = int(rng.integers(2, 6))
        word = "".join(rng.choice(list(graphemes), size=n, p=weights))
        if word not in words:
            words.append(word)
    return tuple(words)


def tone_language(name: str) -> ToneLanguage:
    if name == "alpha":
        graphemes = tuple("abcdefgh")
        freqs = tuple(_slot_hz(2 * i) for i in range(len(graphemes)))
        vocab = _make_vocab(name, graphemes)
    elif name == "beta":
        shared = tuple("abcdefgh")
        graphemes = shared + BETA_EXTRA
        freqs = tuple(_slot_hz(2 * i) for i in range(len(shared))) + tuple(
            _slot_hz(2 * i + 1) for i in range(len(BETA_EXTRA))
        )
        # the new graphemes are rare, like umlauts in running text
        weights = [1.0] * len(shared) + [0.15] * len(BETA_EXTRA)
        vocab = _make_vocab(name, graphemes, weights=weights)
    else:
        raise ValueError(f"unknown tone language {name!r}")
    return ToneLanguage(name, graphemes, freqs, vocab)


def render_utterance(
    lang: ToneLanguage,
    text: str,
    rng,
    grapheme_s: float = 0.12,
    noise: float = 0.01,
    edge_silence_s: float = 0.1,
    min_duration_s: float = 0.0,
    amplitude: float = 0.3,
) -> Waveform:
    """Render a transcript as enveloped tones with additive noise."""
    sr = SAMPLE_RATE
    n_tone = int(round(grapheme_s * sr))
    envelope = np.ones(n_tone)
    ramp = min(int(0.01 * sr), n_tone // 2)
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        envelope[:ramp] = fade
        envelope[-ramp:] = fade[::-1]
    pieces = [np.zeros(int(edge_silence_s * sr))]
    t = np.arange(n_tone) / sr
    for ch in text:
        if ch == " ":
            pieces.append(np.zeros(n_tone))
        else:
            f = lang.frequency(ch)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            pieces.append(amplitude * envelope * np.sin(2.0 * np.pi * f * t + phase))
    pieces.append(np.zeros(int(edge_silence_s * sr)))
    x = np.concatenate(pieces)
    if x.size < int(min_duration_s * sr):
        x = np.concatenate([x, np.zeros(int(min_duration_s * sr) - x.size)])
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.size)
    return Waveform(np.clip(x, -1.0, 1.0), sr)


def sample_transcript(lang: ToneLanguage, rng, words_range=(2, 4)) -> str:
    n = int(rng.integers(words_range[0], words_range[1] + 1))
    return " ".join(rng.choice(list(lang.vocab)) for _ in range(n))


def write_wav(path, w: Waveform):
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, w.sample_rate, pcm)


def generate_dataset(
    language: str,
    out_dir,
    count: int,
    seed: int = 0,
    words_range=(2, 4),
    grapheme_s: float = 0.12,
    noise: float = 0.01,
    min_duration_s: float = 0.0,
) -> Path:
    """Write `count` WAV files plus manifest.jsonl; returns the manifest path."""
    lang = tone_language(language)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        text = sample_transcript(lang, rng, words_range)
        w = render_utterance(
            lang, text, rng, grapheme_s=grapheme_s, noise=noise,
            min_duration_s=min_duration_s,
        )
        name = f"{language}_{i:05d}.wav"
        write_wav(out / name, w)
        entries.append(ManifestEntry(name, text))
    manifest = out / "manifest.jsonl"
    save_manifest(entries, manifest)
    return manifest
