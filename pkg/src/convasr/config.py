"""Key-value configuration files with per-flag overrides.

The format is INI-style sections read by configparser:

    [model]
    alphabet = en              ; en | de | alpha | beta | chars:<graphemes>
    base_channels = 250
    expand_channels = 2000
    layers =                   ; optional "kw:stride:out ..." with the last
                               ; entry's out written as "head"
    [frontend]
    window_ms = 32
    stride_ms = 8
    fft_size = 512
    n_mels = 128
    sample_rate = 16000
    max_duration_s = 35
    [decoder]
    beam_width = 64
    w_lm = 0.8
    w_valid_word = 2.3
    [training]
    batch_size = 64
    epochs = 1
    max_steps =
    lr = 1e-4
    seed = 0
    k = 0
    checkpoint_every = 0

Every key can be overridden on the command line with --set section.key=value.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .frontend import FrontendConfig
from .net import ALPHABET_DE, ALPHABET_EN, Alphabet, LayerSpec, ModelConfig, default_config
from .training import TrainingConfig

DEFAULTS = {
    "model": {
        "alphabet": "en",
        "base_channels": "250",
        "expand_channels": "2000",
        "layers": "",
    },
    "frontend": {
        "window_ms": "32",
        "stride_ms": "8",
        "fft_size": "512",
        "n_mels": "128",
        "sample_rate": "16000",
        "max_duration_s": "35",
    },
    "decoder": {
        "beam_width": "64",
        "w_lm": "0.8",
        "w_valid_word": "2.3",
    },
    "training": {
        "batch_size": "64",
        "epochs": "1",
        "max_steps": "",
        "lr": "1e-4",
        "seed": "0",
        "k": "0",
        "checkpoint_every": "0",
    },
}


@dataclass
class AppConfig:
    alphabet: Alphabet
    model: ModelConfig
    frontend: FrontendConfig
    decoder_beam_width: int
    decoder_w_lm: float
    decoder_w_valid_word: float
    training: TrainingConfig


def build_alphabet(spec: str) -> Alphabet:
    spec = spec.strip()
    if spec == "en":
        return ALPHABET_EN
    if spec == "de":
        return ALPHABET_DE
    if spec in ("alpha", "beta"):
        from .synth import tone_language

        return tone_language(spec).alphabet
    if spec.startswith("chars:"):
        # "_" stands for the space grapheme; INI values cannot carry
        # trailing spaces
        chars = spec[len("chars:"):].replace("_", " ")
        return Alphabet(tuple(chars))
    raise ValueError(f"unknown alphabet spec {spec!r}")


def parse_layers(text: str, n_mels: int, alphabet_size: int) -> ModelConfig:
    """Parse "kw:stride:out ..." where the final out is the literal "head"."""
    parts = text.split()
    if not parts:
        raise ValueError("empty layers spec")
    specs = []
    in_ch = n_mels
    for i, part in enumerate(parts):
        try:
            kw_s, stride_s, out_s = part.split(":")
            kw, stride = int(kw_s), int(stride_s)
        except ValueError as exc:
            raise ValueError(f"bad layer spec {part!r} (want kw:stride:out)") from exc
        last = i == len(parts) - 1
        if last:
            if out_s != "head":
                raise ValueError("the final layer's out must be 'head'")
            out = alphabet_size + 1
        else:
            out = int(out_s)
        specs.append(LayerSpec(kw, stride, in_ch, out, "none" if last else "relu"))
        in_ch = out
    return ModelConfig(tuple(specs), n_mels)


def load_config(path=None, overrides=()) -> AppConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_dict(DEFAULTS)
    if path is not None:
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file {path} not found")
    for item in overrides:
        try:
            key, value = item.split("=", 1)
            section, option = key.split(".", 1)
        except ValueError as exc:
            raise ValueError(
                f"override {item!r} must look like section.key=value"
            ) from exc
        if section not in parser or option not in parser[section]:
            raise ValueError(f"unknown config key {section}.{option}")
        parser[section][option] = value

    fe = parser["frontend"]
    frontend = FrontendConfig(
        window_ms=fe.getint("window_ms"),
        stride_ms=fe.getint("stride_ms"),
        fft_size=fe.getint("fft_size"),
        n_mels=fe.getint("n_mels"),
        sample_rate=fe.getint("sample_rate"),
        max_duration_s=fe.getfloat("max_duration_s"),
    )
    alphabet = build_alphabet(parser["model"]["alphabet"])
    layers_text = parser["model"]["layers"].strip()
    if layers_text:
        model = parse_layers(layers_text, frontend.n_mels, len(alphabet))
    else:
        model = default_config(
            len(alphabet),
            n_mels=frontend.n_mels,
            base_channels=parser["model"].getint("base_channels"),
            expand_channels=parser["model"].getint("expand_channels"),
        )
    tr = parser["training"]
    max_steps = tr["max_steps"].strip()
    training = TrainingConfig(
        batch_size=tr.getint("batch_size"),
        epochs=tr.getint("epochs"),
        max_steps=int(max_steps) if max_steps else None,
        lr=tr.getfloat("lr"),
        seed=tr.getint("seed"),
        k=tr.getint("k"),
        checkpoint_every=tr.getint("checkpoint_every"),
    )
    dec = parser["decoder"]
    return AppConfig(
        alphabet=alphabet,
        model=model,
        frontend=frontend,
        decoder_beam_width=dec.getint("beam_width"),
        decoder_w_lm=dec.getfloat("w_lm"),
        decoder_w_valid_word=dec.getfloat("w_valid_word"),
        training=training,
    )
