"""Transfer mechanics: freeze masks, selective reinitialization, checkpoints.

Checkpoint file layout (little-endian throughout):

    bytes 0..3    magic  b"CASR"
    bytes 4..7    format version (uint32, currently 1)
    bytes 8..15   payload length (uint64)
    bytes 16..19  CRC32 of the payload (uint32)
    payload:
        uint32 header length, then that many bytes of UTF-8 JSON holding the
        model config, the alphabet, the training step counter, and the Adam
        metadata (hyperparameters plus the list of trainable layer indices),
        followed by raw float32 tensors in declared order: per layer the
        weights [out][in][kw] then the bias, then, when Adam state is
        present, per trainable layer m_w, v_w, m_b, v_b.

Tensors are stored in single precision; a load(save(x)) round trip is
bit-identical for float32 parameters.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .net import (
    Alphabet,
    LayerSpec,
    ModelConfig,
    ModelParams,
    _draw_layer,
)
from .optim import AdamConfig, AdamSlot, AdamState

MAGIC = b"CASR"
VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class FreezeMask:
    """The lowest k layers are frozen; the remaining ones train."""

    k: int
    num_layers: int

    def __post_init__(self):
        if not 0 <= self.k <= self.num_layers:
            raise ValueError(
                f"k must be in [0, {self.num_layers}], got {self.k}"
            )

    def is_frozen(self, layer_index: int) -> bool:
        return layer_index < self.k

    def trainable_indices(self) -> list[int]:
        return list(range(self.k, self.num_layers))

    def frozen_indices(self) -> list[int]:
        return list(range(self.k))


def make_freeze_mask(config: ModelConfig, k: int) -> FreezeMask:
    return FreezeMask(k, config.num_layers)


def reinit_layers(params: ModelParams, layer_indices, seed: int) -> ModelParams:
    """Redraw the named layers Xavier-uniform (zero biases), keep the rest.

    Uses the same per-layer streams as init_xavier, so reinitializing every
    layer reproduces init_xavier(config, alphabet, seed) exactly.
    """
    indices = set(int(i) for i in layer_indices)
    for i in indices:
        if not 0 <= i < params.config.num_layers:
            raise ValueError(f"layer index {i} out of range")
    out = params.copy()
    for i in indices:
        spec = params.config.layers[i]
        out.weights[i] = _draw_layer(spec, seed, i, params.dtype)
        out.biases[i] = np.zeros(spec.out_channels, dtype=params.dtype)
    return out


def save_checkpoint(params: ModelParams, path, adam_state: AdamState | None = None,
                    step: int = 0):
    header = {
        "config": {
            "n_mels": params.config.n_mels,
            "layers": [
                [s.kernel_width, s.stride, s.in_channels, s.out_channels, s.activation]
                for s in params.config.layers
            ],
        },
        "alphabet": list(params.alphabet.labels),
        "step": int(step),
        "adam": None,
    }
    if adam_state is not None:
        c = adam_state.config
        header["adam"] = {
            "t": adam_state.t,
            "lr": c.lr,
            "beta1": c.beta1,
            "beta2": c.beta2,
            "eps": c.eps,
            "layers": sorted(adam_state.slots),
        }
    json_block = json.dumps(header, ensure_ascii=False).encode("utf-8")
    parts = [struct.pack("<I", len(json_block)), json_block]
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    if adam_state is not None:
        for i in sorted(adam_state.slots):
            slot = adam_state.slots[i]
            for arr in (slot.m_w, slot.v_w, slot.m_b, slot.v_b):
                parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(struct.pack("<I", zlib.crc32(payload)))
        fh.write(payload)


@dataclass
class LoadedCheckpoint:
    params: ModelParams
    adam_state: AdamState | None
    step: int


def load_checkpoint(path) -> LoadedCheckpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version {version} not supported (expected {VERSION})"
        )
    (payload_len,) = struct.unpack("<Q", raw[8:16])
    (crc,) = struct.unpack("<I", raw[16:20])
    payload = raw[20:]
    if len(payload) != payload_len or zlib.crc32(payload) != crc:
        raise CheckpointError(f"corrupt checkpoint: {path} fails its checksum")
    (header_len,) = struct.unpack("<I", payload[:4])
    try:
        header = json.loads(payload[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc

    layers = tuple(
        LayerSpec(kw, st, ic, oc, act)
        for kw, st, ic, oc, act in header["config"]["layers"]
    )
    config = ModelConfig(layers, header["config"]["n_mels"])
    alphabet = Alphabet(tuple(header["alphabet"]))

    offset = 4 + header_len

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        return arr.reshape(shape).copy()

    weights, biases = [], []
    for s in layers:
        weights.append(take((s.out_channels, s.in_channels, s.kernel_width)))
        biases.append(take((s.out_channels,)))
    params = ModelParams(weights, biases, alphabet, config)

    adam_state = None
    if header["adam"] is not None:
        meta = header["adam"]
        cfg = AdamConfig(meta["lr"], meta["beta1"], meta["beta2"], meta["eps"])
        slots = {}
        for i in meta["layers"]:
            s = layers[i]
            w_shape = (s.out_channels, s.in_channels, s.kernel_width)
            slots[i] = AdamSlot(
                take(w_shape), take(w_shape), take((s.out_channels,)),
                take((s.out_channels,)),
            )
        adam_state = AdamState(cfg, meta["t"], slots)
    if offset != len(payload):
        raise CheckpointError(f"corrupt checkpoint: {path} has trailing bytes")
    return LoadedCheckpoint(params, adam_state, header["step"])
