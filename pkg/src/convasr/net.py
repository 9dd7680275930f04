"""Convolutional acoustic model: 11 strided 1-D conv layers to per-frame log-probabilities.

All convolutions are valid (no padding); ReLU between layers, log-softmax over
classes at the top. The backward pass respects a freeze boundary: gradients are
produced only for layers above it and input-gradient propagation stops below
the lowest trainable layer. Activations are cached only where the backward
pass will need them, which is what makes freezing save per-step buffer memory.

Weight layout per layer is [out_channels, in_channels, kernel_width]; the
forward pass is cross-correlation: z[t, o] = sum_{c,j} W[o, c, j] * x[t*stride + j, c] + b[o].
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class Alphabet:
    """Ordered grapheme labels; the CTC blank takes the next index after them."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("alphabet labels must be unique")
        if any(not l for l in self.labels):
            raise ValueError("empty grapheme in alphabet")

    @property
    def blank(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.labels) + 1

    def __len__(self) -> int:
        return len(self.labels)

    def encode(self, text: str) -> list[int]:
        """Map text to label indices (greedy longest match for multi-char labels)."""
        text = unicodedata.normalize("NFC", text)
        by_len = sorted(self.labels, key=len, reverse=True)
        out = []
        i = 0
        while i < len(text):
            for lab in by_len:
                if text.startswith(lab, i):
                    out.append(self.index(lab))
                    i += len(lab)
                    break
            else:
                raise ValueError(f"grapheme {text[i]!r} not in alphabet")
        return out

    def decode(self, indices) -> str:
        return "".join(self.labels[i] for i in indices)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"label {label!r} not in alphabet") from None

    def extend(self, new_labels) -> "Alphabet":
        new_labels = tuple(new_labels)
        overlap = set(new_labels) & set(self.labels)
        if overlap:
            raise ValueError(f"labels already present: {sorted(overlap)}")
        return Alphabet(self.labels + new_labels)


ALPHABET_EN = Alphabet(tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "'"))
GERMAN_EXTRA_LABELS = ("ä", "ö", "ü", "ß")
ALPHABET_DE = ALPHABET_EN.extend(GERMAN_EXTRA_LABELS)


@dataclass(frozen=True)
class LayerSpec:
    kernel_width: int
    stride: int
    in_channels: int
    out_channels: int
    activation: str = "relu"

    def __post_init__(self):
        if min(self.kernel_width, self.stride, self.in_channels, self.out_channels) < 1:
            raise ValueError(f"layer dimensions must be positive: {self}")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple[LayerSpec, ...]
    n_mels: int

    def __post_init__(self):
        if not self.layers:
            raise ValueError("config needs at least one layer")
        if self.layers[0].in_channels != self.n_mels:
            raise ValueError("first layer in_channels must equal n_mels")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_channels != self.layers[i - 1].out_channels:
                raise ValueError(f"channel mismatch between layers {i} and {i + 1}")
        if self.layers[-1].activation != "none":
            raise ValueError("final layer must have activation 'none'")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_channels


def default_config(
    alphabet_size: int,
    n_mels: int = 128,
    base_channels: int = 250,
    expand_channels: int = 2000,
) -> ModelConfig:
    """The 11-layer architecture: one strided input conv, seven narrow convs,
    a wide context conv, and two 1x1 layers ending in the class head."""
    if alphabet_size < 2:
        raise ValueError("alphabet_size must be >= 2")
    layers = [LayerSpec(48, 2, n_mels, base_channels)]
    layers += [LayerSpec(7, 1, base_channels, base_channels) for _ in range(7)]
    layers += [
        LayerSpec(32, 1, base_channels, expand_channels),
        LayerSpec(1, 1, expand_channels, expand_channels),
        LayerSpec(1, 1, expand_channels, alphabet_size + 1, activation="none"),
    ]
    return ModelConfig(tuple(layers), n_mels)


def output_length(t_in: int, config: ModelConfig) -> int:
    """Frame count after the full stack of valid strided convolutions."""
    t = int(t_in)
    for i, spec in enumerate(config.layers):
        t = (t - spec.kernel_width) // spec.stride + 1
        if t < 1:
            raise ValueError(
                f"input of {t_in} frames is too short: layer {i + 1} "
                f"(kw={spec.kernel_width}, stride={spec.stride}) yields {t} frames"
            )
    return t


def min_input_length(config: ModelConfig) -> int:
    """Smallest input frame count for which every layer outputs >= 1 frame."""
    t = 1
    for spec in reversed(config.layers):
        t = (t - 1) * spec.stride + spec.kernel_width
    return t


@dataclass
class ModelParams:
    weights: list  # per layer [out, in, kw]
    biases: list  # per layer [out]
    alphabet: Alphabet
    config: ModelConfig

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.alphabet,
            self.config,
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.alphabet,
            self.config,
        )

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def xavier_bound(spec: LayerSpec) -> float:
    fan_in = spec.in_channels * spec.kernel_width
    fan_out = spec.out_channels * spec.kernel_width
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _draw_layer(spec: LayerSpec, seed: int, layer_index: int, dtype) -> np.ndarray:
    # Per-layer stream so reinitializing a subset reproduces the full init.
    rng = np.random.default_rng((seed, layer_index))
    bound = xavier_bound(spec)
    shape = (spec.out_channels, spec.in_channels, spec.kernel_width)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_xavier(
    config: ModelConfig, alphabet: Alphabet, seed: int, dtype=np.float32
) -> ModelParams:
    """Xavier-uniform weights, zero biases; deterministic for a fixed seed."""
    if config.num_classes != alphabet.num_classes:
        raise ValueError(
            f"config head has {config.num_classes} classes, "
            f"alphabet needs {alphabet.num_classes}"
        )
    weights, biases = [], []
    for i, spec in enumerate(config.layers):
        weights.append(_draw_layer(spec, seed, i, dtype))
        biases.append(np.zeros(spec.out_channels, dtype=dtype))
    return ModelParams(weights, biases, alphabet, config)


def extend_alphabet(params: ModelParams, new_labels) -> ModelParams:
    """Grow the class head for new labels with zero-initialized rows.

    Existing label rows keep their values and positions; the blank row moves
    to the new last index. Everything below the head is shared by reference.
    """
    alphabet = params.alphabet.extend(new_labels)
    n_new = len(new_labels)
    old_blank = params.alphabet.blank
    head_w, head_b = params.weights[-1], params.biases[-1]
    new_w = np.zeros(
        (head_w.shape[0] + n_new,) + head_w.shape[1:], dtype=head_w.dtype
    )
    new_b = np.zeros(head_b.shape[0] + n_new, dtype=head_b.dtype)
    new_w[:old_blank] = head_w[:old_blank]
    new_w[-1] = head_w[old_blank]
    new_b[:old_blank] = head_b[:old_blank]
    new_b[-1] = head_b[old_blank]
    spec = params.config.layers[-1]
    config = ModelConfig(
        params.config.layers[:-1]
        + (replace(spec, out_channels=spec.out_channels + n_new),),
        params.config.n_mels,
    )
    return ModelParams(
        params.weights[:-1] + [new_w],
        params.biases[:-1] + [new_b],
        alphabet,
        config,
    )


class BufferMeter:
    """Counts bytes of retained activations and gradient buffers per step.

    forward() reports every array it keeps for the backward pass; backward()
    reports every gradient buffer it allocates. Transient forward buffers
    that nothing retains are not counted (an allocator would recycle them).
    """

    def __init__(self):
        self.bytes = 0

    def add(self, *arrays):
        for a in arrays:
            self.bytes += a.nbytes

    def reset(self):
        self.bytes = 0


@dataclass
class ForwardCache:
    freeze_boundary: int
    inputs: dict  # layer index -> layer input (post-activation of the layer below)
    preacts: dict  # layer index -> pre-activation output
    log_probs: np.ndarray
    out_lengths: np.ndarray


@dataclass
class ForwardResult:
    log_probs: np.ndarray  # [B, T_out, num_classes]
    out_lengths: np.ndarray  # [B]
    cache: ForwardCache | None = None


@dataclass
class LayerGrad:
    weights: np.ndarray
    bias: np.ndarray


class Gradients:
    """Per-layer gradients; frozen layers hold None as an explicit marker."""

    def __init__(self, layers: list):
        self.layers = layers

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)

    def present_indices(self) -> list[int]:
        return [i for i, g in enumerate(self.layers) if g is not None]


def _conv_forward(x, w, b, stride):
    kw = w.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(x, kw, axis=1)[:, ::stride]
    bsz, t_out = win.shape[0], win.shape[1]
    flat = win.reshape(bsz, t_out, -1)
    return flat @ w.reshape(w.shape[0], -1).T + b


def forward(
    params: ModelParams,
    features,
    lengths=None,
    keep_cache: bool = False,
    freeze_boundary: int = 0,
    meter: BufferMeter | None = None,
) -> ForwardResult:
    """Run the conv stack and log-softmax over a zero-padded batch.

    features: [B, T, n_mels] (or [T, n_mels] for a single utterance);
    lengths: true frame counts per sequence (default: all T). Output frames
    at t >= out_lengths[i] correspond to padding and carry no meaning.

    With keep_cache, activations needed to backpropagate layers above
    freeze_boundary are retained (the input of the lowest trainable layer is
    the topmost frozen layer's output, so nothing below it is kept).
    """
    x = np.asarray(features)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != params.config.n_mels:
        raise ValueError(
            f"features must be [B, T, {params.config.n_mels}], got {x.shape}"
        )
    x = x.astype(params.dtype, copy=False)
    bsz, t_in = x.shape[0], x.shape[1]
    if lengths is None:
        lengths = np.full(bsz, t_in, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (bsz,) or np.any(lengths > t_in) or np.any(lengths < 1):
        raise ValueError("lengths must be in [1, T] with one entry per sequence")

    out_lengths = np.array(
        [output_length(int(n), params.config) for n in lengths], dtype=np.int64
    )

    k = freeze_boundary
    if not 0 <= k <= params.config.num_layers:
        raise ValueError(f"freeze_boundary {k} out of range")
    inputs: dict[int, np.ndarray] = {}
    preacts: dict[int, np.ndarray] = {}
    for i, spec in enumerate(params.config.layers):
        if x.shape[1] < spec.kernel_width:
            raise ValueError(
                f"input of {t_in} frames is too short for layer {i + 1}"
            )
        if keep_cache and i >= k:
            inputs[i] = x
        z = _conv_forward(x, params.weights[i], params.biases[i], spec.stride)
        if keep_cache and i >= k:
            preacts[i] = z
        x = np.maximum(z, 0) if spec.activation == "relu" else z

    # log-softmax over classes
    m = x.max(axis=2, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=2, keepdims=True))
    log_probs = x - lse

    cache = None
    if keep_cache:
        cache = ForwardCache(k, inputs, preacts, log_probs, out_lengths)
        if meter is not None:
            meter.add(*inputs.values(), *preacts.values(), log_probs)
    return ForwardResult(log_probs, out_lengths, cache)


def _conv_backward(x, w, stride, d_z, need_dx, meter=None):
    """Gradients of a conv layer given d(loss)/d(pre-activation)."""
    out_ch, in_ch, kw = w.shape
    bsz, t_out = d_z.shape[0], d_z.shape[1]
    win = np.lib.stride_tricks.sliding_window_view(x, kw, axis=1)[:, ::stride]
    win = win[:, :t_out]
    flat = win.reshape(bsz * t_out, in_ch * kw)
    d_zf = d_z.reshape(bsz * t_out, out_ch)
    d_w = (d_zf.T @ flat).reshape(out_ch, in_ch, kw)
    d_b = d_z.sum(axis=(0, 1))
    if meter is not None:
        meter.add(d_w, d_b)
    if not need_dx:
        return d_w, d_b, None
    dxw = (d_zf @ w.reshape(out_ch, in_ch * kw)).reshape(bsz, t_out, in_ch, kw)
    d_x = np.zeros_like(x)
    base = np.arange(t_out) * stride
    for j in range(kw):
        d_x[:, base + j] += dxw[:, :, :, j]
    if meter is not None:
        meter.add(dxw, d_x)
    return d_w, d_b, d_x


def backward(
    params: ModelParams,
    cache: ForwardCache,
    grad_log_probs,
    freeze_mask,
    meter: BufferMeter | None = None,
) -> Gradients:
    """Backpropagate d(loss)/d(log_probs) through the stack.

    freeze_mask needs attributes k and num_layers (see transfer.FreezeMask)
    and must match the boundary the cache was built with. Gradient rows for
    padding frames are assumed zero. Returns per-layer gradients with None
    for frozen layers.
    """
    k = freeze_mask.k
    n_layers = params.config.num_layers
    if getattr(freeze_mask, "num_layers", n_layers) != n_layers:
        raise ValueError("freeze mask layer count does not match the model")
    if cache.freeze_boundary != k:
        raise ValueError(
            f"cache was built for freeze boundary {cache.freeze_boundary}, "
            f"mask has k={k}"
        )
    if k >= n_layers:
        return Gradients([None] * n_layers)

    g = np.asarray(grad_log_probs, dtype=params.dtype)
    if g.shape != cache.log_probs.shape:
        raise ValueError("grad_log_probs shape does not match forward output")

    # log-softmax backward: dz = g - softmax * sum(g)
    d_z = g - np.exp(cache.log_probs) * g.sum(axis=2, keepdims=True)
    if meter is not None:
        meter.add(d_z)

    grads: list = [None] * n_layers
    for i in range(n_layers - 1, k - 1, -1):
        spec = params.config.layers[i]
        if i not in cache.preacts or i not in cache.inputs:
            raise ValueError(f"cache is missing layer {i + 1}; mask mismatch")
        if spec.activation == "relu":
            d_z = d_z * (cache.preacts[i] > 0)
            if meter is not None:
                meter.add(d_z)
        d_w, d_b, d_x = _conv_backward(
            cache.inputs[i], params.weights[i], spec.stride, d_z, need_dx=i > k,
            meter=meter,
        )
        grads[i] = LayerGrad(d_w, d_b)
        d_z = d_x
    return Gradients(grads)
