import numpy as np
import pytest

from convasr import ctc
from convasr.net import (
    ALPHABET_DE,
    ALPHABET_EN,
    Alphabet,
    BufferMeter,
    LayerSpec,
    ModelConfig,
    ModelParams,
    backward,
    default_config,
    extend_alphabet,
    forward,
    init_xavier,
    min_input_length,
    output_length,
    xavier_bound,
)
from convasr.transfer import make_freeze_mask


def tiny_alphabet(n=3):
    return Alphabet(tuple("abcdefghij"[:n]))


def tiny_params(seed=0, dtype=np.float64, c=4):
    ab = tiny_alphabet(c - 1)
    cfg = ModelConfig(
        (LayerSpec(3, 2, 2, 5), LayerSpec(2, 1, 5, ab.num_classes, activation="none")),
        2,
    )
    return init_xavier(cfg, ab, seed, dtype)


# ---------------------------------------------------------------------------
# alphabets


def test_english_alphabet_has_28_labels():
    assert len(ALPHABET_EN) == 28
    assert ALPHABET_EN.blank == 28
    assert ALPHABET_EN.num_classes == 29


def test_german_alphabet_adds_four():
    assert len(ALPHABET_DE) == 32
    assert ALPHABET_DE.num_classes == 33
    assert ALPHABET_DE.labels[:28] == ALPHABET_EN.labels


def test_encode_decode_round_trip():
    text = "hello world's"
    assert ALPHABET_EN.decode(ALPHABET_EN.encode(text)) == text


def test_encode_rejects_unknown():
    with pytest.raises(ValueError, match="not in alphabet"):
        ALPHABET_EN.encode("ü")


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        Alphabet(("a", "a"))


# ---------------------------------------------------------------------------
# config / output_length


def test_default_config_shape():
    cfg = default_config(32)
    assert cfg.num_layers == 11
    assert cfg.layers[0].kernel_width == 48
    assert cfg.layers[0].stride == 2
    assert all(l.kernel_width == 7 for l in cfg.layers[1:8])
    assert cfg.layers[8].kernel_width == 32
    assert cfg.layers[-1].out_channels == 33
    assert cfg.layers[-1].activation == "none"
    assert all(l.activation == "relu" for l in cfg.layers[:-1])


def test_output_length_default_config():
    cfg = default_config(28)
    assert output_length(1000, cfg) == 404


def test_output_length_identity_layer():
    cfg = ModelConfig((LayerSpec(1, 1, 4, 3, activation="none"),), 4)
    assert output_length(77, cfg) == 77


def test_output_length_too_short_names_layer():
    cfg = default_config(28)
    # (100-48)//2+1 = 27 frames, then five kw=7 layers eat 6 each: the chain
    # dies at layer 6
    with pytest.raises(ValueError, match="layer 6"):
        output_length(100, cfg)


def test_min_input_length_consistent():
    cfg = default_config(28)
    m = min_input_length(cfg)
    assert output_length(m, cfg) >= 1
    with pytest.raises(ValueError):
        output_length(m - 1, cfg)


# ---------------------------------------------------------------------------
# init


def test_xavier_support_bound():
    params = tiny_params(seed=3)
    for w, spec in zip(params.weights, params.config.layers):
        bound = xavier_bound(spec)
        assert np.all(np.abs(w) < bound)
    assert all(np.all(b == 0) for b in params.biases)


def test_xavier_variance():
    cfg = ModelConfig(
        (LayerSpec(7, 1, 250, 250), LayerSpec(1, 1, 250, 4, activation="none")), 250
    )
    params = init_xavier(cfg, tiny_alphabet(3), 0)
    bound = xavier_bound(cfg.layers[0])
    var = params.weights[0].var()
    assert abs(var - bound**2 / 3) <= 0.1 * bound**2 / 3


def test_xavier_deterministic():
    a = tiny_params(seed=9)
    b = tiny_params(seed=9)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


# ---------------------------------------------------------------------------
# forward


def test_zero_params_give_uniform_log_probs():
    params = tiny_params()
    for w in params.weights:
        w[:] = 0
    r = forward(params, np.random.default_rng(0).normal(size=(2, 9, 2)))
    c = params.config.num_classes
    assert np.allclose(r.log_probs, -np.log(c), atol=1e-12)


def test_hand_convolution():
    ab = Alphabet(("a",))
    cfg = ModelConfig((LayerSpec(2, 1, 1, 2, activation="none"),), 1)
    params = ModelParams(
        [np.array([[[1.0, -1.0]], [[0.0, 0.0]]])],
        [np.zeros(2)],
        ab,
        cfg,
    )
    r = forward(params, np.array([[[3.0], [5.0], [2.0]]]))
    # class-0 logits are the hand convolution [-2, 3]; class 1 stays 0
    logits = r.log_probs[0, :, 0] - r.log_probs[0, :, 1]
    assert logits == pytest.approx([-2.0, 3.0])


def test_relu_applied_between_layers():
    ab = Alphabet(("a",))
    cfg = ModelConfig(
        (LayerSpec(2, 1, 1, 1), LayerSpec(1, 1, 1, 2, activation="none")), 1
    )
    params = ModelParams(
        [np.array([[[1.0, -1.0]]]), np.array([[[1.0]], [[-1.0]]])],
        [np.zeros(1), np.zeros(2)],
        ab,
        cfg,
    )
    r = forward(params, np.array([[[3.0], [5.0], [2.0]]]))
    # relu([-2, 3]) = [0, 3]; head logit diff = 2 * relu value
    diff = r.log_probs[0, :, 0] - r.log_probs[0, :, 1]
    assert diff == pytest.approx([0.0, 6.0])


def test_log_probs_normalized():
    params = tiny_params(seed=1)
    r = forward(params, np.random.default_rng(1).normal(size=(3, 11, 2)))
    lse = np.log(np.exp(r.log_probs).sum(axis=2))
    assert np.all(np.abs(lse) <= 1e-9)


def test_forward_deterministic():
    params = tiny_params(seed=2)
    x = np.random.default_rng(2).normal(size=(2, 13, 2))
    a = forward(params, x).log_probs
    b = forward(params, x).log_probs
    assert np.array_equal(a, b)


def test_padding_neutrality():
    params = tiny_params(seed=4)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 9, 2))
    base = forward(params, x)
    padded = np.concatenate([x, rng.normal(size=(1, 6, 2))], axis=1)
    r = forward(params, padded, lengths=np.array([9]))
    n = int(base.out_lengths[0])
    assert r.out_lengths[0] == n
    assert np.array_equal(r.log_probs[0, :n], base.log_probs[0, :n])


def test_forward_shape_mismatch():
    params = tiny_params()
    with pytest.raises(ValueError):
        forward(params, np.zeros((1, 9, 3)))


# ---------------------------------------------------------------------------
# backward / freezing


def batch_loss_and_grads(params, x, lengths, labels, k):
    mask = make_freeze_mask(params.config, k)
    r = forward(params, x, lengths, keep_cache=True, freeze_boundary=k)
    grad_lp = np.zeros_like(r.log_probs)
    total = 0.0
    for i, lab in enumerate(labels):
        t = int(r.out_lengths[i])
        loss, g = ctc.ctc_loss_grad(r.log_probs[i, :t], lab)
        grad_lp[i, :t] = g
        total += loss
    grad_lp /= len(labels)
    return total / len(labels), backward(params, r.cache, grad_lp, mask)


def test_all_frozen_gives_empty_gradients():
    params = tiny_params(seed=5)
    x = np.random.default_rng(5).normal(size=(1, 9, 2))
    _, grads = batch_loss_and_grads(params, x, np.array([9]), [[0, 1]], k=2)
    assert grads.present_indices() == []


def test_gradient_matches_finite_differences():
    params = tiny_params(seed=6)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 11, 2))
    lengths = np.array([11, 9])
    labels = [[0, 1, 0], [2]]

    def loss_fn():
        r = forward(params, x, lengths)
        return sum(
            ctc.ctc_loss(r.log_probs[i, : int(r.out_lengths[i])], lab)
            for i, lab in enumerate(labels)
        ) / len(labels)

    _, grads = batch_loss_and_grads(params, x, lengths, labels, k=0)
    h = 1e-5
    for li in grads.present_indices():
        for arr, g in (
            (params.weights[li], grads[li].weights),
            (params.biases[li], grads[li].bias),
        ):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                lp = loss_fn()
                arr[idx] = old - h
                lmn = loss_fn()
                arr[idx] = old
                fd = (lp - lmn) / (2 * h)
                rel = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-7)
                assert rel <= 1e-4


def test_freeze_keeps_unfrozen_grads_bit_identical():
    params = tiny_params(seed=7)
    x = np.random.default_rng(7).normal(size=(2, 11, 2))
    lengths = np.array([11, 11])
    labels = [[0], [1, 2]]
    _, g0 = batch_loss_and_grads(params, x, lengths, labels, k=0)
    _, g1 = batch_loss_and_grads(params, x, lengths, labels, k=1)
    assert g1[0] is None
    assert np.array_equal(g0[1].weights, g1[1].weights)
    assert np.array_equal(g0[1].bias, g1[1].bias)


def test_backward_mask_cache_mismatch():
    params = tiny_params(seed=8)
    x = np.random.default_rng(8).normal(size=(1, 9, 2))
    r = forward(params, x, keep_cache=True, freeze_boundary=1)
    grad = np.zeros_like(r.log_probs)
    with pytest.raises(ValueError, match="boundary"):
        backward(params, r.cache, grad, make_freeze_mask(params.config, 0))


def test_meter_counts_less_when_frozen():
    params = tiny_params(seed=9)
    x = np.random.default_rng(9).normal(size=(2, 15, 2))
    usage = {}
    for k in (0, 1):
        meter = BufferMeter()
        mask = make_freeze_mask(params.config, k)
        r = forward(params, x, keep_cache=True, freeze_boundary=k, meter=meter)
        grad = np.zeros_like(r.log_probs)
        backward(params, r.cache, grad, mask, meter=meter)
        usage[k] = meter.bytes
    assert usage[1] < usage[0]


# ---------------------------------------------------------------------------
# extend_alphabet


def test_extend_grows_head_29_to_33():
    cfg = default_config(28, base_channels=8, expand_channels=8)
    params = init_xavier(cfg, ALPHABET_EN, 0)
    out = extend_alphabet(params, ("ä", "ö", "ü", "ß"))
    assert out.config.num_classes == 33
    assert out.alphabet.blank == 32
    # old label rows and the blank row are bit-identical
    assert np.array_equal(out.weights[-1][:28], params.weights[-1][:28])
    assert np.array_equal(out.weights[-1][32], params.weights[-1][28])
    assert np.all(out.weights[-1][28:32] == 0)
    assert np.all(out.biases[-1][28:32] == 0)
    for i in range(10):
        assert out.weights[i] is params.weights[i]


def test_extend_rejects_duplicates():
    params = tiny_params()
    with pytest.raises(ValueError, match="already present"):
        extend_alphabet(params, ("a",))


def test_extended_labels_get_identical_probabilities():
    cfg = default_config(4, base_channels=6, expand_channels=6, n_mels=3)
    ab = Alphabet(tuple("abcd"))
    params = init_xavier(cfg, ab, 1)
    out = extend_alphabet(params, ("x", "y"))
    t = min_input_length(out.config)
    x = np.random.default_rng(10).normal(size=(1, t, 3))
    r = forward(out, x)
    new_rows = r.log_probs[0, :, 4:6]
    assert np.all(np.abs(new_rows[:, 0] - new_rows[:, 1]) <= 1e-7)


def test_extension_rescales_old_probabilities():
    params = tiny_params(seed=11, c=4)  # labels a,b,c + blank
    t = min_input_length(params.config)
    x = np.random.default_rng(11).normal(size=(1, t, 2))
    before = forward(params, x).log_probs[0]
    out = extend_alphabet(params, ("x", "y"))
    after = forward(out, x).log_probs[0]
    # softmax over the enlarged set rescales old probabilities by Z_old/Z_new;
    # in log space the shift is constant across old classes per frame
    shift = after[:, :3] - before[:, :3]
    assert np.allclose(shift, shift[:, :1], atol=1e-9)
    blank_shift = after[:, out.alphabet.blank] - before[:, params.alphabet.blank]
    assert np.allclose(blank_shift, shift[:, 0], atol=1e-9)
