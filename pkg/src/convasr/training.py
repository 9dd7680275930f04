"""Manifest-driven training: batching, the train loop, transfer runs, evaluation.

Batches are duration-bucketed to limit padding waste: samples are sorted by
frame count, shuffled inside buckets of a few batch sizes, cut into batches,
and the batch order is shuffled, all from a seeded RNG. Every non-skipped
utterance appears in exactly one batch per epoch.

The loss log is an append-only CSV with one row per step:
step, wall_seconds (cumulative), batch_loss, k.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ctc, net
from .decode import DecoderConfig, beam_search_decode, greedy_decode
from .frontend import (
    AudioError,
    FrontendConfig,
    extract_features,
    load_audio,
    load_manifest,
)
from .metrics import corpus_score, ler, wer
from .net import Alphabet, BufferMeter, ModelParams
from .optim import AdamConfig, AdamState, adam_step
from .transfer import FreezeMask, load_checkpoint, make_freeze_mask, save_checkpoint


@dataclass
class Sample:
    audio: str
    text: str
    features: np.ndarray  # [T, n_mels]
    label: list


@dataclass
class TrainingConfig:
    batch_size: int = 64
    epochs: int = 1
    max_steps: int | None = None
    lr: float = 1e-4
    seed: int = 0
    k: int = 0
    checkpoint_every: int = 0  # steps between checkpoints; 0 = final only
    dtype: str = "float32"

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class TrainResult:
    params: ModelParams
    adam_state: AdamState
    steps: int
    losses: list
    skipped_infeasible: int
    checkpoints: list = field(default_factory=list)


def load_samples(manifest_path, cfg: FrontendConfig, alphabet: Alphabet,
                 base_dir=None):
    """Extract features and encode transcripts for every manifest entry.

    Problem utterances are skipped and returned as (entry, reason) pairs.
    """
    entries = load_manifest(manifest_path)
    base = Path(base_dir) if base_dir is not None else Path(manifest_path).parent
    samples, skipped = [], []
    for e in entries:
        path = Path(e.audio)
        if not path.is_absolute():
            path = base / path
        try:
            w = load_audio(path)
            feats = extract_features(w, cfg)
        except AudioError as exc:
            skipped.append((e, str(exc)))
            continue
        try:
            label = alphabet.encode(e.text)
        except ValueError as exc:
            skipped.append((e, str(exc)))
            continue
        samples.append(Sample(e.audio, e.text, feats.frames, label))
    return samples, skipped


def screen_feasible(samples, config: net.ModelConfig):
    """Drop samples whose labels cannot align to their output frames."""
    kept, skipped = [], 0
    min_in = net.min_input_length(config)
    for s in samples:
        if s.features.shape[0] < min_in:
            skipped += 1
            continue
        t_out = net.output_length(s.features.shape[0], config)
        if t_out < max(ctc.min_frames(s.label), 1) or not s.label:
            skipped += 1
            continue
        kept.append(s)
    return kept, skipped


def make_batches(samples, batch_size: int, rng, bucket_batches: int = 4):
    """Duration-bucketed batch index lists, shuffled by the given RNG."""
    order = np.argsort([s.features.shape[0] for s in samples], kind="stable")
    bucket = batch_size * bucket_batches
    order = order.copy()
    for start in range(0, len(order), bucket):
        rng.shuffle(order[start : start + bucket])
    batches = [
        order[i : i + batch_size].tolist()
        for i in range(0, len(order), batch_size)
    ]
    rng.shuffle(batches)
    return batches


def _batch_arrays(samples, indices, dtype):
    lengths = np.array([samples[i].features.shape[0] for i in indices])
    n_mels = samples[indices[0]].features.shape[1]
    feats = np.zeros((len(indices), lengths.max(), n_mels), dtype=dtype)
    for row, i in enumerate(indices):
        feats[row, : lengths[row]] = samples[i].features
    labels = [samples[i].label for i in indices]
    return feats, lengths, labels


def train_step(params, mask, state, feats, lengths, labels, meter=None):
    """One forward/CTC/backward/Adam update. Returns (mean loss, n used)."""
    result = net.forward(
        params, feats, lengths, keep_cache=True, freeze_boundary=mask.k,
        meter=meter,
    )
    grad = np.zeros_like(result.log_probs)
    losses = []
    for i, label in enumerate(labels):
        t_out = int(result.out_lengths[i])
        loss_i, grad_i = ctc.ctc_loss_grad(result.log_probs[i, :t_out], label)
        grad[i, :t_out] = grad_i
        losses.append(loss_i)
    grad /= len(labels)
    grads = net.backward(params, result.cache, grad, mask, meter=meter)
    adam_step(params, grads, state)
    return float(np.mean(losses)), len(labels)


class LossLog:
    """Append-only per-step CSV: step, wall_seconds, batch_loss, k."""

    def __init__(self, path):
        self.path = Path(path)
        new = not self.path.exists()
        self._fh = open(self.path, "a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(["step", "wall_seconds", "batch_loss", "k"])
            self._fh.flush()

    def write(self, step, wall_seconds, batch_loss, k):
        self._writer.writerow(
            [step, f"{wall_seconds:.4f}", f"{batch_loss:.6f}", k]
        )
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_loss_log(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        (int(r["step"]), float(r["wall_seconds"]), float(r["batch_loss"]), int(r["k"]))
        for r in rows
    ]


def train(
    params: ModelParams,
    samples,
    tcfg: TrainingConfig,
    log: LossLog | None = None,
    adam_state: AdamState | None = None,
    checkpoint_dir=None,
    start_step: int = 0,
    meter: BufferMeter | None = None,
) -> TrainResult:
    """Train in place over bucketed batches until epochs or max_steps run out."""
    mask = make_freeze_mask(params.config, tcfg.k)
    if not mask.trainable_indices():
        raise ValueError("no trainable layers: k equals the layer count")
    if params.dtype != tcfg.np_dtype:
        raise ValueError(
            f"params dtype {params.dtype} does not match training dtype {tcfg.dtype}"
        )
    usable, skipped = screen_feasible(samples, params.config)
    if not usable:
        raise ValueError("no trainable samples after feasibility screening")
    if adam_state is None:
        adam_state = AdamState.init(params, mask, AdamConfig(lr=tcfg.lr))

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(tcfg.seed)
    step = start_step
    losses = []
    checkpoints = []
    t0 = time.perf_counter()
    done = False
    for _epoch in range(tcfg.epochs):
        if done:
            break
        for indices in make_batches(usable, tcfg.batch_size, rng):
            feats, lengths, labels = _batch_arrays(usable, indices, tcfg.np_dtype)
            if meter is not None:
                meter.reset()
            loss, _ = train_step(
                params, mask, adam_state, feats, lengths, labels, meter=meter
            )
            step += 1
            losses.append(loss)
            if log is not None:
                log.write(step, time.perf_counter() - t0, loss, tcfg.k)
            if ckpt_dir and tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0:
                p = ckpt_dir / f"step{step:07d}.ckpt"
                save_checkpoint(params, p, adam_state, step)
                checkpoints.append(p)
            if tcfg.max_steps is not None and step - start_step >= tcfg.max_steps:
                done = True
                break
    if ckpt_dir:
        p = ckpt_dir / "final.ckpt"
        save_checkpoint(params, p, adam_state, step)
        checkpoints.append(p)
    return TrainResult(params, adam_state, step, losses, skipped, checkpoints)


def run_train(
    manifest_path,
    alphabet: Alphabet,
    model_config: net.ModelConfig,
    frontend_cfg: FrontendConfig,
    tcfg: TrainingConfig,
    log_path=None,
    checkpoint_dir=None,
    base_dir=None,
) -> TrainResult:
    """Fresh Xavier init, then train on the manifest."""
    samples, _ = load_samples(manifest_path, frontend_cfg, alphabet, base_dir)
    params = net.init_xavier(model_config, alphabet, tcfg.seed, tcfg.np_dtype)
    log = LossLog(log_path) if log_path else None
    try:
        return train(params, samples, tcfg, log, checkpoint_dir=checkpoint_dir)
    finally:
        if log:
            log.close()


def prepare_transfer(
    base_checkpoint,
    k: int,
    reinit: bool,
    new_labels,
    seed: int,
):
    """Load a checkpoint and adapt it: extend the alphabet, optionally
    reinitialize the trainable layers. Adam state starts fresh."""
    loaded = load_checkpoint(base_checkpoint)
    params = loaded.params
    if new_labels:
        params = net.extend_alphabet(params, tuple(new_labels))
    mask = make_freeze_mask(params.config, k)
    if not mask.trainable_indices():
        raise ValueError("no trainable layers: k equals the layer count")
    if reinit:
        params = reinit_unfrozen(params, mask, seed)
    return params, mask


def reinit_unfrozen(params, mask: FreezeMask, seed: int):
    from .transfer import reinit_layers

    return reinit_layers(params, mask.trainable_indices(), seed)


def run_transfer(
    base_checkpoint,
    k: int,
    reinit: bool,
    new_labels,
    manifest_path,
    frontend_cfg: FrontendConfig,
    tcfg: TrainingConfig,
    log_path=None,
    checkpoint_dir=None,
    base_dir=None,
) -> TrainResult:
    params, mask = prepare_transfer(base_checkpoint, k, reinit, new_labels, tcfg.seed)
    if params.dtype != tcfg.np_dtype:
        params = params.astype(tcfg.np_dtype)
    tcfg = replace(tcfg, k=k)
    samples, _ = load_samples(manifest_path, frontend_cfg, params.alphabet, base_dir)
    log = LossLog(log_path) if log_path else None
    try:
        return train(params, samples, tcfg, log, checkpoint_dir=checkpoint_dir)
    finally:
        if log:
            log.close()


@dataclass
class EvalRow:
    audio: str
    ref: str
    hyp_greedy: str
    ler_greedy: float
    wer_greedy: float
    hyp_beam: str
    ler_beam: float
    wer_beam: float
    loss: float


def evaluate_model(params, samples, dec_cfg: DecoderConfig, batch_size: int = 64):
    """Greedy and beam decoding plus CTC loss per utterance.

    Returns (rows, summary dict with corpus means for both decoders).
    """
    rows = []
    usable, _ = screen_feasible(samples, params.config)
    for start in range(0, len(usable), batch_size):
        chunk = usable[start : start + batch_size]
        feats, lengths, labels = _batch_arrays(
            chunk, list(range(len(chunk))), params.dtype
        )
        result = net.forward(params, feats, lengths)
        for i, s in enumerate(chunk):
            t_out = int(result.out_lengths[i])
            lp = result.log_probs[i, :t_out].astype(np.float64)
            hyp_g = greedy_decode(lp, params.alphabet)
            hyp_b, _ = beam_search_decode(lp, params.alphabet, dec_cfg)
            try:
                loss = ctc.ctc_loss(lp, s.label)
            except ctc.InfeasibleAlignmentError:
                loss = float("nan")
            rows.append(EvalRow(
                s.audio, s.text,
                hyp_g, ler(s.text, hyp_g), wer(s.text, hyp_g),
                hyp_b, ler(s.text, hyp_b), wer(s.text, hyp_b),
                loss,
            ))
    greedy_scores = corpus_score([(r.ref, r.hyp_greedy) for r in rows])
    beam_scores = corpus_score([(r.ref, r.hyp_beam) for r in rows])
    finite = [r.loss for r in rows if np.isfinite(r.loss)]
    summary = {
        "count": len(rows),
        "greedy": greedy_scores,
        "beam": beam_scores,
        "mean_loss": float(np.mean(finite)) if finite else float("nan"),
    }
    return rows, summary


def write_eval_report(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "audio", "ref", "hyp_greedy", "ler_greedy", "wer_greedy",
            "hyp_beam", "ler_beam", "wer_beam", "loss",
        ])
        for r in rows:
            writer.writerow([
                r.audio, r.ref, r.hyp_greedy, f"{r.ler_greedy:.6f}",
                f"{r.wer_greedy:.6f}", r.hyp_beam, f"{r.ler_beam:.6f}",
                f"{r.wer_beam:.6f}", f"{r.loss:.6f}",
            ])
