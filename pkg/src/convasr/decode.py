"""Greedy and prefix beam-search decoding with n-gram LM fusion.

The beam search tracks collapsed prefixes, not paths: hypotheses whose paths
collapse to the same grapheme sequence are merged by summing their
probabilities, split into the usual blank-ending / non-blank-ending pair so
repeat characters stay distinguishable from merged ones.

A hypothesis is ranked by a single log10-domain total:

    total = logsumexp(p_blank, p_nonblank) / ln(10)
          + w_lm * sum_i log10 P_lm(word_i | history_i)
          + w_valid_word * #{completed words found in the LM vocabulary}

Words are completed when a space is emitted and once more at the end of the
utterance for a trailing partial word. LM histories start at <s> and keep
the last order-1 completed words; consecutive spaces complete nothing.
The exhaustive oracle enumerates every path, aggregates by collapsed
transcript, and applies the identical scoring, which pins these semantics.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .ctc import collapse
from .lm import SENT_START, NGramModel, log_prob_backoff
from .net import Alphabet

LN10 = math.log(10.0)
NEG_INF = -np.inf


@dataclass(frozen=True)
class DecoderConfig:
    beam_width: int = 64
    w_lm: float = 0.8
    w_valid_word: float = 2.3
    lm: NGramModel | None = None

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if not (math.isfinite(self.w_lm) and math.isfinite(self.w_valid_word)):
            raise ValueError("decoder weights must be finite")


@dataclass(frozen=True)
class ScoreBreakdown:
    transcript: str
    acoustic_log10: float
    lm_log10: float
    valid_words: int
    total_log10: float


def greedy_decode(log_probs, alphabet: Alphabet, length: int | None = None) -> str:
    """Per-frame argmax path, collapsed. Ties go to the lowest class index."""
    y = np.asarray(log_probs)
    if length is not None:
        y = y[:length]
    path = np.argmax(y, axis=1)
    return alphabet.decode(collapse(path, alphabet.blank))


@dataclass(frozen=True)
class _Beam:
    prefix: tuple  # collapsed label indices
    p_b: float  # ln prob of paths ending in blank
    p_nb: float  # ln prob of paths ending in the last prefix label
    pending: tuple  # label indices since the last space
    history: tuple  # last completed words, <= order-1, starts at <s>
    lm_log10: float
    valid_words: int


def _word_update(pending, history, lm_log10, valid_words, alphabet, cfg):
    """Complete the pending word; returns updated (history, lm, valid)."""
    if not pending:
        return history, lm_log10, valid_words
    word = alphabet.decode(pending)
    if cfg.lm is not None:
        lm_log10 += log_prob_backoff(cfg.lm, word, history)
        if word in cfg.lm.vocab:
            valid_words += 1
        order = cfg.lm.order
        history = (history + (word,))[-(order - 1):] if order > 1 else ()
    return history, lm_log10, valid_words


def _extend_fields(beam: _Beam, label: int, space: int | None, alphabet, cfg):
    """LM bookkeeping for prefix + label; fields depend only on the prefix."""
    if space is not None and label == space:
        history, lm_log10, valid = _word_update(
            beam.pending, beam.history, beam.lm_log10, beam.valid_words,
            alphabet, cfg,
        )
        return (), history, lm_log10, valid
    return beam.pending + (label,), beam.history, beam.lm_log10, beam.valid_words


def _total_log10(p_b, p_nb, lm_log10, valid_words, cfg) -> float:
    return (
        np.logaddexp(p_b, p_nb) / LN10
        + cfg.w_lm * lm_log10
        + cfg.w_valid_word * valid_words
    )


def _finalize(beam: _Beam, alphabet, cfg) -> ScoreBreakdown:
    history, lm_log10, valid = _word_update(
        beam.pending, beam.history, beam.lm_log10, beam.valid_words, alphabet, cfg
    )
    acoustic = float(np.logaddexp(beam.p_b, beam.p_nb) / LN10)
    total = acoustic + cfg.w_lm * lm_log10 + cfg.w_valid_word * valid
    return ScoreBreakdown(
        alphabet.decode(beam.prefix), acoustic, lm_log10, valid, float(total)
    )


def beam_search_decode(
    log_probs, alphabet: Alphabet, cfg: DecoderConfig, length: int | None = None
):
    """Prefix beam search; returns (transcript, ScoreBreakdown).

    Ranking uses the documented log10 total; ties break lexicographically on
    the transcript, which makes decoding deterministic.
    """
    y = np.asarray(log_probs, dtype=np.float64)
    if length is not None:
        y = y[:length]
    space = alphabet.index(" ") if " " in alphabet.labels else None
    labels = range(len(alphabet.labels))

    start = _Beam((), 0.0, NEG_INF, (), (SENT_START,), 0.0, 0)
    beams: dict[tuple, _Beam] = {(): start}

    for t in range(y.shape[0]):
        frame = y[t]
        blank_lp = frame[alphabet.blank]
        nxt: dict[tuple, list] = {}

        def slot(prefix, template: _Beam):
            entry = nxt.get(prefix)
            if entry is None:
                entry = [NEG_INF, NEG_INF, template]
                nxt[prefix] = entry
            return entry

        for beam in beams.values():
            p_tot = np.logaddexp(beam.p_b, beam.p_nb)
            # stay on the same prefix via blank
            entry = slot(beam.prefix, beam)
            entry[0] = np.logaddexp(entry[0], p_tot + blank_lp)
            # stay via a repeat of the final label (collapses into it)
            if beam.prefix:
                last = beam.prefix[-1]
                entry[1] = np.logaddexp(entry[1], beam.p_nb + frame[last])
            for c in labels:
                lp = frame[c]
                if lp == NEG_INF:
                    continue
                # extending with the final label needs a blank in between,
                # so only blank-ending paths contribute
                src = beam.p_b if (beam.prefix and c == beam.prefix[-1]) else p_tot
                if src == NEG_INF:
                    continue
                new_prefix = beam.prefix + (c,)
                if new_prefix in nxt:
                    entry = nxt[new_prefix]
                else:
                    pending, history, lm_log10, valid = _extend_fields(
                        beam, c, space, alphabet, cfg
                    )
                    template = _Beam(
                        new_prefix, NEG_INF, NEG_INF, pending, history,
                        lm_log10, valid,
                    )
                    entry = slot(new_prefix, template)
                entry[1] = np.logaddexp(entry[1], src + lp)

        merged = [
            replace(tpl, p_b=p_b, p_nb=p_nb) for (p_b, p_nb, tpl) in nxt.values()
        ]
        merged.sort(
            key=lambda b: (
                -_total_log10(b.p_b, b.p_nb, b.lm_log10, b.valid_words, cfg),
                alphabet.decode(b.prefix),
            )
        )
        beams = {b.prefix: b for b in merged[: cfg.beam_width]}

    scored = [_finalize(b, alphabet, cfg) for b in beams.values()]
    scored.sort(key=lambda s: (-s.total_log10, s.transcript))
    best = scored[0]
    return best.transcript, best


def exhaustive_oracle(
    log_probs, alphabet: Alphabet, cfg: DecoderConfig,
    length: int | None = None, guard: int = 10**6,
):
    """Enumerate all paths, aggregate by collapsed transcript, score like the
    beam search; returns (transcript, ScoreBreakdown)."""
    y = np.asarray(log_probs, dtype=np.float64)
    if length is not None:
        y = y[:length]
    t_len, n_classes = y.shape
    if n_classes**t_len > guard:
        raise ValueError(f"{n_classes}^{t_len} paths exceed the guard of {guard}")

    acoustic: dict[tuple, float] = {}
    for path in itertools.product(range(n_classes), repeat=t_len):
        lp = sum(y[t, c] for t, c in enumerate(path))
        key = tuple(collapse(path, alphabet.blank))
        acoustic[key] = np.logaddexp(acoustic.get(key, NEG_INF), lp)

    space = alphabet.index(" ") if " " in alphabet.labels else None
    best = None
    for prefix, ln_p in acoustic.items():
        history: tuple = (SENT_START,)
        lm_log10, valid = 0.0, 0
        if space is None:
            groups = [prefix] if prefix else []
        else:
            groups = []
            run: list = []
            for c in prefix:
                if c == space:
                    groups.append(tuple(run))
                    run = []
                else:
                    run.append(c)
            groups.append(tuple(run))
        for g in groups:
            history, lm_log10, valid = _word_update(
                g, history, lm_log10, valid, alphabet, cfg
            )
        total = ln_p / LN10 + cfg.w_lm * lm_log10 + cfg.w_valid_word * valid
        cand = ScoreBreakdown(
            alphabet.decode(prefix), float(ln_p / LN10), lm_log10, valid,
            float(total),
        )
        if (
            best is None
            or cand.total_log10 > best.total_log10
            or (cand.total_log10 == best.total_log10
                and cand.transcript < best.transcript)
        ):
            best = cand
    return best.transcript, best
