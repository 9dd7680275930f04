"""Levenshtein edit distance and letter/word error rates.

LER divides the character-level distance by the reference length in
characters; WER divides the word-level distance (whitespace tokens) by the
reference word count. Rates may exceed 1 for insertion-heavy hypotheses.
Corpus scores are reported both as the unweighted mean of per-utterance
rates (the headline number) and as pooled edit counts over pooled reference
lengths.
"""

from __future__ import annotations

from dataclasses import dataclass


def edit_distance(a, b) -> int:
    """Minimum insertions + deletions + substitutions turning a into b."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (ca != cb),
            ))
        prev = cur
    return prev[-1]


def ler(ref: str, hyp: str) -> float:
    if not ref:
        raise ValueError("reference must be non-empty")
    return edit_distance(ref, hyp) / len(ref)


def wer(ref: str, hyp: str) -> float:
    ref_words = ref.split()
    if not ref_words:
        raise ValueError("reference must contain at least one word")
    return edit_distance(ref_words, hyp.split()) / len(ref_words)


@dataclass(frozen=True)
class CorpusScore:
    mean_ler: float
    mean_wer: float
    pooled_ler: float
    pooled_wer: float
    count: int


def corpus_score(pairs) -> CorpusScore:
    """Aggregate (ref, hyp) pairs; mean of rates plus pooled-edit rates."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no utterances to score")
    lers, wers = [], []
    char_edits = char_total = word_edits = word_total = 0
    for ref, hyp in pairs:
        lers.append(ler(ref, hyp))
        wers.append(wer(ref, hyp))
        char_edits += edit_distance(ref, hyp)
        char_total += len(ref)
        word_edits += edit_distance(ref.split(), hyp.split())
        word_total += len(ref.split())
    return CorpusScore(
        mean_ler=sum(lers) / len(lers),
        mean_wer=sum(wers) / len(wers),
        pooled_ler=char_edits / char_total,
        pooled_wer=word_edits / word_total,
        count=len(pairs),
    )
