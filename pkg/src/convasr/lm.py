"""Backoff word n-gram language model with ARPA text I/O.

All probabilities and backoff weights are base-10 logs, matching the ARPA
interchange format:

    \\data\\
    ngram 1=4
    ngram 2=3

    \\1-grams:
    -0.301030	the	-0.200000
    ...
    \\end\\

Each line is log10 prob, the n-gram tokens, and an optional backoff weight
(taken as 0.0 when absent). Scoring backs off recursively: if the full
n-gram is unknown, add the history's backoff weight and retry with the
shortened history. Out-of-vocabulary words map to <unk> when the model has
one, otherwise they score a flat floor.

`train_ngram` builds a model from tokenized text with add-k smoothing and
Katz-style backoff weights chosen so every observed history's conditional
distribution sums to one.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

SENT_START = "<s>"
SENT_END = "</s>"
UNK = "<unk>"
OOV_FLOOR = -10.0
LOG_ZERO = -99.0  # conventional stand-in for log10(0) in ARPA files


class ArpaParseError(Exception):
    pass


@dataclass
class NGramModel:
    order: int
    # tables[n-1]: word tuple of length n -> (log10 prob, log10 backoff)
    tables: list
    vocab: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.vocab:
            special = {SENT_START, SENT_END, UNK}
            self.vocab = frozenset(
                w for (w,) in self.tables[0] if w not in special
            )

    def lookup(self, ngram: tuple):
        table = self.tables[len(ngram) - 1] if len(ngram) <= self.order else None
        return table.get(ngram) if table is not None else None

    def has_unk(self) -> bool:
        return (UNK,) in self.tables[0]


def log_prob_backoff(model: NGramModel, word: str, history: tuple) -> float:
    """log10 P(word | history) with recursive backoff.

    history holds at most order-1 preceding words (longer ones are trimmed).
    """
    if model.order > 1:
        history = tuple(history)[-(model.order - 1):]
    else:
        history = ()
    if model.lookup((word,)) is None:
        if model.has_unk():
            word = UNK
        else:
            return OOV_FLOOR
    while True:
        entry = model.lookup(history + (word,))
        if entry is not None:
            return entry[0]
        if not history:
            raise AssertionError("unigram lookup cannot fail after OOV mapping")
        hist_entry = model.lookup(history)
        bow = hist_entry[1] if hist_entry is not None else 0.0
        return bow + log_prob_backoff(model, word, history[1:])


def score_sentence(model: NGramModel, words) -> float:
    """Sum of backoff log-probs over the words and the closing </s>."""
    history = (SENT_START,)
    total = 0.0
    for w in list(words) + [SENT_END]:
        total += log_prob_backoff(model, w, history)
        history = (history + (w,))[-(model.order - 1):] if model.order > 1 else ()
    return total


# ---------------------------------------------------------------------------
# ARPA I/O


def load_arpa(path) -> NGramModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    counts = {}
    i = 0
    while i < len(lines) and lines[i].strip() != "\\data\\":
        if lines[i].strip():
            raise ArpaParseError(f"{path}:{i + 1}: expected \\data\\ header")
        i += 1
    if i == len(lines):
        raise ArpaParseError(f"{path}: missing \\data\\ header")
    i += 1
    while i < len(lines) and lines[i].strip():
        line = lines[i].strip()
        if not line.startswith("ngram "):
            raise ArpaParseError(f"{path}:{i + 1}: malformed count line {line!r}")
        try:
            n, cnt = line[len("ngram "):].split("=")
            counts[int(n)] = int(cnt)
        except ValueError as exc:
            raise ArpaParseError(f"{path}:{i + 1}: malformed count line") from exc
        i += 1
    if not counts or sorted(counts) != list(range(1, max(counts) + 1)):
        raise ArpaParseError(f"{path}: ngram counts must cover orders 1..N")

    order = max(counts)
    tables = [dict() for _ in range(order)]
    seen_end = False
    current = None
    for lineno in range(i, len(lines)):
        line = lines[lineno].strip()
        if not line:
            continue
        if line == "\\end\\":
            seen_end = True
            current = None
            continue
        if line.startswith("\\") and line.endswith("-grams:"):
            try:
                current = int(line[1:-len("-grams:")])
            except ValueError as exc:
                raise ArpaParseError(f"{path}:{lineno + 1}: bad section {line!r}") from exc
            if current not in counts:
                raise ArpaParseError(
                    f"{path}:{lineno + 1}: section {current}-grams not declared"
                )
            continue
        if current is None:
            raise ArpaParseError(f"{path}:{lineno + 1}: entry outside any section")
        fields = line.split()
        if len(fields) < 1 + current:
            raise ArpaParseError(
                f"{path}:{lineno + 1}: {current}-gram entry needs "
                f"{1 + current} fields, got {len(fields)}"
            )
        try:
            prob = float(fields[0])
            backoff = float(fields[1 + current]) if len(fields) > 1 + current else 0.0
        except ValueError as exc:
            raise ArpaParseError(f"{path}:{lineno + 1}: bad number") from exc
        tables[current - 1][tuple(fields[1 : 1 + current])] = (prob, backoff)
    if not seen_end:
        raise ArpaParseError(f"{path}: missing \\end\\ marker")
    for n, declared in counts.items():
        if len(tables[n - 1]) != declared:
            raise ArpaParseError(
                f"{path}: declared {declared} {n}-grams, found {len(tables[n - 1])}"
            )
    return NGramModel(order, tables)


def save_arpa(model: NGramModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        for n in range(1, model.order + 1):
            fh.write(f"ngram {n}={len(model.tables[n - 1])}\n")
        fh.write("\n")
        for n in range(1, model.order + 1):
            fh.write(f"\\{n}-grams:\n")
            for ngram in sorted(model.tables[n - 1]):
                prob, backoff = model.tables[n - 1][ngram]
                line = f"{prob:.6f}\t{' '.join(ngram)}"
                if backoff != 0.0:
                    line += f"\t{backoff:.6f}"
                fh.write(line + "\n")
            fh.write("\n")
        fh.write("\\end\\\n")


# ---------------------------------------------------------------------------
# Training


def train_ngram(corpus, order: int, add_k: float = 0.01) -> NGramModel:
    """Estimate an add-k smoothed backoff model from tokenized sentences.

    corpus: iterable of token sequences. Sentences are padded with <s> and
    </s>. Backoff weights distribute each history's leftover smoothing mass
    over the lower order so conditionals stay normalized; with add_k = 0
    there is no leftover mass and backoff weights are log10-zero sentinels.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if add_k < 0:
        raise ValueError("add_k must be >= 0")
    grams = [Counter() for _ in range(order)]
    n_sentences = 0
    for sent in corpus:
        tokens = [SENT_START] + [str(w) for w in sent] + [SENT_END]
        n_sentences += 1
        for n in range(1, order + 1):
            for j in range(len(tokens) - n + 1):
                grams[n - 1][tuple(tokens[j : j + n])] += 1
    if n_sentences == 0:
        raise ValueError("empty corpus")

    vocab = sorted({w for (w,), _ in grams[0].items() if w != SENT_START})
    v_size = len(vocab)

    tables = [dict() for _ in range(order)]

    # unigrams: <s> is context-only and never predicted
    total = sum(c for (w,), c in grams[0].items() if w != SENT_START)
    denom = total + add_k * v_size
    for w in vocab:
        p = (grams[0][(w,)] + add_k) / denom
        tables[0][(w,)] = [math.log10(p), 0.0]
    tables[0][(SENT_START,)] = [LOG_ZERO, 0.0]

    for n in range(2, order + 1):
        by_history = defaultdict(list)
        for ngram, c in grams[n - 1].items():
            by_history[ngram[:-1]].append((ngram[-1], c))
        for history, conts in by_history.items():
            c_total = sum(c for _, c in conts)
            denom = c_total + add_k * v_size
            for w, c in conts:
                p = (c + add_k) / denom
                tables[n - 1][history + (w,)] = [math.log10(p), 0.0]
            # leftover smoothing mass goes to the lower order via the
            # history's backoff weight
            leftover = add_k * (v_size - len(conts)) / denom
            if leftover > 0.0:
                lower_seen = sum(
                    10.0 ** tables[n - 2][(history + (w,))[1:]][0] for w, _ in conts
                )
                bow = leftover / max(1.0 - lower_seen, 1e-12)
                tables[n - 2][history][1] = math.log10(bow)
            else:
                tables[n - 2][history][1] = LOG_ZERO

    for table in tables:
        for key, val in table.items():
            table[key] = (val[0], val[1])
    return NGramModel(order, tables)
