"""CTC loss and exact gradient via the log-space forward-backward recursion.

The loss is -ln P(label | input) where P marginalizes over every frame path
that collapses to the label (merge adjacent repeats, then drop blanks). The
recursion runs over the blank-augmented label of length 2*|label|+1. The
gradient is taken with respect to the per-frame log-probabilities; chaining
through the network's log-softmax is the caller's concern.

`ctc_brute_force` enumerates all C^T paths and is the verification oracle
for the recursion; both raise InfeasibleAlignmentError when no path can
produce the label.
"""

from __future__ import annotations

import itertools

import numpy as np

NEG_INF = -np.inf


class InfeasibleAlignmentError(Exception):
    """The label cannot be aligned to the available frames."""


def collapse(path, blank: int) -> list[int]:
    """Merge adjacent repeats, then delete blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def min_frames(label) -> int:
    """Shortest path length that can emit the label (repeats need a blank)."""
    label = list(label)
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _check_inputs(log_probs, label, blank):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise ValueError("log_probs must be [T, C]")
    n_classes = log_probs.shape[1]
    if blank is None:
        blank = n_classes - 1
    label = [int(c) for c in label]
    for c in label:
        if not 0 <= c < n_classes or c == blank:
            raise ValueError(f"label index {c} invalid for {n_classes} classes")
    return log_probs, label, blank


def ctc_loss_grad(log_probs, label, blank: int | None = None):
    """Return (-ln P(label), gradient w.r.t. log_probs).

    log_probs: [T, C] per-frame class log-probabilities (blank defaults to
    the last class). Raises InfeasibleAlignmentError when T < the minimum
    alignable length instead of returning infinity.
    """
    y, label, blank = _check_inputs(log_probs, label, blank)
    t_len = y.shape[0]
    if t_len < max(min_frames(label), 1):
        raise InfeasibleAlignmentError(
            f"infeasible alignment: label needs >= {min_frames(label)} frames, "
            f"got {t_len}"
        )

    # blank-augmented label: blank, l1, blank, l2, ..., blank
    aug = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    aug[1::2] = label
    s_len = aug.size

    # skip transition s-2 -> s allowed where aug[s] is a letter differing
    # from aug[s-2]
    can_skip = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        can_skip[2:] = (aug[2:] != blank) & (aug[2:] != aug[:-2])

    emit = y[:, aug]  # [T, S]

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        acc = np.logaddexp(stay, step)
        if s_len > 2:
            skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
            acc = np.where(can_skip, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + emit[t]

    tail = alpha[-1, -1]
    if s_len > 1:
        tail = np.logaddexp(tail, alpha[-1, -2])
    if tail == NEG_INF:
        raise InfeasibleAlignmentError("no feasible path produces the label")
    loss = -tail

    beta = np.full((t_len, s_len), NEG_INF)
    beta[-1, -1] = emit[-1, -1]
    if s_len > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        acc = np.logaddexp(stay, step)
        if s_len > 2:
            skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
            skip = np.where(np.concatenate((can_skip[2:], [False, False])), skip, NEG_INF)
            acc = np.logaddexp(acc, skip)
        beta[t] = acc + emit[t]

    # total path mass through state s at time t (emission counted once)
    gamma = alpha + beta - emit

    grad = np.zeros_like(y)
    log_p = -loss
    for t in range(t_len):
        row = gamma[t]
        m = row.max()
        if m == NEG_INF:
            continue
        contrib = np.zeros(y.shape[1])
        np.add.at(contrib, aug, np.exp(row - m))
        grad[t] = -np.exp(m - log_p) * contrib
    return loss, grad


def ctc_loss(log_probs, label, blank: int | None = None) -> float:
    loss, _ = ctc_loss_grad(log_probs, label, blank)
    return loss


def ctc_brute_force(log_probs, label, blank: int | None = None, guard: int = 10**7) -> float:
    """Oracle: enumerate all C^T paths and sum those collapsing to the label."""
    y, label, blank = _check_inputs(log_probs, label, blank)
    t_len, n_classes = y.shape
    if n_classes**t_len > guard:
        raise ValueError(f"{n_classes}^{t_len} paths exceed the guard of {guard}")
    total = NEG_INF
    for path in itertools.product(range(n_classes), repeat=t_len):
        if collapse(path, blank) != label:
            continue
        total = np.logaddexp(total, sum(y[t, c] for t, c in enumerate(path)))
    if total == NEG_INF:
        raise InfeasibleAlignmentError("no feasible path produces the label")
    return float(-total)
