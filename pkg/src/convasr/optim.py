"""Adam optimizer with freeze-mask awareness.

Moment state exists only for trainable layers; a gradient arriving for a
frozen layer is a contract violation. Defaults follow the training setup:
lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8, with bias correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamSlot:
    m_w: np.ndarray
    v_w: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray


@dataclass
class AdamState:
    config: AdamConfig
    t: int
    slots: dict  # layer index -> AdamSlot, trainable layers only

    @classmethod
    def init(cls, params, mask, config: AdamConfig | None = None) -> "AdamState":
        config = config or AdamConfig()
        slots = {}
        for i in mask.trainable_indices():
            w, b = params.weights[i], params.biases[i]
            slots[i] = AdamSlot(
                np.zeros_like(w), np.zeros_like(w), np.zeros_like(b), np.zeros_like(b)
            )
        return cls(config, 0, slots)


def adam_step(params, grads, state: AdamState):
    """One Adam update in place; returns (params, state).

    grads must cover exactly the layers the state was initialized for.
    Frozen layers are left bit-identical.
    """
    present = set(grads.present_indices())
    expected = set(state.slots)
    if present - expected:
        raise ValueError(
            f"gradient present for frozen layer(s) {sorted(present - expected)}"
        )
    if expected - present:
        raise ValueError(
            f"gradient missing for trainable layer(s) {sorted(expected - present)}"
        )

    cfg = state.config
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for i, slot in state.slots.items():
        g = grads[i]
        for p, m, v, grad in (
            (params.weights[i], slot.m_w, slot.v_w, g.weights),
            (params.biases[i], slot.m_b, slot.v_b, g.bias),
        ):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * np.square(grad)
            p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state
