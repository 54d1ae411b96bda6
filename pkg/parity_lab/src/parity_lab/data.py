"""Datasets, hint labels, and per-regime batch layouts.

Hints follow the two schemes from the training recipe:

- threshold hints t_j = I[popcount(x) >= j], a parallel signal matching the
  first layer of the two-layer threshold circuit for parity; used by the
  pause-token and non-causal regimes.
- subparity hints t_j = x_1 xor ... xor x_j, a serial signal usable under
  causal masking; used by the causal instant-answer regime.

Layouts (sequence length n, vocabulary {0, 1, PAUSE, END}):

  causal_pause       x_1 .. x_n  PAUSE*n  END     loss on pauses + END
  causal_instant     x_1 .. x_n  END              loss everywhere
  noncausal_instant  x_1 .. x_n  END              loss everywhere

Labels: pauses carry t_1..t_n (thresholds), inputs in the instant regimes
carry subparities (causal) or thresholds (non-causal), END always carries the
full parity.
"""

from __future__ import annotations

import numpy as np

from .config import IGNORE_LABEL, TOK_END, TOK_PAUSE


def make_dataset(length: int, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random bitstrings with parity labels, reproducible from seed."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(count, length), dtype=np.int64)
    labels = bits.sum(axis=1) % 2
    return bits, labels


def threshold_hints(bits: np.ndarray) -> np.ndarray:
    """t_j = I[popcount >= j] for j = 1..n, per row."""
    counts = bits.sum(axis=1, keepdims=True)
    js = np.arange(1, bits.shape[1] + 1)[None, :]
    return (counts >= js).astype(np.int64)


def subparity_hints(bits: np.ndarray) -> np.ndarray:
    """t_j = parity of the prefix x_1..x_j, per row."""
    return np.cumsum(bits, axis=1) % 2


def build_batch(bits: np.ndarray, regime: str) -> dict[str, np.ndarray]:
    """Token ids, per-position labels, and the loss mask for one regime.

    Input bits use their own values as token ids (0 and 1).  Positions whose
    loss mask is zero get the ignore label.
    """
    count, n = bits.shape
    parity = bits.sum(axis=1) % 2
    if regime == "causal_pause":
        tokens = np.concatenate(
            [
                bits,
                np.full((count, n), TOK_PAUSE, dtype=np.int64),
                np.full((count, 1), TOK_END, dtype=np.int64),
            ],
            axis=1,
        )
        labels = np.concatenate(
            [
                np.full((count, n), IGNORE_LABEL, dtype=np.int64),
                threshold_hints(bits),
                parity[:, None],
            ],
            axis=1,
        )
        mask = np.concatenate(
            [np.zeros((count, n), np.int64), np.ones((count, n + 1), np.int64)],
            axis=1,
        )
    elif regime in ("causal_instant", "noncausal_instant"):
        tokens = np.concatenate(
            [bits, np.full((count, 1), TOK_END, dtype=np.int64)], axis=1
        )
        hints = (
            subparity_hints(bits)
            if regime == "causal_instant"
            else threshold_hints(bits)
        )
        labels = np.concatenate([hints, parity[:, None]], axis=1)
        mask = np.ones((count, n + 1), np.int64)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return {"tokens": tokens, "labels": labels, "mask": mask}


def answer_position(length: int, regime: str) -> int:
    """Index of the END token, whose prediction is the task answer."""
    return 2 * length if regime == "causal_pause" else length
