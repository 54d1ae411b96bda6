"""parity_lab: can a 2-layer Transformer learn parity?  Three regimes
(causal instant answer, non-causal instant answer, causal with pause tokens)
with hint supervision, and accuracy-vs-length curves."""

from . import config, curves, data, model, train

__all__ = ["config", "curves", "data", "model", "train"]
