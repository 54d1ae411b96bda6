"""A minimal GPT-2-style Transformer for per-position binary prediction.

Two pre-norm blocks of multi-head self-attention plus an MLP, learned
positional embeddings, and a two-way classification head at every position.
The causal mask is the only architectural difference between regimes: the
non-causal regime drops it, everything else is bit-identical.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import VOCAB_SIZE, ExperimentConfig


class Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x, attn_mask):
        h = self.ln1(x)
        a, _ = self.attn(h, h, h, attn_mask=attn_mask, need_weights=False)
        x = x + a
        return x + self.mlp(self.ln2(x))


class ParityTransformer(nn.Module):
    def __init__(self, cfg: ExperimentConfig, max_len: int, causal: bool):
        super().__init__()
        self.causal = causal
        dim = cfg.hidden_dim
        self.tok = nn.Embedding(VOCAB_SIZE, dim)
        self.pos = nn.Embedding(max_len, dim)
        self.blocks = nn.ModuleList(
            Block(dim, cfg.n_heads) for _ in range(cfg.n_layers)
        )
        self.ln_f = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, 2)
        self.apply(self._gpt2_init)

    @staticmethod
    def _gpt2_init(module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.MultiheadAttention):
            nn.init.normal_(module.in_proj_weight, std=0.02)
            nn.init.zeros_(module.in_proj_bias)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        b, t = tokens.shape
        pos = torch.arange(t, device=tokens.device)
        x = self.tok(tokens) + self.pos(pos)[None, :, :]
        mask = None
        if self.causal:
            mask = torch.triu(
                torch.full((t, t), float("-inf"), device=tokens.device), diagonal=1
            )
        for block in self.blocks:
            x = block(x, mask)
        return self.head(self.ln_f(x))


def masked_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over positions whose label is not the ignore marker."""
    return F.cross_entropy(
        logits.reshape(-1, 2), labels.reshape(-1), ignore_index=-100
    )
