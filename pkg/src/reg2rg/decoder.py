"""Autoregressive transformer decoder over mixed text/visual embedding rows.

The prompt arrives as pre-built embedding rows (text token embeddings with
visual feature rows spliced in); targets arrive as token ids. Position k of
the input sequence predicts the token at position k+1, so the last prompt row
predicts the first target token and prompt positions never contribute loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import TransformerBlock, trunc_normal_init
from .errors import ContextOverflowError, ValidationError
from .tokenizer import EOS_ID


@dataclass
class DecoderConfig:
    vocab_size: int = 512
    llm_dim: int = 192
    layers: int = 4
    heads: int = 4
    max_sequence_length: int = 1024
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("vocab_size", "llm_dim", "layers", "heads", "max_sequence_length"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")


@dataclass
class GenerationConfig:
    strategy: str = "greedy"  # or "top-k"
    max_new_tokens: int = 256
    top_k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "top-k"):
            raise ValidationError(f"unknown generation strategy {self.strategy!r}")
        if self.max_new_tokens < 1:
            raise ValidationError("max_new_tokens must be >= 1")


class ReportDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.llm_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.max_sequence_length, cfg.llm_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.llm_dim, cfg.heads, causal=True, dropout=cfg.dropout)
            for _ in range(cfg.layers)
        )
        self.norm = nn.LayerNorm(cfg.llm_dim)
        self.head = nn.Linear(cfg.llm_dim, cfg.vocab_size)
        trunc_normal_init(self)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        # near-zero head keeps initial logits close to uniform
        nn.init.trunc_normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def embed_tokens(self, ids) -> torch.Tensor:
        if not torch.is_tensor(ids):
            ids = torch.tensor(list(ids), dtype=torch.long)
        return self.token_embed(ids)

    def _backbone(self, rows: torch.Tensor) -> torch.Tensor:
        S = rows.shape[0]
        if S > self.cfg.max_sequence_length:
            raise ContextOverflowError(
                f"sequence length {S} exceeds max {self.cfg.max_sequence_length}"
            )
        x = rows[None] + self.pos_embed[:, :S]
        for blk in self.blocks:
            x = blk(x)
        return self.head(self.norm(x))[0]  # (S, vocab)

    def forward(self, prompt_rows: torch.Tensor, target_ids, loss_mask=None):
        """Teacher-forced pass; returns (logits over the full sequence, masked mean loss)."""
        if not torch.is_tensor(target_ids):
            target_ids = torch.tensor(list(target_ids), dtype=torch.long)
        T = target_ids.shape[0]
        if loss_mask is None:
            loss_mask = torch.ones(T, dtype=torch.bool)
        elif not torch.is_tensor(loss_mask):
            loss_mask = torch.tensor(list(loss_mask), dtype=torch.bool)
        if loss_mask.shape[0] != T:
            raise ValidationError(f"loss_mask length {loss_mask.shape[0]} != target length {T}")

        rows = torch.cat([prompt_rows, self.embed_tokens(target_ids)], dim=0)
        logits = self._backbone(rows)
        P = prompt_rows.shape[0]
        # position P-1+k predicts target k
        target_logits = logits[P - 1 : P - 1 + T]
        if loss_mask.any():
            losses = F.cross_entropy(target_logits, target_ids, reduction="none")
            loss = losses[loss_mask].mean()
        else:
            loss = logits.sum() * 0.0
        return logits, loss

    @torch.no_grad()
    def generate(self, prompt_rows: torch.Tensor, gcfg: GenerationConfig) -> list[int]:
        """Autoregressive decoding from the prompt; stops at EOS."""
        if prompt_rows.shape[0] >= self.cfg.max_sequence_length:
            raise ContextOverflowError(
                f"prompt length {prompt_rows.shape[0]} leaves no room to generate"
            )
        rng = np.random.default_rng(gcfg.seed)
        rows = prompt_rows
        out: list[int] = []
        for _ in range(gcfg.max_new_tokens):
            logits = self._backbone(rows)[-1]
            if gcfg.strategy == "greedy":
                next_id = int(torch.argmax(logits).item())
            else:
                k = min(gcfg.top_k, logits.shape[0])
                top_vals, top_idx = torch.topk(logits, k)
                probs = F.softmax(top_vals, dim=0).double().cpu().numpy()
                probs = probs / probs.sum()
                next_id = int(top_idx[rng.choice(k, p=probs)].item())
            out.append(next_id)
            if next_id == EOS_ID:
                break
            if rows.shape[0] + 1 > self.cfg.max_sequence_length:
                break
            rows = torch.cat([rows, self.embed_tokens(torch.tensor([next_id]))], dim=0)
        return out
