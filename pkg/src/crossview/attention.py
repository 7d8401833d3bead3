"""Multi-head cross-attention and the recurrent fusion stack.

Tokens are the width-axis columns of a (channels, height, width) feature
map, each flattened to a channels*height vector. Queries come from a
branch's own normalized features; keys and values come from the generated
cross-modal knowledge.
"""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from .backbone import ChannelLayerNorm
from .errors import ConfigError, ShapeError


def _to_tokens(fmap):
    # (N, c, h, w) -> (N, w, c*h)
    n, c, h, w = fmap.shape
    return fmap.permute(0, 3, 1, 2).reshape(n, w, c * h)


def _from_tokens(tokens, c, h):
    n, w, d = tokens.shape
    return tokens.reshape(n, w, c, h).permute(0, 2, 3, 1)


class CrossAttention(nn.Module):
    """Scaled dot-product cross-attention with per-head projections and an
    optional output projection after head concatenation."""

    def __init__(self, cfg):
        super().__init__()
        if cfg.channels % cfg.heads != 0:
            raise ConfigError(
                f"channels ({cfg.channels}) must be divisible by heads ({cfg.heads})"
            )
        self.channels = cfg.channels
        self.height = cfg.height
        self.heads = cfg.heads
        self.d_model = cfg.token_dim
        self.d_head = self.d_model // cfg.heads
        self.q_proj = nn.Linear(self.d_model, self.d_model, bias=False)
        self.k_proj = nn.Linear(self.d_model, self.d_model, bias=False)
        self.v_proj = nn.Linear(self.d_model, self.d_model, bias=False)
        self.out_proj = (
            nn.Linear(self.d_model, self.d_model, bias=False) if cfg.output_projection else None
        )
        self.dropout = nn.Dropout(cfg.attn_dropout) if cfg.attn_dropout > 0 else None

    def forward(self, intra, knowledge):
        if intra.shape != knowledge.shape:
            raise ShapeError(
                f"intra shape {tuple(intra.shape)} != knowledge shape {tuple(knowledge.shape)}"
            )
        n, c, h, w = intra.shape
        if c != self.channels or h != self.height:
            raise ShapeError(
                f"expected feature maps with {self.channels} channels and height "
                f"{self.height}, got {tuple(intra.shape)}"
            )

        def split_heads(tokens):
            return tokens.view(n, w, self.heads, self.d_head).transpose(1, 2)

        q = split_heads(self.q_proj(_to_tokens(intra)))
        k = split_heads(self.k_proj(_to_tokens(knowledge)))
        v = split_heads(self.v_proj(_to_tokens(knowledge)))

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        weights = F.softmax(scores, dim=-1)
        if self.dropout is not None:
            weights = self.dropout(weights)
        fused = (weights @ v).transpose(1, 2).reshape(n, w, self.d_model)
        if self.out_proj is not None:
            fused = self.out_proj(fused)
        return _from_tokens(fused, c, h), weights


class FusionUpdate(nn.Module):
    """Residual update around cross-attention.

    Default form adds the normalized residual stream back onto itself
    (out = r + LN(r) with r = attention + intra); with
    literal_residual_norm off, the conventional out = LN(r) is used.
    """

    def __init__(self, cfg):
        super().__init__()
        self.attn = CrossAttention(cfg)
        self.norm = ChannelLayerNorm(cfg.channels)
        self.literal = cfg.literal_residual_norm

    def forward(self, intra, knowledge):
        fused, weights = self.attn(intra, knowledge)
        residual = fused + intra
        if self.literal:
            out = residual + self.norm(residual)
        else:
            out = self.norm(residual)
        return out, weights


class RecurrentBranchStep(nn.Module):
    """One recurrence step for one branch: pre-normalization plus fusion."""

    def __init__(self, cfg):
        super().__init__()
        self.pre_norm = ChannelLayerNorm(cfg.channels)
        self.update = FusionUpdate(cfg)
