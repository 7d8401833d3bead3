"""Cross-modal knowledge generators.

Each generator is a deterministic encoder-decoder over the flattened
feature map: two fully-connected layers with GELU inside on the encoder
side, mirrored on the decoder side, squeezing through a latent bottleneck.
The ground-to-aerial and aerial-to-ground generators are independent
instances of the same shape.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ShapeError


class CrossModalGenerator(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        d = cfg.descriptor_dim
        hidden = max(cfg.latent_dim, (d + cfg.latent_dim) // 2)
        self.feature_shape = (cfg.channels, cfg.height, cfg.width)
        self.encoder = nn.Sequential(
            nn.Linear(d, hidden),
            nn.GELU(),
            nn.Linear(hidden, cfg.latent_dim),
        )
        self.decoder = nn.Sequential(
            nn.Linear(cfg.latent_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, d),
        )

    def forward(self, features):
        if tuple(features.shape[-3:]) != self.feature_shape:
            raise ShapeError(
                f"generator expects feature maps of shape {self.feature_shape}, "
                f"got {tuple(features.shape[-3:])}"
            )
        batch = features.shape[:-3]
        flat = features.reshape(*batch, -1)
        out = self.decoder(self.encoder(flat))
        return out.reshape(*batch, *self.feature_shape)
