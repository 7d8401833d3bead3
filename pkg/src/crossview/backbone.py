"""Two-branch convolutional feature extractor and shared building blocks.

Each branch is a small conv tower followed by height averaging (realized as
adaptive average pooling down to the configured feature height/width) and a
pointwise channel-mixing convolution. The two branches share shapes but
never weights.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ShapeError

LAYER_NORM_EPS = 1e-6


def positional_encoding(channels, height, width, dtype=torch.float64):
    """Fixed sinusoidal table over the width axis, interleaved sin/cos
    channel pairs, broadcast across height. Values lie in [-1, 1]."""
    table = torch.zeros(channels, 1, width, dtype=dtype)
    pos = torch.arange(width, dtype=dtype)
    for ch in range(channels):
        pair = ch // 2
        freq = 1.0 / (10000.0 ** (2.0 * pair / channels))
        if ch % 2 == 0:
            table[ch, 0] = torch.sin(pos * freq)
        else:
            table[ch, 0] = torch.cos(pos * freq)
    return table.expand(channels, height, width).contiguous()


class ChannelLayerNorm(nn.Module):
    """Layer norm over the channel axis at each spatial location, with
    learned per-channel gain and bias."""

    def __init__(self, channels, eps=LAYER_NORM_EPS):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(channels, 1, 1))
        self.bias = nn.Parameter(torch.zeros(channels, 1, 1))

    def forward(self, x):
        mean = x.mean(dim=-3, keepdim=True)
        var = x.var(dim=-3, unbiased=False, keepdim=True)
        normed = (x - mean) / torch.sqrt(var + self.eps)
        return normed * self.gain + self.bias


class BranchTower(nn.Module):
    """Conv tower for one view. Strided 3x3 convs with ReLU, pooled to the
    configured (height, width), then a 1x1 channel-mixing conv."""

    def __init__(self, cfg, branch):
        super().__init__()
        self.branch = branch
        if branch == "ground":
            self.input_size = tuple(cfg.ground_size)
        elif branch == "aerial":
            self.input_size = tuple(cfg.aerial_input_size)
        else:
            raise ValueError(f"branch must be 'ground' or 'aerial', got {branch!r}")
        self.out_shape = (cfg.channels, cfg.height, cfg.width)
        layers = []
        in_ch = 3
        for out_ch in cfg.backbone_widths:
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1))
            layers.append(nn.ReLU())
            in_ch = out_ch
        self.tower = nn.Sequential(*layers)
        self.mix = nn.Conv2d(in_ch, cfg.channels, kernel_size=1)

    def forward(self, images):
        if images.ndim != 4 or images.shape[1] != 3 or tuple(images.shape[2:]) != self.input_size:
            raise ShapeError(
                f"{self.branch} branch expects input (N, 3, {self.input_size[0]}, "
                f"{self.input_size[1]}), got {tuple(images.shape)}"
            )
        x = self.tower(images)
        x = F.adaptive_avg_pool2d(x, self.out_shape[1:])
        return self.mix(x)


def export_weights(model, path):
    """Write all parameters to a flat .npz archive keyed by parameter name."""
    arrays = {name: p.detach().cpu().numpy() for name, p in model.named_parameters()}
    np.savez(path, **arrays)


def import_weights(model, path, strict=True):
    """Load parameters from a flat named-tensor archive. Shapes must match;
    with strict=False, names absent from the archive keep their values."""
    with np.load(path) as archive:
        available = set(archive.files)
        with torch.no_grad():
            for name, param in model.named_parameters():
                if name not in available:
                    if strict:
                        raise ShapeError(f"archive missing tensor {name!r}")
                    continue
                arr = archive[name]
                if tuple(arr.shape) != tuple(param.shape):
                    raise ShapeError(
                        f"tensor {name!r}: archive shape {tuple(arr.shape)} != "
                        f"model shape {tuple(param.shape)}"
                    )
                param.copy_(torch.as_tensor(arr, dtype=param.dtype))
