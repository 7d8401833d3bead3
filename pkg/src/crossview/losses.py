"""Training objectives: soft-margin triplet loss, per-step generation
losses, and the weighted total."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ShapeError

DESCRIPTOR_EPS = 1e-12


def l2_normalize(x, dim=-1, eps=DESCRIPTOR_EPS):
    norm = torch.linalg.vector_norm(x, dim=dim, keepdim=True)
    return x / torch.clamp(norm, min=eps)


def descriptor(fmap):
    """Flatten a single feature map to a unit vector. A numerically zero
    map stays the zero vector; callers can detect that degenerate case via
    its zero norm."""
    flat = fmap.reshape(-1)
    return l2_normalize(flat, dim=0)


def _softplus_exact(x):
    # log(1 + exp(x)), exact and finite for |x| up to ~1e308
    return torch.clamp_min(x, 0) + torch.log1p(torch.exp(-torch.abs(x)))


def triplet_loss(d_pos, d_neg, gamma):
    """log(1 + exp(gamma * (d_pos - d_neg))), overflow-safe."""
    d_pos = torch.as_tensor(d_pos, dtype=torch.float64) if not torch.is_tensor(d_pos) else d_pos
    d_neg = torch.as_tensor(d_neg, dtype=torch.float64) if not torch.is_tensor(d_neg) else d_neg
    return _softplus_exact(gamma * (d_pos - d_neg))


def pairwise_distances(desc_g, desc_a):
    """Euclidean distance matrix D[i, j] = ||g_i - a_j||."""
    diff = desc_g[:, None, :] - desc_a[None, :, :]
    sq = (diff * diff).sum(-1)
    return torch.sqrt(torch.clamp_min(sq, 1e-24))


def batch_triplet_loss(desc_g, desc_a, gamma):
    """Mean soft-margin loss over all exhaustively mined in-batch triplets,
    both anchor directions (2*N*(N-1) terms)."""
    n = desc_g.shape[0]
    if desc_a.shape[0] != n:
        raise ShapeError(f"descriptor counts differ: {n} vs {desc_a.shape[0]}")
    if n < 2:
        raise ShapeError(f"need at least 2 pairs for triplet mining, got {n}")
    dists = pairwise_distances(desc_g, desc_a)
    d_pos = torch.diagonal(dists)
    off = ~torch.eye(n, dtype=torch.bool, device=dists.device)
    # ground anchors: negatives are the other aerials (rows); aerial
    # anchors: negatives are the other grounds (columns)
    ground_terms = triplet_loss(d_pos[:, None].expand(n, n)[off], dists[off], gamma)
    aerial_terms = triplet_loss(d_pos[None, :].expand(n, n)[off], dists[off], gamma)
    return (ground_terms.sum() + aerial_terms.sum()) / (2 * n * (n - 1))


def generation_loss(trace_g, trace_a, stop_gradient_targets=True):
    """Per-step MSE between generated knowledge and the other branch's
    actual normalized features. Returns (to-aerial terms, to-ground terms),
    one entry per recurrence step."""
    if len(trace_g) != len(trace_a):
        raise ShapeError(f"trace lengths differ: {len(trace_g)} vs {len(trace_a)}")
    to_aerial = []
    to_ground = []
    for step_g, step_a in zip(trace_g, trace_a):
        target_a = step_a.normalized
        target_g = step_g.normalized
        if stop_gradient_targets:
            target_a = target_a.detach()
            target_g = target_g.detach()
        to_aerial.append(((step_g.generated - target_a) ** 2).mean())
        to_ground.append(((step_a.generated - target_g) ** 2).mean())
    return to_aerial, to_ground


@dataclass
class LossBreakdown:
    triplet: torch.Tensor
    gen_g2s_per_step: list = field(default_factory=list)
    gen_s2g_per_step: list = field(default_factory=list)
    total: torch.Tensor = None

    def to_dict(self):
        return {
            "triplet": float(self.triplet.detach()),
            "gen_g2s_per_step": [float(v.detach()) for v in self.gen_g2s_per_step],
            "gen_s2g_per_step": [float(v.detach()) for v in self.gen_s2g_per_step],
            "total": float(self.total.detach()),
        }


def total_loss(desc_g, desc_a, trace_g, trace_a, gen_weight, gamma,
               stop_gradient_targets=True):
    """Triplet term over all mined in-batch triplets plus the weighted sum
    of per-step generation terms."""
    triplet = batch_triplet_loss(desc_g, desc_a, gamma)
    has_generation = trace_g and trace_g[0].generated is not None
    if has_generation:
        to_aerial, to_ground = generation_loss(trace_g, trace_a, stop_gradient_targets)
        gen_sum = sum(to_aerial) + sum(to_ground)
        total = triplet + gen_weight * gen_sum
    else:
        to_aerial, to_ground = [], []
        total = triplet
    return LossBreakdown(
        triplet=triplet,
        gen_g2s_per_step=to_aerial,
        gen_s2g_per_step=to_ground,
        total=total,
    )
