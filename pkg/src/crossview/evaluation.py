"""Retrieval evaluation and complexity accounting.

Queries are ground descriptors; references are aerial descriptors. A query
counts for r@K when its true match ranks within the top K references by
ascending Euclidean distance, with ties broken by ascending reference
index. The top-1% cutoff is K = ceil(0.01 * N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .training import ArrayDataset

DEFAULT_K_SPECS = ("1", "5", "10", "1%")


def extract_all_descriptors(split, model, model_cfg, batch_size=32, precision=None):
    """Descriptor matrices (ground N x D, aerial N x D) with unit rows,
    row i holding pair i's representations."""
    dtype = next(model.parameters()).dtype
    dataset = ArrayDataset.from_split(split, model_cfg)
    grounds, aerials = [], []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            idx = list(range(lo, min(lo + batch_size, len(dataset))))
            ground, aerial = dataset.batch(idx, dtype)
            grounds.append(model.descriptors(ground, "ground").cpu().numpy())
            aerials.append(model.descriptors(aerial, "aerial").cpu().numpy())
    return np.concatenate(grounds), np.concatenate(aerials)


def resolve_k(spec, n_references):
    if isinstance(spec, str) and spec.endswith("%"):
        return max(1, math.ceil(float(spec[:-1]) / 100.0 * n_references))
    k = int(spec)
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {spec!r}")
    return k


@dataclass
class RecallReport:
    r_at: dict
    n_queries: int
    n_references: int
    hit_sets: dict = field(default_factory=dict, repr=False)

    def as_row(self):
        return {f"r@{k}": v for k, v in self.r_at.items()}


def recall_at_k(ground_matrix, aerial_matrix, k_specs=DEFAULT_K_SPECS):
    """Rank all references per query and report recall percentages."""
    ground_matrix = np.asarray(ground_matrix, dtype=np.float64)
    aerial_matrix = np.asarray(aerial_matrix, dtype=np.float64)
    if ground_matrix.shape != aerial_matrix.shape:
        raise ShapeError(
            f"matrix shapes differ: {ground_matrix.shape} vs {aerial_matrix.shape}"
        )
    n = ground_matrix.shape[0]
    if n < 1:
        raise ShapeError("need at least one query/reference pair")

    diff = ground_matrix[:, None, :] - aerial_matrix[None, :, :]
    dists = np.sqrt((diff * diff).sum(-1))
    d_true = np.diagonal(dists)
    idx = np.arange(n)
    # rank of the true match under ascending distance with index tie-break
    closer = (dists < d_true[:, None]).sum(axis=1)
    tied_before = ((dists == d_true[:, None]) & (idx[None, :] < idx[:, None])).sum(axis=1)
    true_rank = closer + tied_before  # 0-based

    r_at, hit_sets = {}, {}
    for spec in k_specs:
        k = resolve_k(spec, n)
        hits = true_rank < k
        key = str(spec)
        r_at[key] = 100.0 * hits.sum() / n
        hit_sets[key] = set(np.nonzero(hits)[0].tolist())
    return RecallReport(r_at=r_at, n_queries=n, n_references=n, hit_sets=hit_sets)


@dataclass
class ComplexityReport:
    param_counts: dict
    param_total: int
    mac_counts: dict
    mac_total: int


def _module_group(name):
    head = name.split(".")[0]
    if head in ("tower_ground", "tower_aerial"):
        return head
    if head in ("gen_to_aerial", "gen_to_ground"):
        return "generators"
    if head in ("steps_ground", "steps_aerial"):
        return "attention_stack"
    return "other"


def complexity_report(model, model_cfg, batch_size=1):
    """Parameter counts per sub-module plus a multiply-accumulate estimate
    for one forward pass, counting conv, linear, and attention matmuls."""
    param_counts = {}
    for name, p in model.named_parameters():
        group = _module_group(name)
        param_counts[group] = param_counts.get(group, 0) + p.numel()
    param_total = sum(param_counts.values())

    macs = {}

    def record(group, count):
        macs[group] = macs.get(group, 0) + count

    hooks = []

    def hook_for(name):
        group = _module_group(name)

        def hook(module, inputs, output):
            if isinstance(module, nn.Conv2d):
                out_elems = output.numel() // output.shape[0]
                per_out = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                record(group, out_elems * per_out)
            elif isinstance(module, nn.Linear):
                n_vectors = inputs[0].numel() // inputs[0].shape[-1]
                record(group, n_vectors * module.in_features * module.out_features)

        return hook

    for name, module in model.named_modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            hooks.append(module.register_forward_hook(hook_for(name)))

    dtype = next(model.parameters()).dtype
    gh, gw = model_cfg.ground_size
    ah, aw = model_cfg.aerial_input_size
    ground = torch.zeros(batch_size, 3, gh, gw, dtype=dtype)
    aerial = torch.zeros(batch_size, 3, ah, aw, dtype=dtype)
    try:
        with torch.no_grad():
            model(ground, aerial)
    finally:
        for h in hooks:
            h.remove()

    if model_cfg.transformer_enabled:
        # score and value matmuls: per step, branch, and head
        d = model_cfg.token_dim
        w = model_cfg.width
        record("attention_stack", 2 * model_cfg.steps * 2 * w * w * d * batch_size)

    return ComplexityReport(
        param_counts=param_counts,
        param_total=param_total,
        mac_counts=macs,
        mac_total=sum(macs.values()),
    )
