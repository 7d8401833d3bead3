"""Training loop: batch assembly, exhaustive in-batch triplet mining,
optimizer steps, checkpointing, and reproducible seeding.

Determinism contract: given (seed, config, data) the loss trajectory is
bit-identical across runs on the same platform in 64-bit mode, and a run
resumed from any checkpoint continues exactly as the uninterrupted run.
"""

from __future__ import annotations

import json
import time
from collections import namedtuple
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, parse_config, serialize_config
from .data import polar_transform, standardize
from .errors import ConfigError, DataError
from .losses import l2_normalize, total_loss
from .model import build_model

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

Triplet = namedtuple("Triplet", ["anchor", "positive", "negative", "anchor_view"])


def mine_triplets(n):
    """Exhaustive in-batch mining over a batch of n matched pairs: for each
    anchor in each view, the matched other-view item is the positive and
    every mismatched other-view item is a negative (2*n*(n-1) triplets)."""
    if n < 2:
        raise DataError(f"triplet mining needs a batch of >= 2 pairs, got {n}")
    triplets = []
    for view in ("ground", "aerial"):
        for i in range(n):
            for j in range(n):
                if j != i:
                    triplets.append(Triplet(i, i, j, view))
    return triplets


class ArrayDataset:
    """Dataset materialized as model-input tensors: standardized ground
    panoramas and (optionally polar-warped) standardized aerial images."""

    def __init__(self, ground, aerial, ids):
        self.ground = ground
        self.aerial = aerial
        self.ids = ids

    @classmethod
    def from_split(cls, split, model_cfg):
        grounds, aerials = [], []
        for pair in split:
            g = pair.ground
            a = pair.aerial
            if tuple(g.shape[:2]) != tuple(model_cfg.ground_size):
                raise DataError(
                    f"pair {pair.id}: ground size {g.shape[:2]} != configured "
                    f"{tuple(model_cfg.ground_size)}"
                )
            if model_cfg.polar:
                if a.shape[0] != a.shape[1]:
                    raise ConfigError(
                        f"pair {pair.id}: polar transform requires a square aerial "
                        f"image, got {a.shape[:2]}"
                    )
                out_h, out_w = model_cfg.aerial_input_size
                a = polar_transform(a, out_h, out_w)
            elif tuple(a.shape[:2]) != model_cfg.aerial_input_size:
                raise DataError(
                    f"pair {pair.id}: aerial size {a.shape[:2]} != configured "
                    f"{model_cfg.aerial_input_size}"
                )
            grounds.append(standardize(g).transpose(2, 0, 1))
            aerials.append(standardize(a).transpose(2, 0, 1))
        return cls(
            ground=torch.from_numpy(np.stack(grounds)),
            aerial=torch.from_numpy(np.stack(aerials)),
            ids=[p.id for p in split],
        )

    def __len__(self):
        return self.ground.shape[0]

    def batch(self, indices, dtype):
        idx = torch.as_tensor(indices, dtype=torch.long)
        return self.ground[idx].to(dtype), self.aerial[idx].to(dtype)


def _first_non_finite(model, loss):
    if not torch.isfinite(loss.total):
        for name, value in (("triplet", loss.triplet),):
            if not torch.isfinite(value):
                return name
        for i, v in enumerate(loss.gen_g2s_per_step):
            if not torch.isfinite(v):
                return f"gen_g2s_per_step[{i}]"
        for i, v in enumerate(loss.gen_s2g_per_step):
            if not torch.isfinite(v):
                return f"gen_s2g_per_step[{i}]"
        return "total"
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            return f"parameter {name}"
    return None


def train_step(model, optimizer, ground, aerial, cfg: TrainConfig):
    """One optimization step over a batch of matched pairs."""
    final_g, final_a, trace_g, trace_a = model(ground, aerial)
    desc_g = l2_normalize(final_g.reshape(final_g.shape[0], -1))
    desc_a = l2_normalize(final_a.reshape(final_a.shape[0], -1))
    loss = total_loss(
        desc_g,
        desc_a,
        trace_g,
        trace_a,
        gen_weight=cfg.gen_weight,
        gamma=cfg.gamma,
        stop_gradient_targets=cfg.model.stop_gradient_targets,
    )
    bad = _first_non_finite(model, loss)
    if bad is not None:
        raise RuntimeError(f"non-finite loss; first non-finite tensor: {bad}")
    optimizer.zero_grad()
    loss.total.backward()
    optimizer.step()
    return loss


@dataclass
class Checkpoint:
    path: Path
    epoch: int
    config: TrainConfig


def save_checkpoint(model, optimizer, shuffle_gen, epoch, cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"ckpt_{epoch:04d}.bin"
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict(),
            "epoch": epoch,
            "torch_rng": torch.get_rng_state(),
            "shuffle_rng": shuffle_gen.get_state(),
            "config": serialize_config(cfg),
        },
        path,
    )
    (out_dir / "latest").write_text(path.name, encoding="utf-8")
    return Checkpoint(path=path, epoch=epoch, config=cfg)


def load_checkpoint(path):
    path = Path(path)
    if path.is_dir():
        marker = path / "latest"
        if not marker.is_file():
            raise DataError(f"no 'latest' marker under checkpoint dir {path}")
        path = path / marker.read_text(encoding="utf-8").strip()
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    state = torch.load(path, weights_only=False)
    state["config"] = parse_config(state["config"])
    state["path"] = path
    return state


def restore_model(state, precision=None):
    cfg = state["config"]
    precision = precision or cfg.precision
    model = build_model(cfg.model, precision)
    model.load_state_dict(state["model"])
    return model, cfg


def fit(split, cfg: TrainConfig, out_dir, resume=None, log_hook=None):
    """Train on a split, checkpointing periodically. Returns the final
    Checkpoint. With ``resume`` pointing at a checkpoint, continuation is
    bit-identical to an uninterrupted run."""
    cfg.validate()
    if len(split) == 0:
        raise DataError("cannot train on an empty split")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = torch.float64 if cfg.precision == 64 else torch.float32

    dataset = ArrayDataset.from_split(split, cfg.model)
    shuffle_gen = torch.Generator()

    if resume is not None:
        state = load_checkpoint(resume)
        model, _ = restore_model(state, cfg.precision)
        optimizer = torch.optim.Adam(
            model.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        optimizer.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["torch_rng"])
        shuffle_gen.set_state(state["shuffle_rng"])
        start_epoch = state["epoch"]
    else:
        torch.manual_seed(cfg.seed)
        model = build_model(cfg.model, cfg.precision)
        optimizer = torch.optim.Adam(
            model.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        shuffle_gen.manual_seed(cfg.seed + 1)
        start_epoch = 0

    log_path = out_dir / "train_log.jsonl"
    log_mode = "a" if resume is not None else "w"
    checkpoint = save_checkpoint(model, optimizer, shuffle_gen, start_epoch, cfg, out_dir)
    n = len(dataset)
    batch = min(cfg.batch_size, n)
    if batch < 2:
        raise DataError(f"dataset of {n} pairs cannot form a batch of >= 2")

    with open(log_path, log_mode, encoding="utf-8") as log:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            order = torch.randperm(n, generator=shuffle_gen).tolist()
            for step, lo in enumerate(range(0, n - n % batch, batch)):
                indices = order[lo : lo + batch]
                ground, aerial = dataset.batch(indices, dtype)
                t0 = time.monotonic()
                loss = train_step(model, optimizer, ground, aerial, cfg)
                entry = {"epoch": epoch, "step": step, **loss.to_dict()}
                entry["wall_time"] = time.monotonic() - t0
                log.write(json.dumps(entry) + "\n")
                if log_hook is not None:
                    log_hook(entry)
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                checkpoint = save_checkpoint(
                    model, optimizer, shuffle_gen, epoch, cfg, out_dir
                )
    return checkpoint
