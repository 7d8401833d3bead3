"""End-to-end ablation sweeps: train each variant, evaluate recall, and
collect complexity figures for side-by-side comparison tables."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .config import cmi_variants, step_sweep
from .evaluation import complexity_report, extract_all_descriptors, recall_at_k
from .model import build_model
from .training import ArrayDataset, fit, load_checkpoint, restore_model


@dataclass
class AblationRow:
    name: str
    seed: int
    recall: dict
    param_total: int
    mac_total: int


def run_variant(name, train_cfg, train_split, eval_split, out_dir):
    checkpoint = fit(train_split, train_cfg, out_dir)
    state = load_checkpoint(checkpoint.path)
    model, cfg = restore_model(state)
    model.eval()
    ground, aerial = extract_all_descriptors(eval_split, model, cfg.model)
    recall = recall_at_k(ground, aerial)
    complexity = complexity_report(model, cfg.model)
    return AblationRow(
        name=name,
        seed=train_cfg.seed,
        recall=recall.r_at,
        param_total=complexity.param_total,
        mac_total=complexity.mac_total,
    )


def run_grid(variants, base_cfg, train_split, eval_split, out_dir, seeds=(0,)):
    """Train/evaluate every (variant, seed) combination. Returns rows in
    variant-major order."""
    rows = []
    for name, model_cfg in variants:
        for seed in seeds:
            cfg = replace(base_cfg, model=model_cfg, seed=seed)
            run_dir = out_dir / f"{name}_seed{seed}"
            rows.append(run_variant(name, cfg, train_split, eval_split, run_dir))
    return rows


def median_recall(rows, name, metric="1"):
    values = sorted(r.recall[metric] for r in rows if r.name == name)
    if not values:
        raise KeyError(f"no rows for variant {name!r}")
    mid = len(values) // 2
    if len(values) % 2:
        return values[mid]
    return 0.5 * (values[mid - 1] + values[mid])


def run_cmi_comparison(base_cfg, train_split, eval_split, out_dir, seeds=(0,)):
    return run_grid(cmi_variants(base_cfg.model), base_cfg, train_split, eval_split,
                    out_dir, seeds)


def run_step_comparison(base_cfg, train_split, eval_split, out_dir,
                        steps=(1, 3, 6, 9), seeds=(0,)):
    return run_grid(step_sweep(base_cfg.model, steps), base_cfg, train_split,
                    eval_split, out_dir, seeds)
