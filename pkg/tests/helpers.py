"""Shared test utilities: finite-difference gradient checking and small
model/config builders."""

import numpy as np
import torch

from crossview.config import ModelConfig, TrainConfig
from crossview.data import SyntheticSpec, generate_synthetic
from crossview.model import build_model
from crossview.training import ArrayDataset


def tiny_model_config(**overrides):
    base = dict(
        channels=8,
        height=1,
        width=5,
        heads=2,
        steps=2,
        backbone_widths=(8, 8),
        latent_dim=10,
        ground_size=(16, 64),
        aerial_size=32,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_train_config(**overrides):
    base = dict(lr=1e-3, batch_size=8, epochs=3, seed=0, precision=64,
                model=tiny_model_config())
    base.update(overrides)
    return TrainConfig(**base)


def synthetic_batch(model_cfg, count=4, seed=3, dtype=torch.float64):
    spec = SyntheticSpec(count=count, seed=seed,
                         aerial_size=model_cfg.aerial_size,
                         ground_size=tuple(model_cfg.ground_size))
    split = generate_synthetic(spec)
    dataset = ArrayDataset.from_split(split, model_cfg)
    return dataset.batch(list(range(count)), dtype)


def finite_difference_grads(loss_fn, param, step=1e-5, max_entries=None, rng=None):
    """Central-difference gradient of loss_fn() w.r.t. selected entries of
    `param` (edited in place and restored). Returns {flat_index: grad}."""
    flat = param.detach().reshape(-1)
    n = flat.numel()
    if max_entries is None or n <= max_entries:
        indices = range(n)
    else:
        indices = sorted(rng.choice(n, size=max_entries, replace=False).tolist())
    grads = {}
    with torch.no_grad():
        for i in indices:
            orig = flat[i].item()
            flat[i] = orig + step
            plus = float(loss_fn())
            flat[i] = orig - step
            minus = float(loss_fn())
            flat[i] = orig
            grads[i] = (plus - minus) / (2.0 * step)
    return grads


def assert_grads_match(model, loss_fn, rtol=1e-4, atol=1e-7, step=1e-5,
                       max_entries=None, seed=0, param_filter=None):
    """Compare autograd gradients of loss_fn() against central finite
    differences for every parameter (optionally filtered/subsampled)."""
    rng = np.random.default_rng(seed)
    model.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.detach().clone() if p.grad is not None
                       else torch.zeros_like(p))
                for name, p in model.named_parameters()}
    checked = 0
    for name, param in model.named_parameters():
        if param_filter is not None and not param_filter(name):
            continue
        numeric = finite_difference_grads(loss_fn, param, step=step,
                                          max_entries=max_entries, rng=rng)
        a_flat = analytic[name].reshape(-1)
        for i, fd in numeric.items():
            a = float(a_flat[i])
            assert abs(a - fd) <= atol + rtol * max(abs(a), abs(fd)), (
                f"gradient mismatch at {name}[{i}]: autograd {a}, "
                f"finite-difference {fd}"
            )
            checked += 1
    assert checked > 0
    return checked
