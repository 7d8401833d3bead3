"""Full two-branch network: towers, generators, and the recurrent stack.

Each branch is processed independently at inference time: its cross-modal
knowledge is generated from its own features, so descriptors for a query
never depend on the other view's pixels. The branches interact during
training through the generation losses, which pull each generator's output
toward the other branch's actual features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .attention import RecurrentBranchStep
from .backbone import BranchTower, positional_encoding
from .errors import ConfigError
from .generator import CrossModalGenerator


@dataclass
class StepTrace:
    """Per-step record needed by the generation losses: the normalized
    features fed to the generator and the knowledge it produced."""

    normalized: torch.Tensor
    generated: torch.Tensor  # None when CMI is disabled
    attention: torch.Tensor  # None unless requested


class CrossViewNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.tower_ground = BranchTower(cfg, "ground")
        self.tower_aerial = BranchTower(cfg, "aerial")
        self.register_buffer(
            "pos_table", positional_encoding(cfg.channels, cfg.height, cfg.width)
        )
        if cfg.transformer_enabled:
            n_steps = 1 if cfg.shared_attention else cfg.steps
            self.steps_ground = nn.ModuleList(RecurrentBranchStep(cfg) for _ in range(n_steps))
            self.steps_aerial = nn.ModuleList(RecurrentBranchStep(cfg) for _ in range(n_steps))
            if cfg.cmi_enabled:
                n_gen = 1 if cfg.shared_generators else cfg.steps
                self.gen_to_aerial = nn.ModuleList(CrossModalGenerator(cfg) for _ in range(n_gen))
                self.gen_to_ground = nn.ModuleList(CrossModalGenerator(cfg) for _ in range(n_gen))

    def _step_module(self, branch, step):
        steps = self.steps_ground if branch == "ground" else self.steps_aerial
        return steps[0] if self.cfg.shared_attention else steps[step]

    def _generator(self, branch, step):
        # each branch generates the *other* modality's knowledge from its own features
        gens = self.gen_to_aerial if branch == "ground" else self.gen_to_ground
        return gens[0] if self.cfg.shared_generators else gens[step]

    def extract_features(self, images, branch):
        tower = self.tower_ground if branch == "ground" else self.tower_aerial
        return tower(images)

    def branch_forward(self, images, branch, keep_attention=False):
        """Run one branch end to end. Returns the final feature map and the
        per-step trace (empty when the recurrent stack is disabled)."""
        cfg = self.cfg
        features = self.extract_features(images, branch)
        if not cfg.transformer_enabled:
            return features, []
        current = features + self.pos_table
        trace = []
        for step in range(cfg.steps):
            module = self._step_module(branch, step)
            normalized = module.pre_norm(current)
            generated = None
            if cfg.zero_knowledge:
                knowledge = torch.zeros_like(normalized)
            elif cfg.cmi_enabled:
                generated = self._generator(branch, step)(normalized)
                knowledge = generated
            else:
                knowledge = normalized
            current, weights = module.update(normalized, knowledge)
            trace.append(
                StepTrace(
                    normalized=normalized,
                    generated=generated,
                    attention=weights.detach() if keep_attention else None,
                )
            )
        return current, trace

    def forward(self, ground, aerial, keep_attention=False):
        final_g, trace_g = self.branch_forward(ground, "ground", keep_attention)
        final_a, trace_a = self.branch_forward(aerial, "aerial", keep_attention)
        return final_g, final_a, trace_g, trace_a

    def descriptors(self, images, branch):
        """Flattened, L2-normalized representations for retrieval."""
        from .losses import l2_normalize

        final, _ = self.branch_forward(images, branch)
        return l2_normalize(final.reshape(final.shape[0], -1))


def build_model(cfg, precision=32):
    if precision not in (32, 64):
        raise ConfigError(f"precision must be 32 or 64, got {precision}")
    model = CrossViewNet(cfg)
    return model.double() if precision == 64 else model.float()


def attention_trace(model, images, branch):
    """Per-step attention weights for inspection, keyed by step and head."""
    with torch.no_grad():
        _, trace = model.branch_forward(images, branch, keep_attention=True)
    dump = []
    for step, entry in enumerate(trace):
        heads = entry.attention
        dump.append(
            {
                "step": step,
                "branch": branch,
                "heads": [heads[:, h].cpu().numpy().tolist() for h in range(heads.shape[1])],
            }
        )
    return dump
