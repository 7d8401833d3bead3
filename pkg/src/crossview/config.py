"""Model/training configuration, named presets, and YAML parsing.

All hyperparameters live in two frozen dataclasses so that a config can be
hashed, compared, serialized, and round-tripped losslessly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    # feature-map geometry: channels x height x width
    channels: int = 8
    height: int = 1
    width: int = 5
    heads: int = 2
    steps: int = 2
    backbone_widths: tuple = (8, 8)
    latent_dim: int = 10
    # input geometry
    ground_size: tuple = (16, 64)
    aerial_size: int = 32
    polar: bool = True
    # architecture switches
    cmi_enabled: bool = True
    transformer_enabled: bool = True
    shared_generators: bool = True
    shared_attention: bool = False
    output_projection: bool = True
    stop_gradient_targets: bool = True
    literal_residual_norm: bool = True
    zero_knowledge: bool = False
    attn_dropout: float = 0.0

    @property
    def token_dim(self):
        return self.channels * self.height

    @property
    def descriptor_dim(self):
        return self.channels * self.height * self.width

    @property
    def aerial_input_size(self):
        """Spatial size of the aerial image as seen by the aerial tower."""
        if self.polar:
            return tuple(self.ground_size)
        return (self.aerial_size, self.aerial_size)

    def validate(self):
        for key in ("channels", "height", "width", "heads", "latent_dim"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.channels % self.heads != 0:
            raise ConfigError(
                f"channels ({self.channels}) must be divisible by "
                f"heads ({self.heads})"
            )
        if not self.backbone_widths:
            raise ConfigError("backbone_widths must be non-empty")
        if any(w < 1 for w in self.backbone_widths):
            raise ConfigError(f"backbone_widths entries must be >= 1, got {self.backbone_widths}")
        if len(self.ground_size) != 2 or any(s < 2 for s in self.ground_size):
            raise ConfigError(f"ground_size must be two sizes >= 2, got {self.ground_size}")
        if self.aerial_size < 2:
            raise ConfigError(f"aerial_size must be >= 2, got {self.aerial_size}")
        if not 0.0 <= self.attn_dropout < 1.0:
            raise ConfigError(f"attn_dropout must be in [0, 1), got {self.attn_dropout}")
        return self


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 16
    epochs: int = 150
    seed: int = 0
    gen_weight: float = 0.05
    gamma: float = 10.0
    precision: int = 32
    checkpoint_every: int = 10
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 2:
            raise ConfigError(
                f"batch_size must be >= 2 (triplet mining needs a negative), got {self.batch_size}"
            )
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.gen_weight < 0:
            raise ConfigError(f"gen_weight must be >= 0, got {self.gen_weight}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        self.model.validate()
        return self


# Desk-scale preset: the whole test suite runs on CPU in minutes.
TOY = TrainConfig(
    lr=1e-3,
    batch_size=8,
    epochs=40,
    seed=0,
    model=ModelConfig(),
)

# Full-scale preset matching the published training protocol.
PAPER = TrainConfig(
    lr=1e-5,
    batch_size=16,
    epochs=150,
    seed=0,
    model=ModelConfig(
        channels=384,
        height=1,
        width=20,
        heads=6,
        steps=6,
        backbone_widths=(64, 128, 256, 512, 512),
        latent_dim=1920,
        ground_size=(128, 512),
        aerial_size=512,
    ),
)

PRESETS = {"toy": TOY, "paper": PAPER}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _build(dc_type, values, context):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(values, dict):
        raise ConfigError(f"{context} section must be a mapping, got {type(values).__name__}")
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    kwargs = {}
    for key, val in values.items():
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    return kwargs


def parse_config(text):
    """Parse a YAML config document into a validated TrainConfig.

    Layout: optional top-level ``preset`` plus ``model`` and ``train``
    override sections. CLI flags and environment overrides are applied by
    the caller, on top of the parsed result.
    """
    doc = yaml.safe_load(text)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    unknown = set(doc) - {"preset", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    base = preset(doc["preset"]) if "preset" in doc else TrainConfig(model=ModelConfig())
    model = base.model
    if "model" in doc:
        model = replace(model, **_build(ModelConfig, doc["model"], "model"))
    train = base
    if "train" in doc:
        overrides = _build(TrainConfig, doc["train"], "train")
        if "model" in overrides:
            raise ConfigError("model settings belong in the top-level 'model' section")
        train = replace(train, **overrides)
    train = replace(train, model=model)
    return train.validate()


def serialize_config(cfg):
    """Serialize a TrainConfig to YAML such that parse_config round-trips it."""
    train = dataclasses.asdict(cfg)
    model = train.pop("model")
    for section in (train, model):
        for key, val in section.items():
            if isinstance(val, tuple):
                section[key] = list(val)
    return yaml.safe_dump({"model": model, "train": train}, sort_keys=True)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def cmi_variants(base):
    """The three-candidate comparison grid: plain towers, cross-attention
    with self-knowledge, and the full generatively-supported model."""
    base.validate()
    return [
        ("backbone-only", replace(base, transformer_enabled=False, cmi_enabled=False)),
        ("no-cmi", replace(base, transformer_enabled=True, cmi_enabled=False)),
        ("cmi", replace(base, transformer_enabled=True, cmi_enabled=True)),
    ]


def step_sweep(base, steps=(1, 3, 6, 9)):
    """Recurrence-depth sweep for the fully-equipped model."""
    base.validate()
    return [
        (f"cmi-L{n}", replace(base, steps=n, transformer_enabled=True, cmi_enabled=True))
        for n in steps
    ]


def ablation_variants(base, steps=(1, 3, 6, 9)):
    """Full ablation grid: candidate comparison plus recurrence sweep.

    Names are unique; the depth sweep reuses the full model so the
    base-depth entry appears once under its sweep name.
    """
    variants = cmi_variants(base)
    seen = {cfg for _, cfg in variants}
    for name, cfg in step_sweep(base, steps):
        if cfg in seen:
            continue
        seen.add(cfg)
        variants.append((name, cfg))
    names = [n for n, _ in variants]
    assert len(names) == len(set(names))
    return variants
