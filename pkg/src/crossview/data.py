"""Dataset ingestion, synthetic paired-scene generation, and the polar warp.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1]. Pairs
loaded from disk are read lazily so that large list files ingest quickly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

# fixed standardization constants applied at model input
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


def _load_image(source):
    if isinstance(source, np.ndarray):
        return source
    arr = np.asarray(Image.open(source).convert("RGB"), dtype=np.float64) / 255.0
    return arr


def _validate_image(arr, name):
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"{name} image must be HxWx3, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"{name} image is empty")
    return arr


@dataclass
class ImagePair:
    """A ground panorama and its geo-matched aerial image."""

    id: str
    ground_source: object  # ndarray or path
    aerial_source: object
    _ground: np.ndarray = field(default=None, repr=False, compare=False)
    _aerial: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def ground(self):
        if self._ground is None:
            self._ground = _validate_image(_load_image(self.ground_source), "ground")
        return self._ground

    @property
    def aerial(self):
        if self._aerial is None:
            self._aerial = _validate_image(_load_image(self.aerial_source), "aerial")
        return self._aerial


@dataclass
class DatasetSplit:
    pairs: list
    role: str = "train"

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise DataError(f"split role must be 'train' or 'test', got {self.role!r}")
        ids = [p.id for p in self.pairs]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate pair ids within a split")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def polar_transform(aerial, out_h, out_w):
    """Warp a square top-down image into a panorama-like strip.

    Output pixel (i, j) samples the source at radius (S/2)*(out_h-i)/out_h
    from the center and angle 2*pi*j/out_w, with angle 0 at image north and
    a clockwise sweep:

        x = S/2 - (S/2) * ((out_h - i)/out_h) * cos(2*pi*j/out_w)
        y = S/2 + (S/2) * ((out_h - i)/out_h) * sin(2*pi*j/out_w)

    Sampling is bilinear; locations outside the source are zero-filled.
    """
    aerial = np.asarray(aerial, dtype=np.float64)
    _validate_image(aerial, "aerial")
    S = aerial.shape[0]
    if aerial.shape[0] != aerial.shape[1]:
        raise ConfigError(
            f"polar transform requires a square aerial image, got {aerial.shape[:2]}"
        )
    if S < 2:
        raise ConfigError(f"aerial side must be >= 2, got {S}")
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output size must be >= 1, got ({out_h}, {out_w})")

    i = np.arange(out_h, dtype=np.float64)[:, None]
    j = np.arange(out_w, dtype=np.float64)[None, :]
    radius = (S / 2.0) * ((out_h - i) / out_h)
    angle = 2.0 * np.pi * j / out_w
    x = S / 2.0 - radius * np.cos(angle)
    y = S / 2.0 + radius * np.sin(angle)

    x0 = np.floor(x)
    y0 = np.floor(y)
    wx = x - x0
    wy = y - y0

    out = np.zeros((out_h, out_w, 3), dtype=np.float64)
    for dx, dy, weight in (
        (0, 0, (1.0 - wx) * (1.0 - wy)),
        (0, 1, (1.0 - wx) * wy),
        (1, 0, wx * (1.0 - wy)),
        (1, 1, wx * wy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        inside = (xi >= 0) & (xi <= S - 1) & (yi >= 0) & (yi <= S - 1)
        xi_c = np.clip(xi, 0, S - 1).astype(np.intp)
        yi_c = np.clip(yi, 0, S - 1).astype(np.intp)
        sample = aerial[xi_c, yi_c] * inside[..., None]
        out += weight[..., None] * sample
    return out


def standardize(image):
    """[0,1] image to zero-centered model input with fixed constants."""
    return (np.asarray(image, dtype=np.float64) - PIXEL_MEAN) / PIXEL_STD


@dataclass(frozen=True)
class SyntheticSpec:
    count: int
    seed: int = 0
    noise_level: float = 0.02
    scene_complexity: int = 4
    aerial_size: int = 32
    ground_size: tuple = (16, 64)

    def validate(self):
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.noise_level < 0:
            raise ConfigError(f"noise_level must be >= 0, got {self.noise_level}")
        if self.scene_complexity < 1:
            raise ConfigError(f"scene_complexity must be >= 1, got {self.scene_complexity}")
        if self.aerial_size < 4:
            raise ConfigError(f"aerial_size must be >= 4, got {self.aerial_size}")
        return self


def _render_scene(rng, size, n_primitives):
    """Colored discs over a smooth two-way gradient background."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    c0 = rng.uniform(0.1, 0.5, size=3)
    c1 = rng.uniform(0.1, 0.5, size=3)
    img = c0[None, None, :] * yy[..., None] + c1[None, None, :] * xx[..., None] + 0.2
    for _ in range(n_primitives):
        cx, cy = rng.uniform(0.1, 0.9, size=2) * size
        r = rng.uniform(0.08, 0.22) * size
        color = rng.uniform(0.0, 1.0, size=3)
        mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 <= r * r
        img[mask] = color
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(spec):
    """Render `count` matched scene pairs: a top-down view and the polar
    panorama of the same primitive layout, each with independent noise.

    Pure function of the spec: identical specs yield identical datasets.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    out_h, out_w = spec.ground_size
    pairs = []
    for idx in range(spec.count):
        scene = _render_scene(rng, spec.aerial_size, spec.scene_complexity)
        ground = polar_transform(scene, out_h, out_w)
        if spec.noise_level > 0:
            aerial = np.clip(scene + rng.normal(0.0, spec.noise_level, scene.shape), 0, 1)
            ground = np.clip(ground + rng.normal(0.0, spec.noise_level, ground.shape), 0, 1)
        else:
            aerial = scene
        pairs.append(
            ImagePair(
                id=f"synth-{spec.seed}-{idx:04d}",
                ground_source=ground,
                aerial_source=aerial,
            )
        )
    return DatasetSplit(pairs=pairs, role="train")


def _to_png(arr, path):
    Image.fromarray(np.clip(arr * 255.0 + 0.5, 0, 255).astype(np.uint8)).save(path)


def save_synthetic(split, spec, out_dir):
    """Persist a synthetic split as lossless PNGs plus a JSONL manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for idx, pair in enumerate(split):
            gname = f"ground_{idx:04d}.png"
            aname = f"aerial_{idx:04d}.png"
            _to_png(pair.ground, out_dir / gname)
            _to_png(pair.aerial, out_dir / aname)
            fh.write(
                json.dumps(
                    {
                        "id": pair.id,
                        "ground": gname,
                        "aerial": aname,
                        "seed": spec.seed,
                        "count": spec.count,
                        "noise_level": spec.noise_level,
                        "scene_complexity": spec.scene_complexity,
                        "aerial_size": spec.aerial_size,
                        "ground_size": list(spec.ground_size),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return manifest


def load_synthetic(root, role="train"):
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise DataError(f"no manifest.jsonl under {root}")
    pairs = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            for key in ("ground", "aerial"):
                if not (root / row[key]).is_file():
                    raise DataError(f"manifest row {line_no}: missing file {row[key]}")
            pairs.append(
                ImagePair(
                    id=row["id"],
                    ground_source=root / row["ground"],
                    aerial_source=root / row["aerial"],
                )
            )
    if not pairs:
        raise DataError(f"empty manifest {manifest}")
    return DatasetSplit(pairs=pairs, role=role)


def load_cvusa_style(root, list_file, role="train"):
    """Ingest a CSV pair list: `aerial_path,ground_path` per row, paths
    relative to root. Preserves row order; ids combine row index and
    ground filename."""
    root = Path(root)
    pairs = []
    with open(list_file, "r", encoding="utf-8") as fh:
        for row_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise DataError(f"row {row_no}: expected 'aerial_path,ground_path', got {line!r}")
            aerial_rel, ground_rel = parts[0].strip(), parts[1].strip()
            aerial_path = root / aerial_rel
            ground_path = root / ground_rel
            if not aerial_path.is_file():
                raise DataError(f"row {row_no}: missing aerial file {aerial_rel}")
            if not ground_path.is_file():
                raise DataError(f"row {row_no}: missing ground file {ground_rel}")
            pair_id = f"{row_no - 1:06d}-{Path(ground_rel).stem}"
            pairs.append(
                ImagePair(id=pair_id, ground_source=ground_path, aerial_source=aerial_path)
            )
    if not pairs:
        raise DataError(f"empty list file {list_file}")
    return DatasetSplit(pairs=pairs, role=role)
