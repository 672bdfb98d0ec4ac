"""Synthetic scenes standing in for backbone features.

Each foreground class present in a scene is one elliptical object. Its
feature channel carries weak evidence over the whole object plus a strong
compact bump (the "discriminative part") somewhere inside it. Extra
distractor channels hold blobs unrelated to any class. All features are
rectified and rounded to float32 so that in-memory scenes equal the ones
read back from disk.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dten
from .annotate import read_mask, write_mask
from .errors import ConfigError, DataError
from .rng import generator

PALETTE = np.array(
    [[200, 60, 50], [60, 170, 70], [50, 90, 210], [220, 200, 40], [170, 60, 190], [40, 190, 200]],
    dtype=np.float64,
)


@dataclass
class SyntheticConfig:
    count: int = 200
    height: int = 64
    width: int = 64
    n_classes: int = 4  # including background
    n_distractors: int = 4
    noise: float = 0.5
    class_priors: list[float] | None = None  # mean pixel fraction per foreground class
    presence: float = 0.5
    object_level: float = 2.0
    core_level: float = 6.0
    distractor_level: float = 3.0
    image_noise: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.n_classes < 2 or self.n_classes > len(PALETTE) + 1:
            raise ConfigError(f"n_classes must lie in 2..{len(PALETTE) + 1}")
        if self.height < 8 or self.width < 8:
            raise ConfigError("scenes must be at least 8x8")
        if self.class_priors is None:
            self.class_priors = [0.06] * (self.n_classes - 1)
        self.class_priors = [float(p) for p in self.class_priors]
        if len(self.class_priors) != self.n_classes - 1:
            raise ConfigError("need one prior per foreground class")
        if any(p <= 0 for p in self.class_priors) or sum(self.class_priors) >= 0.6:
            raise ConfigError("priors must be positive and leave room for background")
        if not 0 < self.presence <= 1:
            raise ConfigError("presence must lie in (0, 1]")

    @property
    def depth(self) -> int:
        return self.n_classes - 1 + self.n_distractors

    def to_dict(self) -> dict:
        return asdict(self)

    def class_names(self) -> list[str]:
        return ["background"] + [f"class{k}" for k in range(1, self.n_classes)]


@dataclass
class SyntheticScene:
    image: np.ndarray  # (H, W, 3) intensities in [0, 255]
    features: np.ndarray  # (H, W, D)
    mask: np.ndarray  # (H, W) uint8 ground truth
    labels: list[int] = field(default_factory=list)

    def y(self, n_classes: int) -> np.ndarray:
        out = np.zeros(n_classes - 1)
        out[[c - 1 for c in self.labels]] = 1.0
        return out


def _presence_matrix(cfg: SyntheticConfig) -> np.ndarray:
    rng = generator(cfg.seed, 10)
    k = cfg.n_classes - 1
    present = rng.random((cfg.count, k)) < cfg.presence
    empty = ~present.any(axis=1)
    present[empty, rng.integers(0, k, size=int(empty.sum()))] = True
    return present


def _ellipse(shape, center, semi) -> np.ndarray:
    r, c = np.ogrid[: shape[0], : shape[1]]
    return ((r - center[0]) / semi[0]) ** 2 + ((c - center[1]) / semi[1]) ** 2 <= 1.0


def _gauss(shape, center, sigma) -> np.ndarray:
    r, c = np.ogrid[: shape[0], : shape[1]]
    return np.exp(-((r - center[0]) ** 2 + (c - center[1]) ** 2) / (2.0 * sigma**2))


def _place(rng, shape, semi, taken, tries: int = 60):
    """Random non-overlapping position; the object shrinks if none is found."""
    H, W = shape
    while True:
        for _ in range(tries):
            center = (rng.uniform(semi[0], H - 1 - semi[0]), rng.uniform(semi[1], W - 1 - semi[1]))
            region = _ellipse(shape, center, semi)
            if region.any() and not (region & taken).any():
                return center, semi, region
        if max(semi) < 1.0:
            free = np.argwhere(~taken)
            r, c = free[rng.integers(len(free))]
            region = np.zeros(shape, dtype=bool)
            region[r, c] = True
            return (float(r), float(c)), (0.5, 0.5), region
        semi = (0.8 * semi[0], 0.8 * semi[1])


def make_scene(cfg: SyntheticConfig, index: int, present: np.ndarray, areas: np.ndarray) -> SyntheticScene:
    """One scene; ``areas`` gives the target pixel area per present class."""
    rng = generator(cfg.seed, 11, index)
    shape = (cfg.height, cfg.width)
    k = cfg.n_classes - 1
    mask = np.zeros(shape, dtype=np.uint8)
    feats = np.zeros(shape + (cfg.depth,))
    taken = np.zeros(shape, dtype=bool)
    labels = [c + 1 for c in range(k) if present[c]]
    for c in rng.permutation(labels):
        aspect = rng.uniform(0.6, 1.6)
        a = np.sqrt(areas[c - 1] / (np.pi * aspect))
        semi = (min(a, cfg.height / 2 - 1.5), min(a * aspect, cfg.width / 2 - 1.5))
        center, semi, region = _place(rng, shape, semi, taken)
        taken |= region
        mask[region] = c
        core_center = (
            center[0] + rng.uniform(-0.5, 0.5) * semi[0],
            center[1] + rng.uniform(-0.5, 0.5) * semi[1],
        )
        core = _gauss(shape, core_center, 0.35 * min(semi))
        feats[..., c - 1] += region * (cfg.object_level + cfg.core_level * core)
    for d in range(k, cfg.depth):
        for _ in range(rng.integers(1, 3)):
            center = (rng.uniform(0, cfg.height), rng.uniform(0, cfg.width))
            feats[..., d] += cfg.distractor_level * _gauss(shape, center, rng.uniform(2.0, 5.0))
    feats += rng.normal(0.0, cfg.noise, size=feats.shape)
    feats = np.maximum(feats, 0.0).astype(np.float32).astype(np.float64)

    image = np.full(shape + (3,), 110.0)
    for c in labels:
        image[mask == c] = PALETTE[c - 1]
    image += rng.normal(0.0, cfg.image_noise, size=image.shape)
    image = np.clip(image, 0, 255).astype(np.float32).astype(np.float64)
    return SyntheticScene(image=image, features=feats, mask=mask, labels=[int(c) for c in labels])


def generate(cfg: SyntheticConfig) -> list[SyntheticScene]:
    """All scenes of a dataset.

    Object areas are scaled by each class's realized presence rate and by a
    jitter renormalized to unit mean, so the mean pixel fraction of class c
    over the set tracks ``class_priors[c-1]`` up to rasterization error.
    """
    if cfg.count == 0:
        return []
    present = _presence_matrix(cfg)
    jitter = generator(cfg.seed, 12).uniform(0.75, 1.25, size=present.shape)
    n_pix = cfg.height * cfg.width
    areas = np.zeros(present.shape)
    for c in range(present.shape[1]):
        rows = present[:, c]
        if rows.any():
            j = jitter[rows, c] / jitter[rows, c].mean()
            areas[rows, c] = cfg.class_priors[c] * n_pix * cfg.count / rows.sum() * j
    return [make_scene(cfg, i, present[i], areas[i]) for i in range(cfg.count)]


def scene_id(index: int) -> str:
    return f"scene_{index:04d}"


def write_dataset(scenes, cfg: SyntheticConfig, out) -> Path:
    """Write features/images (DTEN), ground-truth masks (PNG) and a manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = cfg.class_names()
    entries = []
    for i, scene in enumerate(scenes):
        sid = scene_id(i)
        feat = Path("scenes") / f"{sid}.features.dten"
        img = Path("scenes") / f"{sid}.image.dten"
        gt = Path("scenes") / f"{sid}.gt.png"
        dten.write(out / feat, scene.features, {"axes": ["row", "col", "feature"], "class_names": names})
        dten.write(out / img, scene.image, {"axes": ["row", "col", "rgb"]})
        write_mask(out / gt, scene.mask, names)
        entries.append({"id": sid, "features": str(feat), "image": str(img), "gt": str(gt), "labels": scene.labels})
    dten.write_json(out / "labels.json", {e["id"]: e["labels"] for e in entries})
    dten.write_json(
        out / "manifest.json",
        {"n_classes": cfg.n_classes, "class_names": names, "config": cfg.to_dict(), "scenes": entries},
    )
    return out / "manifest.json"


def load_dataset(root) -> tuple[list[SyntheticScene], dict]:
    root = Path(root)
    manifest_path = root / "manifest.json" if root.is_dir() else root
    if not manifest_path.exists():
        raise DataError(f"no manifest at {manifest_path}")
    manifest = dten.read_json(manifest_path)
    base = manifest_path.parent
    scenes = []
    for e in manifest["scenes"]:
        for key in ("features", "image", "gt"):
            if not (base / e[key]).exists():
                raise DataError(f"missing file {base / e[key]}")
        scenes.append(
            SyntheticScene(
                image=dten.read(base / e["image"]).astype(np.float64),
                features=dten.read(base / e["features"]).astype(np.float64),
                mask=read_mask(base / e["gt"]),
                labels=[int(c) for c in e["labels"]],
            )
        )
    return scenes, manifest
