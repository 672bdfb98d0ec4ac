"""End-to-end experiments: train, annotate, refine, evaluate, sweep, ablate.

Everything here works on in-memory scenes; the ``write_*`` helpers and the
CLI put the same results on disk.
"""
from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import annotate, dten, metrics
from .crf import CrfConfig, refine
from .errors import ConfigError
from .model import VARIANTS, ModelParams, class_maps, init_params, save_checkpoint
from .synthetic import SyntheticConfig, SyntheticScene, scene_id
from .train import TrainConfig, train

log = logging.getLogger(__name__)

SWEEP_RATES = [0.0, 0.3, 0.4, 0.5, 0.6, 0.7]
DECOUPLED_KINDS = ("expansive", "discriminative", "merged")


@dataclass
class ExperimentSpec:
    seed: int = 7
    dataset: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    crf: CrfConfig = field(default_factory=CrfConfig)
    variant: str = "decoupled"
    dropout_rate: float = 0.5
    eps: float = 0.1
    thr_fg: float = 0.2
    thr_bg: float = 0.3
    tau: float = 0.8
    use_crf: bool = True
    merge_normalization: str = "minmax"
    include_background: bool = False
    dropout_rates: list[float] = field(default_factory=lambda: list(SWEEP_RATES))
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.dropout_rate < 1.0 or any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ConfigError("dropout rates must lie in [0, 1)")
        if not 0.5 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0.5, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        if self.merge_normalization not in ("minmax", "spatial"):
            raise ConfigError("merge_normalization must be 'minmax' or 'spatial'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # one seed drives data, initialization and training
        self.dataset.seed = self.seed
        self.train.seed = self.seed

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            for key, typ in (("dataset", SyntheticConfig), ("train", TrainConfig), ("crf", CrfConfig)):
                if key in d and isinstance(d[key], dict):
                    d[key] = typ(**d[key])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ExperimentSpec":
        d = copy.deepcopy(self.to_dict())
        d.update(changes)
        return ExperimentSpec.from_dict(d)


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def train_model(scenes, spec: ExperimentSpec, n_classes: int, class_names=None):
    """Fit a fresh model of ``spec.variant``; returns (params, loss curve)."""
    if not scenes:
        raise ConfigError("cannot train on an empty dataset")
    depth = scenes[0].features.shape[2]
    params = init_params(
        depth,
        n_classes - 1,
        seed=spec.seed,
        variant=spec.variant,
        dropout_rate=spec.dropout_rate,
        eps=spec.eps,
        class_names=list(class_names or [])[1:],
    )
    data = [(s.features, s.y(n_classes)) for s in scenes]
    return train(data, spec.train, params)


def primary_kind(variant: str) -> str:
    return "merged" if variant == "decoupled" else variant


def annotate_scene(scene: SyntheticScene, params: ModelParams, spec: ExperimentSpec) -> dict:
    """Class maps and raw pseudo-masks for one scene.

    Returns {"maps": {kind: (H, W, C)}, "masks": {kind: (H, W) uint8}}.
    Decoupled models yield expansive, discriminative and merged kinds.
    """
    raw = class_maps(scene.features, params)
    p_hat = raw.pop("p_hat")
    if params.variant == "decoupled":
        A, S = raw["expansive"], raw["discriminative"]
        norm = spec.merge_normalization
        T = annotate.merged_map(A, S, p_hat, norm)
        maps = {"expansive": A, "discriminative": S, "merged": T}
    else:
        maps = raw
    masks = {
        k: annotate.generate_mask(m, scene.features, scene.labels, spec.thr_fg, spec.thr_bg) for k, m in maps.items()
    }
    return {"maps": maps, "masks": masks, "p_hat": p_hat}


def annotate_scenes(scenes, params: ModelParams, spec: ExperimentSpec) -> list[dict]:
    return _map(lambda s: annotate_scene(s, params, spec), scenes, spec.workers)


def refine_masks(scenes, masks, spec: ExperimentSpec, n_classes: int) -> list[np.ndarray]:
    def one(pair):
        scene, mask = pair
        return refine(mask, scene.labels, scene.image, spec.tau, n_classes, spec.crf)

    return _map(one, list(zip(scenes, masks)), spec.workers)


def evaluate_kinds(scenes, masks_by_kind: dict, n_classes: int, include_background: bool = False) -> dict:
    return {
        kind: metrics.evaluate(zip(masks, (s.mask for s in scenes)), n_classes, include_background)
        for kind, masks in masks_by_kind.items()
    }


def run_pipeline(scenes, spec: ExperimentSpec, n_classes: int | None = None, out=None, class_names=None) -> dict:
    """Train, annotate, optionally CRF-refine, and score the pseudo-masks.

    The report's ``variants`` block holds mS_IoU / mS_prec / mS_rec per mask
    kind (expansive, discriminative, merged for the decoupled model);
    ``final`` scores the masks that would be handed on for training, i.e.
    CRF-refined primary masks, or the raw ones when the CRF is disabled.
    """
    n_classes = n_classes or spec.dataset.n_classes
    params, curve = train_model(scenes, spec, n_classes, class_names)
    results = annotate_scenes(scenes, params, spec)
    kinds = list(results[0]["masks"]) if results else []
    masks_by_kind = {k: [r["masks"][k] for r in results] for k in kinds}
    main = primary_kind(spec.variant)
    refined = refine_masks(scenes, masks_by_kind[main], spec, n_classes) if spec.use_crf else None

    scored = evaluate_kinds(scenes, masks_by_kind, n_classes, spec.include_background)
    report = {
        "variant": spec.variant,
        "seed": spec.seed,
        "n_scenes": len(scenes),
        "loss_curve": curve,
        "variants": {k: v["mean"] for k, v in scored.items()},
        "per_class": {k: v["per_class"] for k, v in scored.items()},
        "crf": spec.use_crf,
    }
    final = refined if refined is not None else masks_by_kind[main]
    report["final"] = metrics.evaluate(
        zip(final, (s.mask for s in scenes)), n_classes, spec.include_background
    )["mean"]
    if out is not None:
        write_run(out, scenes, spec, params, results, refined, report, class_names)
    return report


def run_dropout_sweep(scenes, spec: ExperimentSpec, rates=None, n_classes: int | None = None) -> dict:
    """One model per dropout rate; raw (no CRF) mask scores per rate."""
    n_classes = n_classes or spec.dataset.n_classes
    rates = list(spec.dropout_rates if rates is None else rates)
    rows = []
    for rate in rates:
        sub = spec.replace(dropout_rate=float(rate), use_crf=False)
        params, curve = train_model(scenes, sub, n_classes)
        results = annotate_scenes(scenes, params, sub)
        kinds = list(results[0]["masks"])
        scored = evaluate_kinds(
            scenes, {k: [r["masks"][k] for r in results] for k in kinds}, n_classes, spec.include_background
        )
        rows.append({"rate": float(rate), "final_loss": curve[-1], "scores": {k: v["mean"] for k, v in scored.items()}})
        log.info("dropout %.2f: %s", rate, rows[-1]["scores"])
    return {"variant": spec.variant, "seed": spec.seed, "rows": rows}


def run_ablation(scenes, spec: ExperimentSpec, n_classes: int | None = None) -> dict:
    """Decoupled vs conventional vs single-stream, raw mask scores."""
    n_classes = n_classes or spec.dataset.n_classes
    out = {}
    for variant in VARIANTS:
        sub = spec.replace(variant=variant, use_crf=False)
        params, curve = train_model(scenes, sub, n_classes)
        results = annotate_scenes(scenes, params, sub)
        kinds = list(results[0]["masks"])
        scored = evaluate_kinds(
            scenes, {k: [r["masks"][k] for r in results] for k in kinds}, n_classes, spec.include_background
        )
        out[variant] = {"final_loss": curve[-1], "scores": {k: v["mean"] for k, v in scored.items()}}
    return {"seed": spec.seed, "variants": out}


def _pct(v):
    return "     -" if v is None else f"{100 * v:6.1f}"


def format_variant_table(report: dict) -> str:
    """Metrics as rows, mask kinds as columns."""
    kinds = list(report["variants"])
    width = max(14, *(len(k) for k in kinds))
    lines = [f"{'':8}" + "".join(f"{k:>{width}}" for k in kinds)]
    for m, label in (("prec", "mS_prec"), ("rec", "mS_rec"), ("iou", "mS_IoU")):
        lines.append(f"{label:8}" + "".join(f"{_pct(report['variants'][k][m]):>{width}}" for k in kinds))
    if "final" in report:
        tag = "final (crf)" if report.get("crf") else "final (raw)"
        f = report["final"]
        lines.append(f"{tag}: mS_prec {_pct(f['prec']).strip()}  mS_rec {_pct(f['rec']).strip()}  mS_IoU {_pct(f['iou']).strip()}")
    return "\n".join(lines)


def format_sweep_table(sweep: dict, kind: str | None = None) -> str:
    """Rates as columns, metrics as rows (merged masks unless ``kind`` given)."""
    kind = kind or primary_kind(sweep["variant"])
    rows = sweep["rows"]
    lines = ["DR      " + "".join(f"{r['rate']:>8.2f}" for r in rows)]
    for m, label in (("prec", "mS_prec"), ("rec", "mS_rec"), ("iou", "mS_IoU")):
        lines.append(f"{label:8}" + "".join(f"{_pct(r['scores'][kind][m]):>8}" for r in rows))
    return "\n".join(lines)


def format_ablation_table(ablation: dict) -> str:
    lines = [f"{'variant':16}{'masks':>16}{'mS_prec':>9}{'mS_rec':>9}{'mS_IoU':>9}"]
    for variant, res in ablation["variants"].items():
        for kind, s in res["scores"].items():
            lines.append(f"{variant:16}{kind:>16}{_pct(s['prec']):>9}{_pct(s['rec']):>9}{_pct(s['iou']):>9}")
    return "\n".join(lines)


def write_annotations(out, scenes, results, class_names=None, ids=None) -> list[dict]:
    """Per-scene A/S/T (DTEN) and raw masks (PNG); returns manifest entries."""
    out = Path(out)
    entries = []
    for i, (scene, res) in enumerate(zip(scenes, results)):
        sid = ids[i] if ids else scene_id(i)
        entry = {"id": sid, "labels": scene.labels, "maps": {}, "masks": {}}
        for kind, m in res["maps"].items():
            rel = Path("maps") / f"{sid}.{kind}.dten"
            dten.write(out / rel, m, {"axes": ["row", "col", "class"], "kind": kind})
            entry["maps"][kind] = str(rel)
        for kind, mask in res["masks"].items():
            rel = Path("masks") / f"{sid}.{kind}.png"
            annotate.write_mask(out / rel, mask, class_names)
            entry["masks"][kind] = str(rel)
        entries.append(entry)
    return entries


def write_refined(out, refined, ids, class_names=None) -> dict:
    out = Path(out)
    paths = {}
    for sid, mask in zip(ids, refined):
        rel = Path("refined") / f"{sid}.png"
        annotate.write_mask(out / rel, mask, class_names)
        paths[sid] = str(rel)
    return paths


def write_report(out, report: dict, text: str, stem: str = "report") -> None:
    out = Path(out)
    dten.write_json(out / f"{stem}.json", report)
    (out / f"{stem}.txt").write_text(text + "\n")


def write_run(out, scenes, spec, params, results, refined, report, class_names=None) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "model")
    dten.write_json(out / "spec.json", spec.to_dict())
    ids = [scene_id(i) for i in range(len(scenes))]
    entries = write_annotations(out, scenes, results, class_names, ids)
    if refined is not None:
        for entry, rel in zip(entries, write_refined(out, refined, ids, class_names).values()):
            entry["refined"] = rel
    dten.write_json(out / "annotations.json", {"variant": spec.variant, "scenes": entries})
    write_report(out, report, format_variant_table(report))
