"""Command line entry point: ``decoupled-attention <verb> [flags]``.

Verbs: gen, train, annotate, refine, eval, sweep, ablate, run. Settings
come from ``--config`` (an experiment JSON) with individual flags on top.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import annotate, dten, metrics, pipeline
from .crf import argmax_mask, mean_field, restrict
from .errors import ConfigError, ContractError, DataError, DimensionError
from .model import load_checkpoint, save_checkpoint
from .synthetic import generate, load_dataset, scene_id, write_dataset

log = logging.getLogger("decoupled_attention")


def build_spec(args) -> pipeline.ExperimentSpec:
    base = {}
    if getattr(args, "config", None):
        try:
            base = dten.read_json(args.config)
        except DataError as exc:
            raise ConfigError(str(exc)) from exc
    spec = pipeline.ExperimentSpec.from_dict(base)
    changes = {}
    for flag, key in (
        ("seed", "seed"),
        ("dropout", "dropout_rate"),
        ("tau", "tau"),
        ("thr_fg", "thr_fg"),
        ("thr_bg", "thr_bg"),
        ("variant", "variant"),
        ("workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "no_crf", False):
        changes["use_crf"] = False
    if getattr(args, "rates", None):
        changes["dropout_rates"] = [float(r) for r in args.rates.split(",")]
    if getattr(args, "crf_iters", None) is not None:
        crf = spec.crf.to_dict()
        crf["n_iters"] = args.crf_iters
        changes["crf"] = crf
    return spec.replace(**changes) if changes else spec


def _scenes(args, spec):
    """Scenes from --data, or generated in memory from the config."""
    if getattr(args, "data", None):
        scenes, manifest = load_dataset(args.data)
        return scenes, manifest["n_classes"], manifest.get("class_names"), [e["id"] for e in manifest["scenes"]]
    cfg = spec.dataset
    return generate(cfg), cfg.n_classes, cfg.class_names(), [scene_id(i) for i in range(cfg.count)]


def cmd_gen(args, spec):
    cfg = spec.dataset
    scenes = generate(cfg)
    path = write_dataset(scenes, cfg, args.out)
    print(f"wrote {len(scenes)} scenes to {path}")


def cmd_train(args, spec):
    scenes, n_classes, names, _ = _scenes(args, spec)
    params, curve = pipeline.train_model(scenes, spec, n_classes, names)
    out = Path(args.out)
    save_checkpoint(params, out)
    dten.write_json(out / "loss_curve.json", {"loss": curve, "spec": spec.to_dict()})
    print(f"final epoch loss {curve[-1]:.6f}; checkpoint in {out}")


def cmd_annotate(args, spec):
    scenes, n_classes, names, ids = _scenes(args, spec)
    params = load_checkpoint(args.model)
    if params.depth != scenes[0].features.shape[2] or params.n_classes != n_classes - 1:
        raise DataError("checkpoint does not fit the dataset")
    spec = spec.replace(variant=params.variant)
    results = pipeline.annotate_scenes(scenes, params, spec)
    entries = pipeline.write_annotations(args.out, scenes, results, names, ids)
    dten.write_json(Path(args.out) / "annotations.json", {"variant": params.variant, "scenes": entries})
    print(f"annotated {len(entries)} scenes into {args.out}")


def _annotations(path):
    path = Path(path)
    manifest = dten.read_json(path / "annotations.json")
    return manifest, path


def cmd_refine(args, spec):
    scenes, n_classes, names, ids = _scenes(args, spec)
    manifest, base = _annotations(args.annotations)
    kind = args.kind or pipeline.primary_kind(manifest["variant"])
    by_id = {e["id"]: e for e in manifest["scenes"]}
    out = Path(args.out)
    refined_paths = {}
    for sid, scene in zip(ids, scenes):
        if sid not in by_id:
            raise DataError(f"scene {sid} missing from annotations")
        mask = annotate.read_mask(base / by_id[sid]["masks"][kind])
        present = annotate.present_classes(scene.labels)
        prob = annotate.build_unary(mask, scene.labels, spec.tau, n_classes)
        dten.write(out / "unary" / f"{sid}.dten", prob, {"axes": ["row", "col", "class"], "class_names": names})
        refined = argmax_mask(mean_field(restrict(prob, present), scene.image, spec.crf), present)
        rel = Path("refined") / f"{sid}.png"
        annotate.write_mask(out / rel, refined, names)
        refined_paths[sid] = str(rel)
    dten.write_json(out / "refined.json", {"kind": kind, "crf": spec.crf.to_dict(), "tau": spec.tau, "masks": refined_paths})
    print(f"refined {len(refined_paths)} masks into {out}")


def _mask_sets(path: Path) -> dict[str, dict[str, str]]:
    """kind -> {scene id -> mask path} for an annotate or refine output dir."""
    sets = {}
    if (path / "annotations.json").exists():
        manifest = dten.read_json(path / "annotations.json")
        for e in manifest["scenes"]:
            for kind, rel in e["masks"].items():
                sets.setdefault(kind, {})[e["id"]] = str(path / rel)
            if "refined" in e:
                sets.setdefault("refined", {})[e["id"]] = str(path / e["refined"])
    if (path / "refined.json").exists():
        for sid, rel in dten.read_json(path / "refined.json")["masks"].items():
            sets.setdefault("refined", {})[sid] = str(path / rel)
    if not sets:
        raise DataError(f"no masks found under {path}")
    return sets


def cmd_eval(args, spec):
    scenes, n_classes, names, ids = _scenes(args, spec)
    report = {"variants": {}, "per_class": {}}
    gt = dict(zip(ids, (s.mask for s in scenes)))
    for kind, paths in _mask_sets(Path(args.masks)).items():
        missing = set(ids) - set(paths)
        if missing:
            raise DataError(f"{kind}: no mask for {sorted(missing)[:3]}")
        scored = metrics.evaluate(
            ((annotate.read_mask(paths[sid]), gt[sid]) for sid in ids), n_classes, spec.include_background
        )
        report["variants"][kind] = scored["mean"]
        report["per_class"][kind] = scored["per_class"]
    text = pipeline.format_variant_table(report)
    for kind, per_class in report["per_class"].items():
        text += "\n\n" + metrics.format_table({"per_class": per_class, "mean": report["variants"][kind]}, names, kind)
    if args.out:
        pipeline.write_report(args.out, report, text)
    print(text)


def cmd_sweep(args, spec):
    scenes, n_classes, _, _ = _scenes(args, spec)
    sweep = pipeline.run_dropout_sweep(scenes, spec, n_classes=n_classes)
    text = pipeline.format_sweep_table(sweep)
    if args.out:
        pipeline.write_report(args.out, sweep, text, stem="sweep")
    print(text)


def cmd_ablate(args, spec):
    scenes, n_classes, _, _ = _scenes(args, spec)
    result = pipeline.run_ablation(scenes, spec, n_classes=n_classes)
    text = pipeline.format_ablation_table(result)
    if args.out:
        pipeline.write_report(args.out, result, text, stem="ablation")
    print(text)


def cmd_run(args, spec):
    scenes, n_classes, names, _ = _scenes(args, spec)
    report = pipeline.run_pipeline(scenes, spec, n_classes, out=args.out, class_names=names)
    print(pipeline.format_variant_table(report))


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "annotate": cmd_annotate,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "run": cmd_run,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset directory written by 'gen' (default: generate in memory)")
    common.add_argument("--dropout", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--thr-fg", dest="thr_fg", type=float)
    common.add_argument("--thr-bg", dest="thr_bg", type=float)
    common.add_argument("--crf-iters", dest="crf_iters", type=int)
    common.add_argument("--variant", choices=["decoupled", "conventional", "single-stream"])
    common.add_argument("--no-crf", dest="no_crf", action="store_true")
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="decoupled-attention", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train a model and save a checkpoint")
    p = sub.add_parser("annotate", parents=[common], help="attention maps and raw pseudo-masks")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p = sub.add_parser("refine", parents=[common], help="CRF-refine pseudo-masks")
    p.add_argument("--annotations", required=True, help="output directory of 'annotate'")
    p.add_argument("--kind", help="mask kind to refine (default: merged / variant)")
    p = sub.add_parser("eval", parents=[common], help="score masks against ground truth")
    p.add_argument("--masks", required=True, help="output directory of 'annotate', 'refine' or 'run'")
    p = sub.add_parser("sweep", parents=[common], help="dropout-rate sweep")
    p.add_argument("--rates", help="comma-separated dropout rates")
    sub.add_parser("ablate", parents=[common], help="decoupled vs conventional vs single-stream")
    sub.add_parser("run", parents=[common], help="train, annotate, refine and evaluate")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command in ("gen", "train", "annotate", "refine") and not args.out:
        print(f"error: {args.command} needs --out", file=sys.stderr)
        return 2
    try:
        spec = build_spec(args)
        COMMANDS[args.command](args, spec)
    except (ConfigError, ContractError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
