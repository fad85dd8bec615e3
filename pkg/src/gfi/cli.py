"""Command-line entry points.

Subcommands: explain, eval-localization, pointing-game, saliency-detect,
fgsm-demo, grad-baseline. Exit codes: 0 on success, 1 for input or
configuration problems, 2 for internal failures.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .backend import ModelAdapter
from .errors import (ConfigurationError, FormatError, GfiError,
                     IngestionError, InputError)
from .evaluation import (best_sweep_point, binarize, center_point_game,
                         fgsm_attack, iou, localization_sweep, pointing_game,
                         salient_object_scores, tightest_bbox)
from .perturbation import BaselineSpec
from .solver import GuidedInversionExplainer, InterpretConfig

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


class _Parser(argparse.ArgumentParser):
    # usage problems are input errors (exit 1), not internal errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _common_flags(parser):
    parser.add_argument("--arch", help="registered architecture name (default vgg19)")
    parser.add_argument("--target-class", type=int, dest="target_class")
    parser.add_argument("--baseline", choices=["gray", "noise", "blur"])
    parser.add_argument("--blur-radius", type=int, dest="blur_radius")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--delta", type=float)
    parser.add_argument("--lambda", type=float, dest="lam")
    parser.add_argument("--iters1", type=int)
    parser.add_argument("--iters2", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--layer", help="override the base channel layer l1")
    parser.add_argument("--inversion-layer", dest="inversion_layer",
                        help="override the inversion layer l0")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out-dir", dest="out_dir", default="gfi-out")
    parser.add_argument("--config", help="flat key = value config file; flags win")
    parser.add_argument("--no-pretrained", action="store_true",
                        help="torchvision models: skip downloading weights")


def build_parser():
    parser = _Parser(prog="gfi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="optimize masks for images")
    _common_flags(p)
    p.add_argument("paths", nargs="+", help="image files or directories")

    p = sub.add_parser("eval-localization", help="IOU localization protocol")
    _common_flags(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--images-root", dest="images_root")
    p.add_argument("--alpha", type=float, help="single threshold multiplier")
    p.add_argument("--sweep", action="store_true",
                   help="sweep alpha over 0.0..10.0 step 0.5")

    p = sub.add_parser("pointing-game", help="argmax-in-box accuracy")
    _common_flags(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--images-root", dest="images_root")

    p = sub.add_parser("saliency-detect",
                       help="P/R/F and MAE of inversion-stage masks vs gt masks")
    _common_flags(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--images-root", dest="images_root")

    p = sub.add_parser("fgsm-demo",
                       help="attack images, explain the clean prediction on both")
    _common_flags(p)
    p.add_argument("--epsilon", type=float, default=8.0 / 255.0)
    p.add_argument("--alpha", type=float, default=3.0,
                   help="threshold multiplier for box comparison")
    p.add_argument("paths", nargs="+")

    p = sub.add_parser("grad-baseline", help="plain input-gradient saliency")
    _common_flags(p)
    p.add_argument("paths", nargs="+")
    return parser


def _resolve(args):
    """Merge config-file values under explicit flags and build the run config."""
    file_vals = io.parse_config_file(args.config) if args.config else {}

    def pick(name, default):
        flag = getattr(args, name, None)
        return flag if flag is not None else file_vals.get(name, default)

    arch = pick("arch", "vgg19")
    cfg = InterpretConfig(
        stage1_iters=int(pick("iters1", 10)),
        stage2_iters=int(pick("iters2", 70)),
        lr=float(pick("lr", 1e-2)),
        gamma=float(pick("gamma", 10.0)),
        delta=float(pick("delta", 1.0)),
        lam=float(pick("lam", file_vals.get("lambda", 1.0))),
        baseline=BaselineSpec(kind=pick("baseline", "blur"),
                              blur_radius=int(pick("blur_radius", 11)),
                              noise_seed=int(pick("seed", 0))),
        inversion_layer=pick("inversion_layer", None),
        base_channel_layer=pick("layer", None),
        seed=int(pick("seed", 0)),
    )
    target_class = pick("target_class", None)
    return arch, cfg, (None if target_class is None else int(target_class))


def _collect_images(paths):
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir()
                                if q.suffix.lower() in IMAGE_SUFFIXES))
        elif p.exists():
            files.append(p)
        else:
            raise InputError(f"no such file or directory: {p}")
    if not files:
        raise InputError("no images found")
    return files


def _setup(args):
    arch, cfg, target_class = _resolve(args)
    adapter = ModelAdapter.from_registry(arch, pretrained=not args.no_pretrained)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return adapter, cfg, target_class, out_dir


def _manifest(args, adapter, cfg, eval_config=None):
    return io.RunManifest(architecture=adapter.entry.name,
                          config=io.interpret_config_to_dict(cfg),
                          seed=cfg.seed, command=args.command,
                          eval_config=eval_config)


def cmd_explain(args):
    adapter, cfg, target_class, out_dir = _setup(args)
    explainer = GuidedInversionExplainer(adapter)
    manifest = _manifest(args, adapter, cfg)
    t0 = time.perf_counter()
    for path in _collect_images(args.paths):
        x = io.load_image(path, adapter.entry)
        result = explainer.explain(x, c=target_class, cfg=cfg)
        stem = out_dir / path.stem
        mask_file = f"{stem}.mask.gfim"
        io.save_mask(mask_file, np.clip(result.mask, 0.0, 1.0))
        io.render_overlay(x, result.mask, f"{stem}.overlay.png", f"{stem}.mask.png")
        manifest.add_image(
            image=str(path), mask=mask_file, overlay=f"{stem}.overlay.png",
            predicted_class=result.predicted_class,
            predicted_prob=result.predicted_prob,
            target_class=result.target_class,
            degenerate=result.degenerate_flag,
            wall_time_seconds=result.wall_time_seconds)
        print(f"{path}: class {result.target_class} "
              f"(predicted {result.predicted_class} "
              f"p={result.predicted_prob:.3f}) -> {mask_file}")
    manifest.total_wall_time_seconds = time.perf_counter() - t0
    manifest.save(out_dir / "manifest.json")
    return 0


def _class_index(label):
    try:
        return int(label)
    except (TypeError, ValueError):
        raise InputError(
            f"annotation label {label!r} is not a class index; remap labels "
            f"to integers for the target model") from None


def _record_mask_fn(adapter, cfg, explainer):
    cache = {}

    def mask_fn(record, label):
        key = (record.image_id, label)
        if key not in cache:
            if record.image_path is None:
                raise InputError(f"record {record.image_id} has no image path; "
                                 f"pass --images-root")
            x = io.load_image(record.image_path, adapter.entry)
            cache[key] = explainer.explain(x, c=_class_index(label), cfg=cfg).mask
        return cache[key]

    return mask_fn


def cmd_eval_localization(args):
    adapter, cfg, _, out_dir = _setup(args)
    records = io.ingest_annotations(args.annotations, adapter.entry.input_size,
                                    images_root=args.images_root)
    explainer = GuidedInversionExplainer(adapter)
    mask_fn = _record_mask_fn(adapter, cfg, explainer)
    alphas = None if args.sweep or args.alpha is None else [args.alpha]
    points = localization_sweep(records, mask_fn, alphas=alphas)
    best = best_sweep_point(points)

    if args.sweep or args.alpha is None:
        with open(out_dir / "sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "error", "n_images", "n_skipped"])
            for pt in points:
                writer.writerow([pt.alpha, pt.error, pt.n_images, pt.n_skipped])
        print(f"wrote {out_dir / 'sweep.csv'} ({len(points)} rows)")

    report = {
        "best_alpha": best.alpha,
        "best_error": best.error,
        "curve": [{"alpha": p.alpha, "error": p.error, "n_images": p.n_images,
                   "n_skipped": p.n_skipped} for p in points],
        "rows": [{"image": r.image_id, "label": str(r.label), "alpha": r.alpha,
                  "iou": r.iou, "success": r.success, "box": r.predicted_box}
                 for r in best.rows],
    }
    manifest = _manifest(args, adapter, cfg,
                         eval_config={"alphas": [p.alpha for p in points]})
    manifest.save(out_dir / "manifest.json")
    with open(out_dir / "localization.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"localization error {best.error:.3f} at alpha={best.alpha} "
          f"({best.n_images} instances, {best.n_skipped} skipped)")
    return 0


def cmd_pointing_game(args):
    adapter, cfg, _, out_dir = _setup(args)
    records = io.ingest_annotations(args.annotations, adapter.entry.input_size,
                                    images_root=args.images_root)
    explainer = GuidedInversionExplainer(adapter)
    ours = pointing_game(records, _record_mask_fn(adapter, cfg, explainer))
    center = center_point_game(records, adapter.entry.input_size)
    report = {
        "mean_accuracy": ours.mean_accuracy,
        "per_class": {str(k): v for k, v in ours.per_class.items()},
        "hits": ours.hits, "misses": ours.misses,
        "center_baseline": {"mean_accuracy": center.mean_accuracy,
                            "hits": center.hits, "misses": center.misses},
    }
    _manifest(args, adapter, cfg).save(out_dir / "manifest.json")
    with open(out_dir / "pointing_game.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"pointing game: ours {ours.mean_accuracy:.3f} "
          f"vs center {center.mean_accuracy:.3f}")
    return 0


def cmd_saliency_detect(args):
    adapter, cfg, _, out_dir = _setup(args)
    records = io.ingest_annotations(args.annotations, adapter.entry.input_size,
                                    images_root=args.images_root)
    explainer = GuidedInversionExplainer(adapter)
    rows = []
    for record in records:
        if record.image_path is None:
            raise InputError(f"record {record.image_id} has no image path; "
                             f"pass --images-root")
        x = io.load_image(record.image_path, adapter.entry)
        stage1 = explainer.run_stage1(x, cfg)
        gt = io.load_gt_mask(record, adapter.entry.input_size)
        scores = salient_object_scores(stage1.mask, gt)
        rows.append({"image": record.image_id, **scores})
    report = {
        "mean": {k: float(np.mean([r[k] for r in rows]))
                 for k in ("precision", "recall", "f_measure", "mae")},
        "rows": rows,
    }
    _manifest(args, adapter, cfg).save(out_dir / "manifest.json")
    with open(out_dir / "saliency_detect.json", "w") as fh:
        json.dump(report, fh, indent=2)
    m = report["mean"]
    print(f"salient-object detection: P={m['precision']:.3f} R={m['recall']:.3f} "
          f"F={m['f_measure']:.3f} MAE={m['mae']:.3f}")
    return 0


def cmd_fgsm_demo(args):
    adapter, cfg, target_class, out_dir = _setup(args)
    explainer = GuidedInversionExplainer(adapter)
    summary = []
    for path in _collect_images(args.paths):
        x = io.load_image(path, adapter.entry)
        clean_probs = adapter.class_prob(x)
        true_class = target_class if target_class is not None else int(clean_probs.argmax())
        adv = fgsm_attack(x, true_class, args.epsilon, adapter)
        adv_probs = adapter.class_prob(adv)
        adv_class = int(adv_probs.argmax())

        clean_res = explainer.explain(x, c=true_class, cfg=cfg)
        adv_res = explainer.explain(adv, c=true_class, cfg=cfg)
        stem = out_dir / path.stem
        io.render_overlay(x, clean_res.mask, f"{stem}.clean.png")
        io.render_overlay(adv, adv_res.mask, f"{stem}.adversarial.png")

        clean_box = tightest_bbox(binarize(clean_res.mask, args.alpha))
        adv_box = tightest_bbox(binarize(adv_res.mask, args.alpha))
        box_iou = (0.0 if clean_box is None or adv_box is None
                   else iou(clean_box, adv_box))
        summary.append({
            "image": str(path), "true_class": true_class,
            "clean_prob": float(clean_probs[true_class]),
            "adversarial_class": adv_class,
            "adversarial_prob": float(adv_probs[adv_class]),
            "flipped": adv_class != true_class,
            "explanation_box_iou": box_iou,
        })
        print(f"{path}: {true_class} -> {adv_class} "
              f"({'flipped' if adv_class != true_class else 'held'}), "
              f"box IOU {box_iou:.2f}")
    manifest = _manifest(args, adapter, cfg,
                         eval_config={"epsilon": args.epsilon, "alpha": args.alpha})
    manifest.save(out_dir / "manifest.json")
    with open(out_dir / "fgsm_demo.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return 0


def cmd_grad_baseline(args):
    adapter, cfg, target_class, out_dir = _setup(args)
    for path in _collect_images(args.paths):
        x = io.load_image(path, adapter.entry)
        c = target_class if target_class is not None else int(adapter.class_prob(x).argmax())
        saliency = adapter.vanilla_gradient_saliency(x, c)
        stem = out_dir / path.stem
        io.save_mask(f"{stem}.grad.gfim", np.clip(saliency, 0.0, 1.0))
        io.render_overlay(x, saliency, f"{stem}.grad.png")
        print(f"{path}: class {c} -> {stem}.grad.gfim")
    return 0


_COMMANDS = {
    "explain": cmd_explain,
    "eval-localization": cmd_eval_localization,
    "pointing-game": cmd_pointing_game,
    "saliency-detect": cmd_saliency_detect,
    "fgsm-demo": cmd_fgsm_demo,
    "grad-baseline": cmd_grad_baseline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (InputError, IngestionError, FormatError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GfiError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
