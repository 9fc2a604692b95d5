"""Command-line entry point: ``percollfft <subcommand> [flags]``.

Subcommands follow the pipeline stages: ``synth`` renders a dataset,
``extract-features`` writes spectral features, ``train`` runs repeated
k-fold cross-validation, ``evaluate`` scores a checkpoint, ``predict``
classifies images and ``gradcam`` exports localisation heatmaps.

Failures print one JSON line on stderr and exit with 2 (configuration),
3 (data) or 4 (numerical/training).
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .dataset import CLASSES, CLASS_INDEX, load_manifest
from .errors import ConfigError, DataError, DimensionError, PercollError
from .images import encode_png, read_image
from .models import grad_cam, heatmap_to_uint8, predicted_class
from .spectral import image_features
from .synth import synth_dataset
from .training import cross_validate, evaluate, predict_scores, prepare_sample, prepare_samples

log = logging.getLogger("percollfft")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--backbone", choices=["alexnet-style", "vgg16-style", "tiny"])
    p.add_argument("--fusion", choices=["none", "early", "late"])
    p.add_argument("--folds", type=int, help="k for k-fold cross-validation")
    p.add_argument("--repeats", type=int, help="independent CV repeats")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--jobs", type=int, help="parallel fold workers (default 1)")
    p.add_argument("--checkpoint", help="model checkpoint to load")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common_flags()
    parser = _Parser(prog="percollfft", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--count", type=int, help="number of images (default 200)")

    p = sub.add_parser("extract-features", parents=[common], help="spectral features as JSON")
    p.add_argument("images", nargs="*", help="image files (default: the manifest)")

    sub.add_parser("train", parents=[common], help="repeated k-fold cross-validation")

    p = sub.add_parser("evaluate", parents=[common], help="metrics of a checkpoint")
    p.add_argument("--held-out", action="store_true",
                   help="only the records the checkpoint was not trained on")

    p = sub.add_parser("predict", parents=[common], help="class scores as JSON lines")
    p.add_argument("images", nargs="*")

    p = sub.add_parser("gradcam", parents=[common], help="Grad-CAM heatmaps as PNG")
    p.add_argument("images", nargs="*")
    p.add_argument("--target", help="class name to explain (default: predicted class)")
    p.add_argument("--overlay", action="store_true", help="red overlay instead of grayscale")
    return parser


def _overrides(args):
    return {
        "seed": args.seed,
        "jobs": args.jobs,
        "model.backbone": args.backbone,
        "model.fusion": args.fusion,
        "train.k_folds": args.folds,
        "train.repeats": args.repeats,
        "train.epochs": args.epochs,
        "train.lr": args.lr,
        "synth.count": getattr(args, "count", None),
        "paths.out": args.out,
        "paths.checkpoint": args.checkpoint,
        "paths.manifest": args.manifest,
    }


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_records(cfg):
    if cfg.manifest is None:
        raise ConfigError("paths.manifest is required (use --manifest)")
    return load_manifest(cfg.manifest).records


def _read_labelled(records):
    return [read_image(r.path, image_id=r.id, label=r.label) for r in records]


def _input_images(cfg, paths):
    """Images named on the command line, else every manifest record."""
    if paths:
        return [read_image(p) for p in paths], [str(p) for p in paths]
    records = _load_records(cfg)
    return _read_labelled(records), [str(r.path) for r in records]


def _need_checkpoint(cfg):
    if cfg.checkpoint is None:
        raise ConfigError("paths.checkpoint is required (use --checkpoint)")
    return load_checkpoint(cfg.checkpoint)


def _check_sizes(images, config):
    want = tuple(config.image_size)
    bad = [f"{im.id} is {im.height}x{im.width}" for im in images if (im.height, im.width) != want]
    if bad:
        raise DimensionError(f"expected {want[0]}x{want[1]} images: " + "; ".join(bad))


def cmd_synth(cfg, args):
    out = Path(cfg.out)
    cfg.write(out)
    images, _, manifest = synth_dataset(cfg.synth_count, cfg.seed, cfg.synth, out)
    counts = manifest.class_counts()
    log.info("wrote %d images to %s (%s)", len(images), out, counts)
    return {"images": len(images), "class_counts": counts, "manifest": str(out / "manifest.csv")}


def cmd_extract_features(cfg, args):
    images, _ = _input_images(cfg, args.images)
    n = cfg.model.spectral_window
    docs = [(im.id, image_features(im.pixels, n).to_json()) for im in images]
    out = Path(cfg.out)
    cfg.write(out)
    for image_id, doc in docs:
        _write_json(out / "features" / f"{image_id}.json", doc)
    return {"features": len(docs), "dir": str(out / "features")}


def cmd_train(cfg, args):
    records = _load_records(cfg)
    images = _read_labelled(records)
    samples = prepare_samples(images, cfg.model)
    out = Path(cfg.out)
    cfg.write(out)
    t0 = time.perf_counter()
    cv = cross_validate(cfg.model, samples, cfg.train, cfg.augment, jobs=cfg.jobs)
    elapsed = time.perf_counter() - t0
    history = []
    for fr in cv.folds:
        tag = f"repeat{fr.repeat}_fold{fr.fold}"
        meta = {"repeat": fr.repeat, "fold": fr.fold, "held_out": fr.test_ids,
                "manifest": str(cfg.manifest)}
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        save_checkpoint(fr.model, out / "checkpoints" / f"{tag}.pcfm", seed=fr.seed,
                        epoch=len(fr.epoch_loss), meta=meta)
        _write_json(out / "metrics" / f"{tag}.json", fr.metrics.to_json())
        history.append({"repeat": fr.repeat, "fold": fr.fold, "epoch_loss": fr.epoch_loss})
    for r, m in enumerate(cv.repeat_metrics):
        _write_json(out / "metrics" / f"repeat{r}.json", m.to_json())
    _write_json(out / "folds.json", [p.to_json() for p in cv.plans])
    _write_json(out / "history.json", history)
    summary = cv.summary.to_json()
    _write_json(out / "summary.json", summary)
    log.info("cross-validation finished in %.1f s", elapsed)
    return {"formatted": summary["formatted"], "runs": summary["runs"]}


def cmd_evaluate(cfg, args):
    model, header = _need_checkpoint(cfg)
    records = _load_records(cfg)
    if args.held_out:
        held = header.get("meta", {}).get("held_out")
        if held is None:
            raise DataError("checkpoint records no held-out ids")
        by_id = {r.id: r for r in records}
        missing = [i for i in held if i not in by_id]
        if missing:
            raise DataError(f"held-out ids not in manifest: {', '.join(missing[:5])}")
        records = [by_id[i] for i in held]
    images = _read_labelled(records)
    _check_sizes(images, model.config)
    metrics = evaluate(model, prepare_samples(images, model.config))
    out = Path(cfg.out)
    cfg.write(out)
    _write_json(out / "metrics.json", metrics.to_json())
    return {"accuracy": metrics.accuracy, "n": metrics.n}


def cmd_predict(cfg, args):
    model, _ = _need_checkpoint(cfg)
    images, paths = _input_images(cfg, args.images)
    _check_sizes(images, model.config)  # before anything is written
    samples = [prepare_sample(im, model.config) for im in images]
    scores = predict_scores(model, samples)
    pred = predicted_class(scores)
    lines = []
    for im, path, s, p in zip(images, paths, scores, pred):
        lines.append(json.dumps({"id": im.id, "path": path, "class": CLASSES[p],
                                 "scores": {c: float(v) for c, v in zip(CLASSES, s)}},
                                sort_keys=True))
    out = Path(cfg.out)
    cfg.write(out)
    (out / "predictions.jsonl").write_text("\n".join(lines) + "\n")
    return {"predictions": len(lines), "file": str(out / "predictions.jsonl")}


def cmd_gradcam(cfg, args):
    model, _ = _need_checkpoint(cfg)
    images, _ = _input_images(cfg, args.images)
    _check_sizes(images, model.config)
    if args.target is not None and args.target not in CLASS_INDEX:
        raise ConfigError(f"--target must be one of {', '.join(CLASSES)}")
    out = Path(cfg.out)
    cfg.write(out)
    (out / "gradcam").mkdir(parents=True, exist_ok=True)
    lines = []
    for im in images:
        s = prepare_sample(im, model.config)
        fft = s.fft if model.config.fusion != "none" else None
        x = s.cnn_input.transpose(2, 0, 1)
        if args.target is None:
            target = int(predicted_class(predict_scores(model, [s]))[0])
        else:
            target = CLASS_INDEX[args.target]
        cam = grad_cam(model, x, target, h_fft=fft)
        png = heatmap_to_uint8(cam, overlay=s.cnn_input if args.overlay else None)
        (out / "gradcam" / f"{im.id}.png").write_bytes(encode_png(png))
        lines.append(json.dumps({"id": im.id, "target": CLASSES[target],
                                 "degenerate": cam.degenerate}, sort_keys=True))
    (out / "gradcam.jsonl").write_text("\n".join(lines) + "\n")
    return {"heatmaps": len(lines), "dir": str(out / "gradcam")}


COMMANDS = {
    "synth": cmd_synth,
    "extract-features": cmd_extract_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcam": cmd_gradcam,
}


def _fail(exc, code):
    err = {"error": type(exc).__name__, "message": str(exc), "exit": code}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _fail(exc, exc.exit_code)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        result = COMMANDS[args.command](cfg, args)
    except PercollError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(DataError(str(exc)), DataError.exit_code)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
