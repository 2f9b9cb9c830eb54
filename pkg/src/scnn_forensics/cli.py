"""Command-line entry points: gen, train, detect, eval, bench."""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import bench, dataset, imageio, localizer, model, postproc
from .errors import DataError, ForensicsError, IO_EXIT_CODE

log = logging.getLogger("scnn_forensics")

DEFAULTS = {
    "backend": "fast",
    "stride": 2,
    "threshold": postproc.DEFAULT_THRESHOLD,
    "median_k": postproc.DEFAULT_MEDIAN_K,
    "footprint": postproc.DEFAULT_FOOTPRINT,
    "seed": 0,
    "epochs": model.TrainConfig.max_epochs,
    "lr": model.TrainConfig.learning_rate,
    "batch": model.TrainConfig.batch_size,
    "momentum": model.TrainConfig.momentum,
    "dropout": model.TrainConfig.dropout_rate,
    "count": 64,
    "size": 128,
    "val_fraction": 0.2,
    "repeats": bench.DEFAULT_REPEATS,
    "sizes": list(bench.DEFAULT_SIZES),
}


def _add_localize_flags(p):
    p.add_argument("--backend", choices=sorted(localizer.BACKENDS), default=DEFAULTS["backend"])
    p.add_argument("--stride", type=int, default=DEFAULTS["stride"])
    p.add_argument("--threshold", type=float, default=DEFAULTS["threshold"])
    p.add_argument("--median-k", type=int, default=DEFAULTS["median_k"])
    p.add_argument("--footprint", choices=postproc.FOOTPRINTS, default=DEFAULTS["footprint"],
                   help="pixel area a positive map cell stands for when boxing")


def build_parser():
    parser = argparse.ArgumentParser(prog="scnn-forensics",
                                     description="Forgery boundary detection with a shallow CNN")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic forgery corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    p.add_argument("--count", type=int, default=DEFAULTS["count"])
    p.add_argument("--size", type=int, default=DEFAULTS["size"])

    p = sub.add_parser("train", help="train on a corpus and write SCNW weights")
    p.add_argument("--corpus", required=True)
    p.add_argument("--weights", required=True, help="output weight file")
    p.add_argument("--metrics", help="per-epoch CSV (default: <weights>.csv)")
    p.add_argument("--patches", help="also write the extracted FPD1 patch corpus here")
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    p.add_argument("--epochs", type=int, default=DEFAULTS["epochs"])
    p.add_argument("--lr", type=float, default=DEFAULTS["lr"])
    p.add_argument("--batch", type=int, default=DEFAULTS["batch"])
    p.add_argument("--momentum", type=float, default=DEFAULTS["momentum"])
    p.add_argument("--dropout", type=float, default=DEFAULTS["dropout"])
    p.add_argument("--val-fraction", type=float, default=DEFAULTS["val_fraction"])

    p = sub.add_parser("detect", help="localize forgeries in one image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_localize_flags(p)

    p = sub.add_parser("eval", help="IoU accuracy over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", help="write per-image result lines here")
    _add_localize_flags(p)

    p = sub.add_parser("bench", help="time SWD against Fast SCNN")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", help="write the report here as well")
    p.add_argument("--stride", type=int, default=DEFAULTS["stride"])
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    p.add_argument("--repeats", type=int, default=DEFAULTS["repeats"])
    p.add_argument("--sizes", type=int, nargs="+", default=DEFAULTS["sizes"])
    return parser


def cmd_gen(args):
    manifest = dataset.generate_corpus(args.out, args.count, args.seed, args.size)
    print(f"wrote {manifest['count']} image pairs to {args.out}")


def corpus_patches(corpus_dir):
    """Boundary/normal patches from every tampered image, labelled by differencing."""
    records = []
    for image_id, original, tampered, _ in dataset.iter_corpus(corpus_dir):
        mask = dataset.diff_mask(tampered, original)
        records += dataset.extract_patches(tampered, mask, image_id=image_id)
    if not records:
        raise DataError(f"corpus {corpus_dir} yielded no patches")
    return records


def cmd_train(args):
    records = corpus_patches(args.corpus)
    if args.patches:
        dataset.write_records(records, args.patches)
    split_rng = np.random.default_rng(args.seed)
    train_recs, val_recs = dataset.balance_and_split(records, len(records), args.val_fraction,
                                                     split_rng)
    config = model.TrainConfig(learning_rate=args.lr, momentum=args.momentum,
                               batch_size=args.batch, max_epochs=args.epochs,
                               dropout_rate=args.dropout, seed=args.seed)
    log.info("training on %d patches, validating on %d", len(train_recs), len(val_recs))
    params, history = model.train(model.init_params(config), dataset.as_arrays(train_recs),
                                  dataset.as_arrays(val_recs), config)
    model.save_params(params, args.weights)
    metrics = args.metrics or os.path.splitext(args.weights)[0] + ".csv"
    with open(metrics, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for h in history:
            writer.writerow([h["epoch"], f"{h['train_loss']:.6f}", f"{h['val_accuracy']:.6f}"])
    best = max(h["val_accuracy"] for h in history)
    print(f"best val accuracy {best:.4f}; weights -> {args.weights}; metrics -> {metrics}")


def draw_boxes(image, boxes):
    """Burn 1-pixel box outlines at intensity 255 into an 8-bit copy of ``image``."""
    out = imageio.to_uint8(image).copy()
    h, w = out.shape[:2]
    for b in boxes:
        top, left = max(b.top, 0), max(b.left, 0)
        bottom, right = min(b.bottom, h) - 1, min(b.right, w) - 1
        if top > bottom or left > right:
            continue
        out[top, left:right + 1] = 255
        out[bottom, left:right + 1] = 255
        out[top:bottom + 1, left] = 255
        out[top:bottom + 1, right] = 255
    return out


def detect_image(params, image, args):
    pmap = localizer.probability_map(params, image, args.backend, args.stride)
    bmap, boxes = postproc.localize(pmap, args.threshold, args.median_k, args.footprint)
    return pmap, bmap, boxes


def cmd_detect(args):
    params = model.load_params(args.weights)
    image = imageio.read_image(args.image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    pmap, bmap, boxes = detect_image(params, image, args)
    os.makedirs(args.out, exist_ok=True)
    image_id = os.path.splitext(os.path.basename(args.image))[0]
    localizer.write_map(pmap, os.path.join(args.out, "map.bin"))
    with open(os.path.join(args.out, "map.pgm"), "wb") as fh:
        fh.write(imageio.encode(pmap.to_raster()))
    imageio.write_mask(bmap.bits, os.path.join(args.out, "binary.pgm"))
    postproc.write_results([postproc.format_result(image_id, boxes)],
                           os.path.join(args.out, "boxes.txt"))
    with open(os.path.join(args.out, "overlay.ppm"), "wb") as fh:
        fh.write(imageio.encode(draw_boxes(image, boxes)))
    print(postproc.format_result(image_id, boxes))


def cmd_eval(args):
    params = model.load_params(args.weights)
    lines, verdicts = [], []
    for image_id, _, tampered, mask in dataset.iter_corpus(args.corpus):
        _, _, boxes = detect_image(params, tampered, args)
        verdict = postproc.evaluate(boxes, mask)
        verdicts.append(verdict)
        lines.append(postproc.format_result(image_id, boxes, verdict))
        print(lines[-1])
    if not verdicts:
        raise DataError(f"corpus {args.corpus} has no images")
    acc = postproc.corpus_accuracy(verdicts)
    print(f"accuracy {acc:.6f} ({sum(v.correct for v in verdicts)}/{len(verdicts)})")
    if args.out:
        postproc.write_results(lines, args.out)
    return acc


def cmd_bench(args):
    params = model.load_params(args.weights)
    report = bench.run_bench(params, args.sizes, args.stride, args.repeats, args.seed)
    text = report.to_text()
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return report


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval,
            "bench": cmd_bench}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except ForensicsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return IO_EXIT_CODE
    return 0


if __name__ == "__main__":
    sys.exit(main())
