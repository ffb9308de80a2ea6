"""Command-line entry point: ``salnet {train,predict,eval,gradcheck,synth}``."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, SalnetError
from .estimator import SaliencyNetRegressor
from .gradcheck import TOLERANCE, run_all
from .io import (
    DatasetManifest,
    ManifestEntry,
    load_checkpoint,
    load_fixations,
    load_gt_map,
    load_image,
    load_manifest,
    read_ppm,
    resize_image,
    write_fixations,
    write_pgm,
    write_ppm,
)
from .layers import OUTPUT_SIDE
from .metrics import FixationSet, MetricConfig, evaluate_dataset
from .postproc import DEFAULT_SIGMA, predict_pipeline
from .synthetic import make_blob_dataset
from .training import write_loss_log

log = logging.getLogger("salnet")


def _load_training_set(manifest_path):
    manifest = load_manifest(manifest_path)
    entries = manifest.select("train") + manifest.select("val")
    if not entries:
        raise InvalidArgumentError(f"{manifest_path}: no train/val entries")
    images = np.stack([resize_image(read_ppm(e.image)).transpose(2, 0, 1) for e in entries])
    maps = np.stack([load_gt_map(e.gt_map, OUTPUT_SIDE, OUTPUT_SIDE) for e in entries])
    return images, maps


def cmd_train(args):
    est = SaliencyNetRegressor(
        lr_start=args.lr_start, lr_end=args.lr_end, epochs=args.epochs, batch_size=args.batch,
        momentum=args.momentum, maxnorm_cap=args.maxnorm, seed=args.seed,
    )
    est.config()  # validate hyper-parameters before touching the data
    images, maps = _load_training_set(args.manifest)

    def progress(step, net):
        if step % 100 == 0:
            log.info("step %d", step)

    est.fit(images, maps, callback=progress)
    est.save(args.out)
    if args.log:
        write_loss_log(est.history_, args.log)
    if est.history_:
        last = est.history_[-1]
        print(f"trained {len(est.history_)} epochs: train_loss={last.train_loss:.6g} val_loss={last.val_loss}")
    else:
        print("wrote freshly initialised network")
    return 0


def cmd_predict(args):
    ckpt = load_checkpoint(args.ckpt)
    h, w = args.height, args.width
    if h is None or w is None:
        native_h, native_w = read_ppm(args.image).shape[:2]
        h = native_h if h is None else h
        w = native_w if w is None else w
    image = load_image(args.image, ckpt.channel_means)
    write_pgm(args.out, predict_pipeline(image, ckpt.network, h, w, args.sigma, args.normalize))
    return 0


def cmd_eval(args):
    manifest = load_manifest(args.manifest)
    entries = manifest.select(args.split) if args.split else manifest.entries
    if not entries:
        raise InvalidArgumentError(f"{args.manifest}: no entries to evaluate")
    pred_dir = Path(args.pred_dir)
    preds, fixes, gts = [], [], []
    for e in entries:
        pred_path = pred_dir / (e.image.stem + ".pgm")
        if not pred_path.is_file():
            raise InvalidArgumentError(f"missing prediction {pred_path} for {e.image}")
        preds.append(load_gt_map(pred_path, e.height, e.width))
        gts.append(load_gt_map(e.gt_map, e.height, e.width))
        fixes.append(load_fixations(e.fixations, e.frame))
    report = evaluate_dataset(preds, fixes, gts, MetricConfig(args.splits, None, args.seed))
    report.write_csv(args.report)
    for name, value in zip(report.COLUMNS, report.as_row()):
        print(f"{name:14s} {value:.4f}")
    return 0


def cmd_gradcheck(args):
    failed = 0
    for res in run_all(args.seed, args.coords):
        status = "ok" if res.passed else "FAIL"
        failed += not res.passed
        print(f"{res.name:20s} max_rel_err={res.max_rel_error:.3e} coords={res.n_coords} "
              f"one_sided={res.one_sided} skipped={res.skipped} {status}")
    print(f"tolerance {TOLERANCE:g}: {'all blocks passed' if not failed else f'{failed} block(s) failed'}")
    return 1 if failed else 0


def cmd_synth(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_blob_dataset(args.n, seed=args.seed)
    size = args.size
    entries = []
    for i, (img, gt, fix) in enumerate(zip(ds.images, ds.maps, ds.fixations)):
        stem = f"img{i:03d}"
        write_ppm(out / f"{stem}.ppm", resize_image(img.transpose(1, 2, 0), (size, size)))
        write_pgm(out / f"{stem}_gt.pgm", resize_image(gt[..., None], (size, size))[..., 0])
        write_fixations(out / f"{stem}.fix", FixationSet(np.array(fix), img.shape[1:]).rescaled((size, size)))
        split = "test" if i >= args.n - args.n_test else "train"
        entries.append(ManifestEntry(out / f"{stem}.ppm", out / f"{stem}_gt.pgm", out / f"{stem}.fix",
                                     size, size, split))
    DatasetManifest(out, entries).write(out / "manifest.tsv")
    print(f"wrote {args.n} samples and {out / 'manifest.tsv'}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="salnet", description="Convolutional saliency prediction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network on a manifest's train/val entries")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--lr-start", type=float, default=0.03)
    t.add_argument("--lr-end", type=float, default=0.0001)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--maxnorm", type=float, default=2.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", help="CSV loss log")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict a saliency map for one PPM image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True, help="output PGM")
    pr.add_argument("--height", type=int, help="stimulus height (default: image height)")
    pr.add_argument("--width", type=int, help="stimulus width (default: image width)")
    pr.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    pr.add_argument("--normalize", action="store_true", help="min-max normalise before clamping")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score predicted maps against a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--pred-dir", required=True, help="directory of <image stem>.pgm predictions")
    e.add_argument("--report", required=True, help="output CSV")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--splits", type=int, default=100, help="random splits for Borji/shuffled AUC")
    e.add_argument("--split", choices=("train", "val", "test"), help="only evaluate this split")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--coords", type=int, default=50, help="coordinates per block")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a small synthetic dataset with a manifest")
    s.add_argument("--out-dir", required=True)
    s.add_argument("-n", type=int, default=10)
    s.add_argument("--n-test", type=int, default=2)
    s.add_argument("--size", type=int, default=96, help="stimulus side length")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (SalnetError, OSError, ValueError) as exc:
        print(f"salnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
