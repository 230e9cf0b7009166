"""Command line interface.

Exit codes: 0 success, 1 verification failure, 2 input or parse error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from .checks import format_report, run_checks
from .config import PipelineConfig
from .cubify import decode_array, encode, load_tensor, tensor_to_bytes
from .dataset_io import (compute_priors, labels_to_array, load_label_dir, parse_calib, read_split,
                         serialize_labels)
from .evaluation import errmap_to_csv, map_over
from .exceptions import Cubify3DError
from .geometry import CLS, array_to_boxes
from .matching import nms_indices

log = logging.getLogger("cubify3d")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2


def _write_atomic(path, data):
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _pmap(fn, items, threads):
    if threads <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


def _config(args):
    cfg = PipelineConfig.load(args.config)
    changes = {}
    if getattr(args, "conf", None) is not None:
        changes["conf_threshold"] = args.conf
    if getattr(args, "nms", None) is not None:
        changes["nms_threshold"] = args.nms
    return replace(cfg, **changes) if changes else cfg


def _frame_ids(args):
    return read_split(args.split) if getattr(args, "split", None) else None


# --- encode ----------------------------------------------------------------


def _encode_one(job):
    fid, labels, out_dir, cfg = job
    arr = labels_to_array(labels, cfg.classes)
    fr = encode(arr, cfg.roi)
    _write_atomic(Path(out_dir) / f"{fid}.cub", tensor_to_bytes(fr.tensor, fr.class_ids))
    return fid, {"objects": len(arr), "encoded": int(fr.mask.sum()),
                 "overflow": fr.overflow, "skipped_out_of_roi": fr.skipped}


def cmd_encode(args):
    cfg = _config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = load_label_dir(args.label_dir, _frame_ids(args))
    jobs = [(fid, labels[fid], str(out_dir), cfg) for fid in sorted(labels)]
    per_frame = dict(sorted(_pmap(_encode_one, jobs, args.threads)))
    totals = {k: sum(v[k] for v in per_frame.values())
              for k in ("objects", "encoded", "overflow", "skipped_out_of_roi")}
    summary = {"frames": len(per_frame), **totals, "per_frame": per_frame}
    _write_atomic(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps({"frames": len(per_frame), **totals}, sort_keys=True))
    return EXIT_OK


# --- decode ----------------------------------------------------------------


def _decode_one(job):
    fid, path, out_dir, cfg, calib_path = job
    try:
        tensor, class_ids = load_tensor(path)
    except Cubify3DError as exc:
        raise Cubify3DError(f"frame {fid}: {exc}") from None
    dets = decode_array(tensor, cfg.roi, cfg.conf_threshold, class_ids)
    dets = dets[nms_indices(dets, cfg.nms_threshold, cfg.per_class_nms)]
    cam = parse_calib(Path(calib_path).read_text()) if calib_path else None
    names = [cfg.classes[int(c)] for c in dets[:, CLS]]
    _write_atomic(Path(out_dir) / f"{fid}.txt", serialize_labels(array_to_boxes(dets), names, cam=cam))
    return fid, len(dets)


def cmd_decode(args):
    cfg = _config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for p in sorted(Path(args.tensor_dir).glob("*.cub")):
        calib = None
        if args.calib_dir:
            calib = Path(args.calib_dir) / f"{p.stem}.txt"
        jobs.append((p.stem, str(p), str(out_dir), cfg, str(calib) if calib else None))
    counts = dict(_pmap(_decode_one, jobs, args.threads))
    print(json.dumps({"frames": len(counts), "detections": sum(counts.values())}))
    return EXIT_OK


# --- priors ----------------------------------------------------------------


def cmd_priors(args):
    cfg = _config(args)
    labels = load_label_dir(args.label_dir, _frame_ids(args))
    priors = compute_priors(labels.values(), cfg.roi, cfg.classes)
    text = json.dumps(asdict(priors), indent=2)
    if args.out:
        _write_atomic(args.out, text + "\n")
    print(text)
    return EXIT_OK


# --- eval / errmap ---------------------------------------------------------


def _load_frames(args):
    ids = _frame_ids(args)
    gts = load_label_dir(args.gt_dir, ids)
    dets = load_label_dir(args.result_dir, ids)
    return {fid: (gts[fid], dets.get(fid, [])) for fid in gts}


def cmd_eval(args):
    cfg = _config(args)
    frames = _load_frames(args)
    report = map_over(frames, cfg, kinds=(args.iou_kind,), errmap_threshold=args.errmap_iou)
    out = Path(args.out_dir)
    (out / "pr").mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "report.json", report.to_json())
    _write_atomic(out / "report.csv", report.to_csv())
    _write_atomic(out / "errmap.csv", errmap_to_csv(report.errmaps))
    for (cls, thr, diff, kind), curve in sorted(report.curves.items()):
        _write_atomic(out / "pr" / f"{cls}_{kind}_{thr:g}_{diff}.csv", curve.to_csv())
    for m in report.mean_ap:
        print(f"mAP[{m['kind']}, {m['difficulty']}, iou={m['iou_threshold']:g}] = {m['mAP']:.2f}"
              f" ({m['n_classes']} classes)")
    return EXIT_OK


def cmd_errmap(args):
    from .evaluation import class_errmap

    cfg = _config(args)
    if args.bin_width:
        cfg = replace(cfg, errmap_bin_width=args.bin_width)
    frames = _load_frames(args)
    classes = sorted({lb.cls for g, _ in frames.values() for lb in g
                      if not lb.is_dontcare and lb.cls in cfg.classes}, key=cfg.classes.index)
    maps = {c: class_errmap(frames, c, cfg, args.errmap_iou, args.iou_kind) for c in classes}
    text = errmap_to_csv(maps)
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- check -----------------------------------------------------------------


def cmd_check(args):
    results = run_checks(args.seed, args.n_cases, args.tensor_dir)
    text = format_report(results, args.seed, args.n_cases)
    if args.out:
        _write_atomic(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (ROI, priors, weights, thresholds, classes)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for per-frame work")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--iou-kind", choices=("3d", "bev"), default="3d")
    common.add_argument("--conf", type=float, help="confidence threshold for decoding")
    common.add_argument("--nms", type=float, help="IoU threshold for NMS")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cubify3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common], help="encode KITTI labels into label tensors")
    p.add_argument("label_dir")
    p.add_argument("out_dir")
    p.add_argument("--split", help="file with frame ids to include")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decode tensors, apply NMS, write KITTI results")
    p.add_argument("tensor_dir")
    p.add_argument("out_dir")
    p.add_argument("--calib-dir", help="KITTI calib dir; enables 2D boxes in the results")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("priors", parents=[common], help="dimension priors from labels")
    p.add_argument("label_dir")
    p.add_argument("--split")
    p.add_argument("--out")
    p.set_defaults(func=cmd_priors)

    for name, fn, help_ in (("eval", cmd_eval, "AP / mAP report"), ("errmap", cmd_errmap, "error vs depth")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("gt_dir")
        p.add_argument("result_dir")
        if name == "eval":
            p.add_argument("out_dir")
        else:
            p.add_argument("--out")
            p.add_argument("--bin-width", type=float)
        p.add_argument("--split")
        p.add_argument("--errmap-iou", type=float, default=0.5,
                       help="IoU threshold of the matches used for the error histogram")
        p.set_defaults(func=fn)

    p = sub.add_parser("check", parents=[common], help="run the self-verification suites")
    p.add_argument("--n-cases", type=int, default=200)
    p.add_argument("--tensor-dir", help="also validate every *.cub file in this directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (Cubify3DError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
