"""Precision/recall curves, interpolated AP, mAP and error-vs-depth histograms.

Matching follows the KITTI eval-kit conventions: ground truth failing the
difficulty rule, lying outside the ROI, or marked DontCare acts as an
ignore region. Detections matched to ignored ground truth are neither
true nor false positives, and ignored ground truth does not count toward
recall.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .config import PipelineConfig
from .dataset_io import to_box3d
from .geometry import CONF, X, Y, Z, boxes_to_array
from .iou import iou_matrix
from .matching import assign, detection_order

ALL = "all"


@dataclass
class PRCurve:
    """One point per distinct detection confidence, in descending confidence order."""

    confidences: np.ndarray
    precisions: np.ndarray
    recalls: np.ndarray
    n_gt: int

    def __len__(self):
        return len(self.confidences)

    def points(self):
        return list(zip(self.confidences.tolist(), self.precisions.tolist(), self.recalls.tolist()))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["confidence", "precision", "recall"])
        for c, p, r in self.points():
            w.writerow([repr(c), repr(p), repr(r)])
        return buf.getvalue()


def pr_curve_from_records(confidences, is_tp, n_gt):
    """Cumulative TP/FP sweep; detections sharing a confidence enter together."""
    conf = np.asarray(confidences, dtype=np.float64)
    tp = np.asarray(is_tp, dtype=bool)
    if conf.size == 0:
        e = np.zeros(0)
        return PRCurve(e, e.copy(), e.copy(), int(n_gt))
    order = np.argsort(-conf, kind="stable")
    conf, tp = conf[order], tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    last = np.r_[conf[1:] != conf[:-1], True]
    ctp, cfp, conf = ctp[last], cfp[last], conf[last]
    precision = ctp / (ctp + cfp)
    recall = ctp / n_gt if n_gt > 0 else np.zeros_like(precision)
    return PRCurve(conf, precision.astype(np.float64), recall.astype(np.float64), int(n_gt))


def _interpolated_ap(curve, n_points):
    if curve.n_gt == 0 or len(curve) == 0:
        return 0.0
    grid = np.arange(n_points) / (n_points - 1)
    # suffix max gives max precision over recall >= r since recall is non-decreasing
    pmax = np.maximum.accumulate(curve.precisions[::-1])[::-1]
    idx = np.searchsorted(curve.recalls, grid, side="left")
    vals = np.where(idx < len(pmax), pmax[np.minimum(idx, len(pmax) - 1)], 0.0)
    return 100.0 * float(np.sum(vals)) / n_points


def ap_101(curve):
    """COCO-style AP: interpolated precision averaged over recall 0.00, 0.01, ..., 1.00 (percent)."""
    return _interpolated_ap(curve, 101)


def ap_r11(curve):
    """AP|R11: interpolated precision averaged over recall 0.0, 0.1, ..., 1.0 (percent)."""
    return _interpolated_ap(curve, 11)


@dataclass
class FrameResult:
    """Per-frame outcome for one (class, difficulty, threshold, kind)."""

    confidences: list = field(default_factory=list)
    is_tp: list = field(default_factory=list)
    n_gt: int = 0
    matched_gt: list = field(default_factory=list)
    matched_det: list = field(default_factory=list)


def _passes(label, rule):
    return (label.bbox_height >= rule.min_height and 0 <= label.occlusion <= rule.max_occlusion
            and label.truncation <= rule.max_truncation)


def _in_roi(arr, roi):
    return ((np.abs(arr[:, X]) <= roi.x_max) & (np.abs(arr[:, Y]) <= roi.y_max)
            & (arr[:, Z] > 0) & (arr[:, Z] <= roi.z_max))


def _dontcare_hit(det_bbox, dc_bboxes, thr):
    x0, y0, x1, y1 = det_bbox
    area = (x1 - x0) * (y1 - y0)
    if area <= 0:
        return False
    for a0, b0, a1, b1 in dc_bboxes:
        iw = min(x1, a1) - max(x0, a0)
        ih = min(y1, b1) - max(y0, b0)
        if iw > 0 and ih > 0 and iw * ih / area >= thr:
            return True
    return False


def evaluate_frame(gt_labels, det_labels, cls, difficulty, threshold, kind="3d", config=None):
    """Match one frame's detections of ``cls`` against its ground truth."""
    config = config or PipelineConfig()
    classes = config.classes
    gts = [lb for lb in gt_labels if lb.cls == cls]
    dets = [lb for lb in det_labels if lb.cls == cls]
    dontcare = [lb.bbox for lb in gt_labels if lb.is_dontcare]
    g = boxes_to_array([to_box3d(lb, classes) for lb in gts])
    d = boxes_to_array([to_box3d(lb, classes) for lb in dets])
    if len(g):
        valid = _in_roi(g, config.roi)
        if difficulty != ALL:
            rule = config.difficulties[difficulty]
            valid &= np.array([_passes(lb, rule) for lb in gts])
    else:
        valid = np.zeros(0, dtype=bool)
    out = FrameResult(n_gt=int(valid.sum()))
    if not len(d):
        return out
    ious = iou_matrix(d, g, kind)
    vidx = np.nonzero(valid)[0]
    iidx = np.nonzero(~valid)[0]
    a = assign(d, g[vidx], threshold, kind, ious=ious[:, vidx])
    matched = {p: vidx[j] for p, j, _ in a.pairs}
    for i in detection_order(d):
        if i in matched:
            out.confidences.append(float(d[i, CONF]))
            out.is_tp.append(True)
            out.matched_gt.append(g[matched[i]])
            out.matched_det.append(d[i])
            continue
        if len(iidx) and ious[i, iidx].max() >= threshold:
            continue
        if _dontcare_hit(dets[i].bbox, dontcare, threshold):
            continue
        out.confidences.append(float(d[i, CONF]))
        out.is_tp.append(False)
    return out


def pr_curve(frame_results):
    """Merge per-frame results into one PR curve."""
    conf, tp, n_gt = [], [], 0
    for fr in frame_results:
        conf.extend(fr.confidences)
        tp.extend(fr.is_tp)
        n_gt += fr.n_gt
    return pr_curve_from_records(conf, tp, n_gt)


@dataclass
class ErrorHistogram:
    """Mean center error of matched pairs binned by ground-truth depth."""

    edges: np.ndarray
    counts: np.ndarray
    mean_error: np.ndarray

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def rows(self):
        for lo, hi, c, n, e in zip(self.edges[:-1], self.edges[1:], self.centers, self.counts, self.mean_error):
            yield {"z_lo": float(lo), "z_hi": float(hi), "z_center": float(c),
                   "count": int(n), "mean_error": None if n == 0 else float(e)}


def err_vs_z(gt_centers, det_centers, bin_width=2.0, z_max=100.0):
    """Histogram of Euclidean center error, binned by ground-truth z over (0, z_max]."""
    g = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(det_centers, dtype=np.float64).reshape(-1, 3)
    n_bins = int(math.ceil(z_max / bin_width - 1e-12))
    edges = np.arange(n_bins + 1) * bin_width
    counts = np.zeros(n_bins, dtype=np.int64)
    sums = np.zeros(n_bins)
    if len(g):
        keep = (g[:, 2] > 0) & (g[:, 2] <= z_max)
        g, d = g[keep], d[keep]
        b = np.minimum((g[:, 2] // bin_width).astype(np.int64), n_bins - 1)
        err = np.linalg.norm(g - d, axis=1)
        np.add.at(counts, b, 1)
        np.add.at(sums, b, err)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return ErrorHistogram(edges, counts, mean)


@dataclass
class EvalReport:
    entries: list = field(default_factory=list)
    mean_ap: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    errmaps: dict = field(default_factory=dict)

    def ap(self, cls, threshold, difficulty=ALL, kind="3d", metric="ap_101"):
        for e in self.entries:
            if (e["class"], e["iou_threshold"], e["difficulty"], e["kind"]) == (cls, threshold, difficulty, kind):
                return e[metric]
        raise KeyError((cls, threshold, difficulty, kind))

    def to_dict(self):
        return {
            "entries": self.entries,
            "mAP": self.mean_ap,
            "errmap": {c: list(h.rows()) for c, h in self.errmaps.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        cols = ["class", "iou_threshold", "difficulty", "kind", "ap_101", "ap_r11", "n_gt", "n_det"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for e in self.entries:
            w.writerow({k: e[k] for k in cols})
        return buf.getvalue()


def errmap_to_csv(errmaps):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "z_lo", "z_hi", "z_center", "count", "mean_error"])
    for cls, hist in errmaps.items():
        for r in hist.rows():
            w.writerow([cls, r["z_lo"], r["z_hi"], r["z_center"], r["count"],
                        "" if r["mean_error"] is None else repr(r["mean_error"])])
    return buf.getvalue()


def class_errmap(frames, cls, config=None, threshold=0.5, kind="3d"):
    config = config or PipelineConfig()
    gts, dets = [], []
    for fid in sorted(frames):
        gt_labels, det_labels = frames[fid]
        fr = evaluate_frame(gt_labels, det_labels, cls, ALL, threshold, kind, config)
        gts.extend(r[:3] for r in fr.matched_gt)
        dets.extend(r[:3] for r in fr.matched_det)
    return err_vs_z(gts, dets, config.errmap_bin_width, config.roi.z_max)


def map_over(frames, config=None, kinds=("3d",), difficulties=None, errmap_threshold=0.5):
    """Full evaluation over ``{frame_id: (gt_labels, det_labels)}``.

    For every (kind, difficulty, threshold) the mAP is the mean ap_101 over
    classes that have at least one counted ground-truth object.
    """
    config = config or PipelineConfig()
    if difficulties is None:
        difficulties = (ALL,) + tuple(config.difficulties)
    report = EvalReport()
    fids = sorted(frames)
    gt_classes = sorted({lb.cls for fid in fids for lb in frames[fid][0]
                         if not lb.is_dontcare and lb.cls in config.classes},
                        key=config.classes.index)
    for kind in kinds:
        for diff in difficulties:
            for thr in config.iou_thresholds:
                aps = []
                for cls in gt_classes:
                    results = [evaluate_frame(frames[f][0], frames[f][1], cls, diff, thr, kind, config)
                               for f in fids]
                    curve = pr_curve(results)
                    if curve.n_gt == 0:
                        continue
                    entry = {"class": cls, "iou_threshold": thr, "difficulty": diff, "kind": kind,
                             "ap_101": ap_101(curve), "ap_r11": ap_r11(curve),
                             "n_gt": curve.n_gt, "n_det": int(sum(len(r.confidences) for r in results))}
                    report.entries.append(entry)
                    report.curves[(cls, thr, diff, kind)] = curve
                    aps.append(entry["ap_101"])
                if aps:
                    report.mean_ap.append({"kind": kind, "difficulty": diff, "iou_threshold": thr,
                                           "mAP": float(np.mean(aps)), "n_classes": len(aps)})
    for cls in gt_classes:
        report.errmaps[cls] = class_errmap(frames, cls, config, errmap_threshold, kinds[0])
    return report


class DetectionEvaluator(BaseEstimator):
    """Estimator-style front end: ``score(detections, ground_truth)`` returns mAP (percent).

    Both arguments map frame ids to lists of :class:`KittiLabel`.
    """

    def __init__(self, iou_threshold=0.5, kind="3d", difficulty=ALL, config=None):
        self.iou_threshold = iou_threshold
        self.kind = kind
        self.difficulty = difficulty
        self.config = config

    def fit(self, X=None, y=None):
        return self

    def score(self, X, y):
        from dataclasses import replace

        cfg = replace(self.config or PipelineConfig(), iou_thresholds=(self.iou_threshold,))
        frames = {f: (y.get(f, []), X.get(f, [])) for f in set(X) | set(y)}
        report = map_over(frames, cfg, kinds=(self.kind,), difficulties=(self.difficulty,))
        return report.mean_ap[0]["mAP"] if report.mean_ap else float("nan")
