"""Slow, independent reference implementations used to verify the fast paths.

Nothing here shares code with the implementations it checks: IoU is
estimated by Monte-Carlo sampling, NMS and assignment are plain O(n^2)
loops over scalar IoU calls, losses are explicit element loops and AP is
a direct grid sum.
"""
from __future__ import annotations

import math

import numpy as np


def _local_coords(points, box):
    x, y, z, w, h, l, yaw = box[:7]
    d = points - np.array([x, y, z])
    c, s = math.cos(yaw), math.sin(yaw)
    # inverse of the yaw rotation about y
    lx = c * d[:, 0] - s * d[:, 2]
    lz = s * d[:, 0] + c * d[:, 2]
    return lx, d[:, 1], lz


def _inside(points, box):
    lx, ly, lz = _local_coords(points, box)
    w, h, l = box[3:6]
    return (np.abs(lx) <= w / 2) & (np.abs(ly) <= h / 2) & (np.abs(lz) <= l / 2)


def _bounds(box):
    x, y, z, w, h, l = box[:6]
    r = 0.5 * math.hypot(w, l)
    return np.array([x - r, y - h / 2, z - r]), np.array([x + r, y + h / 2, z + r])


def monte_carlo_iou(a, b, n_samples=1_000_000, rng=None, bev=False, chunk=250_000):
    """IoU of two boxes (9- or 7-vectors) from uniform samples over their joint bounding box."""
    rng = rng if rng is not None else np.random.default_rng(0)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    lo_a, hi_a = _bounds(a)
    lo_b, hi_b = _bounds(b)
    lo, hi = np.minimum(lo_a, lo_b), np.maximum(hi_a, hi_b)
    if bev:
        a, b = a.copy(), b.copy()
        a[1] = b[1] = 0.0
        a[4] = b[4] = 1.0
        lo[1], hi[1] = -0.5, 0.5
    both = either = 0
    left = n_samples
    while left > 0:
        k = min(chunk, left)
        pts = lo + rng.random((k, 3)) * (hi - lo)
        ia, ib = _inside(pts, a), _inside(pts, b)
        both += int(np.sum(ia & ib))
        either += int(np.sum(ia | ib))
        left -= k
    return both / either if either else 0.0


def brute_nms(boxes, iou_threshold, iou_fn, per_class=True):
    """Reference greedy NMS returning kept indices."""
    boxes = [np.asarray(b) for b in boxes]
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i][8], boxes[i][2], i))
    kept = []
    for i in order:
        ok = True
        for k in kept:
            if per_class and boxes[k][7] != boxes[i][7]:
                continue
            if iou_fn(boxes[i], boxes[k]) >= iou_threshold:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def brute_assign(preds, gts, iou_threshold, iou_fn):
    """Reference greedy matching; returns (pairs, unmatched_preds, unmatched_gts)."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][8], preds[i][2], i))
    taken = set()
    pairs, unmatched = [], []
    for i in order:
        best, best_iou = None, -1.0
        for j in range(len(gts)):
            if j in taken:
                continue
            v = iou_fn(preds[i], gts[j])
            if v > best_iou:
                best, best_iou = j, v
        if best is not None and best_iou >= iou_threshold:
            taken.add(best)
            pairs.append((i, best, best_iou))
        else:
            unmatched.append(i)
    return pairs, unmatched, [j for j in range(len(gts)) if j not in taken]


# --- loss loops ----------------------------------------------------------------


def loop_mse(pred, gt, lam):
    rows, cols = len(pred), len(pred[0])
    s = 0.0
    for i in range(rows):
        for j in range(cols):
            s += (gt[i][j] - pred[i][j]) ** 2
    return lam / (rows * cols) * s


def loop_eas(pred, image, lam):
    img = np.asarray(image, dtype=np.float64)
    rows, cols = len(pred), len(pred[0])
    gray = [[sum(img[i][j]) / 3.0 if img.ndim == 3 else img[i][j] for j in range(cols)] for i in range(rows)]
    s = 0.0
    for i in range(rows):
        for j in range(cols):
            if j + 1 < cols:
                s += abs(pred[i][j + 1] - pred[i][j]) * math.exp(-abs(gray[i][j + 1] - gray[i][j]))
            if i + 1 < rows:
                s += abs(pred[i + 1][j] - pred[i][j]) * math.exp(-abs(gray[i + 1][j] - gray[i][j]))
    return lam / (rows * cols) * s


def _slots(mask):
    m = np.asarray(mask)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            for k in range(m.shape[2]):
                yield i, j, k, bool(m[i, j, k])


def _loop_masked(pred, gt, mask, lam, term):
    s, n = 0.0, 0
    for i, j, k, t in _slots(mask):
        if t:
            n += 1
            s += term(pred[i, j, k], gt[i, j, k])
    return 0.0 if n == 0 else lam / n * s


def loop_xyz(pred, gt, mask, lam):
    return _loop_masked(pred, gt, mask, lam,
                        lambda p, g: (g[1] - p[1]) ** 2 + (g[2] - p[2]) ** 2 + (g[3] - p[3]) ** 2)


def loop_whl(pred, gt, mask, lam):
    return _loop_masked(pred, gt, mask, lam, lambda p, g: sum(
        (math.sqrt(g[c]) - math.sqrt(p[c])) ** 2 for c in (4, 5, 6)))


def loop_orientation(pred, gt, mask, lam):
    return _loop_masked(pred, gt, mask, lam, lambda p, g: (g[7] - p[7]) ** 2)


def loop_conf(pred, gt, mask, lam):
    s, count = 0.0, 0
    for i, j, k, t in _slots(mask):
        d2 = (gt[i, j, k, 0] - pred[i, j, k, 0]) ** 2
        s += (1.0 if t else 0.0) * d2 + (0.0 if t else 1.0) * d2
        count += 1
    return lam / count * s


def loop_iou(pred_boxes, gt_boxes, mask, lam, iou_fn, eps=1e-7):
    s, n = 0.0, 0
    for i, j, k, t in _slots(mask):
        if t:
            n += 1
            s += -math.log(max(iou_fn(pred_boxes[i, j, k], gt_boxes[i, j, k]), eps))
    return 0.0 if n == 0 else lam / n * s


# --- AP ------------------------------------------------------------------------


def threshold_sweep(confidences, is_tp, n_gt):
    """(threshold, precision, recall) for every distinct confidence, by direct counting."""
    pts = []
    for t in sorted(set(confidences), reverse=True):
        tp = sum(1 for c, ok in zip(confidences, is_tp) if c >= t and ok)
        fp = sum(1 for c, ok in zip(confidences, is_tp) if c >= t and not ok)
        pts.append((t, tp / (tp + fp), tp / n_gt if n_gt else 0.0))
    return pts


def grid_ap(precisions, recalls, n_points):
    """Direct sum of interpolated precision over an ``n_points`` recall grid, in percent."""
    total = 0.0
    for k in range(n_points):
        r = k / (n_points - 1)
        cands = [p for p, rr in zip(precisions, recalls) if rr >= r]
        total += max(cands) if cands else 0.0
    return 100.0 * total / n_points
