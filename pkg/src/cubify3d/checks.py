"""Self-verification suites behind ``cubify3d check``.

Each suite is deterministic for a given seed and returns a
:class:`SuiteResult`; the report text contains no timings so that two
runs with the same seed are byte-identical.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses, oracles
from .config import LossWeights, RoiPriorConfig
from .cubify import decode_array, decode_slots, encode, load_tensor
from .exceptions import BoundaryPoint, CorruptTensorFile
from .iou import iou_3d_matrix, iou_matrix
from .matching import assign, nms_indices
from .synthetic import random_boxes, random_label_tensor, random_scene


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{self.name:<14} {'PASS' if self.passed else 'FAIL'}  {self.detail}"


def _sorted_rows(a):
    return a[np.lexsort(a.T[::-1])] if len(a) else a


def check_roundtrip(rng, n_cases, roi=None):
    roi = roi or RoiPriorConfig()
    worst, bad_count = 0.0, 0
    for _ in range(n_cases):
        scene = random_scene(rng, 40, roi, out_of_roi_fraction=0.1)
        fr = encode(scene, roi)
        dec = decode_array(fr.tensor, roi, 0.5, fr.class_ids)
        if len(dec) + fr.overflow + fr.skipped != len(scene):
            bad_count += 1
            continue
        if fr.overflow == 0:
            inside = scene[scene[:, 2] <= roi.z_max]
            a, b = _sorted_rows(inside), _sorted_rows(dec)
            if len(a):
                worst = max(worst, float(np.abs(a - b).max()))
    ok = bad_count == 0 and worst <= 1e-9
    return SuiteResult("roundtrip", ok, f"cases={n_cases} max_field_err={worst:.3e} count_errors={bad_count}")


def overlapping_pair(rng, roi=None):
    """A random box and a second one jittered around it so that they usually overlap."""
    roi = roi or RoiPriorConfig()
    a = random_boxes(rng, 1, roi)[0]
    b = random_boxes(rng, 1, roi)[0]
    b[0] = a[0] + rng.uniform(-1, 1) * 0.5 * a[3]
    b[1] = a[1] + rng.uniform(-1, 1) * 0.5 * a[4]
    b[2] = a[2] + rng.uniform(-1, 1) * 0.5 * a[5]
    return a, b


def check_iou_oracle(rng, n_pairs, n_samples=1_000_000, tol=0.01):
    worst = 0.0
    for _ in range(n_pairs):
        a, b = overlapping_pair(rng)
        exact = float(iou_3d_matrix(a[None], b[None])[0, 0])
        mc = oracles.monte_carlo_iou(a, b, n_samples, rng)
        worst = max(worst, abs(exact - mc))
    return SuiteResult("iou_oracle", worst <= tol, f"pairs={n_pairs} max_abs_err={worst:.3e} tol={tol}")


MIN_PAIR_IOU = 0.1


def _near_prediction(rng, gt, mask, roi, sigma=0.02, attempts=100):
    """Jittered copy of ``gt`` whose masked slots each keep IoU >= MIN_PAIR_IOU with their target.

    Thin slivers near zero overlap make -log(iou) so curved that central
    differences lose accuracy even though the function is smooth there.
    """
    point = np.clip(gt + rng.normal(0, sigma, gt.shape), 0.01, 0.99)
    gt_boxes = decode_slots(gt, roi)
    for idx in zip(*np.nonzero(mask)):
        for _ in range(attempts):
            pb = decode_slots(point, roi)[idx]
            if iou_3d_matrix(pb[None], gt_boxes[idx][None])[0, 0] >= MIN_PAIR_IOU:
                break
            point[idx] = np.clip(gt[idx] + rng.normal(0, sigma, gt.shape[-1]), 0.01, 0.99)
        else:
            point[idx] = np.clip(gt[idx], 0.01, 0.99)
    return point


def interior_point(rng, name, roi=None, attempts=50):
    """A random objective and point that grad_check accepts (retries on boundary points)."""
    roi = roi or RoiPriorConfig()
    for _ in range(attempts):
        if name in ("mse", "eas"):
            gt = rng.uniform(-0.5, 0.5, (8, 8))
            image = rng.uniform(0, 1, (8, 8, 3))
            point = rng.uniform(-0.5, 0.5, (8, 8))
            obj = losses.objective(name, gt=gt, image=image)
        elif name == "iou":
            n = int(rng.integers(1, 6))
            pairs = [overlapping_pair(rng, roi) for _ in range(n)]
            gt = np.array([p[1][:7] for p in pairs])
            point = np.array([p[0][:7] for p in pairs])
            obj = losses.objective("iou", gt=gt, mask=np.ones(n, dtype=bool))
        else:
            gt, mask = random_label_tensor(rng, roi, fill=0.05)
            point = _near_prediction(rng, gt, mask, roi)
            obj = losses.objective(name, gt=gt, mask=mask, cfg=roi)
        if obj.margin is None or obj.margin(point) > 2e-5:
            return obj, point
    raise BoundaryPoint(f"no interior point found for {name}")


GRAD_LOSSES = ("mse", "eas", "xyz", "whl", "orientation", "conf", "iou", "total")


def check_gradients(rng, n_points, h=1e-5, tol=1e-4):
    worst = {}
    for name in GRAD_LOSSES:
        k = n_points if name != "total" else max(1, n_points // 10)
        worst[name] = max(losses.grad_check(*interior_point(rng, name), h=h) for _ in range(k))
    ok = all(v <= tol for v in worst.values())
    return SuiteResult("gradients", ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def check_nms_oracle(rng, n_cases, max_boxes=50):
    def iou_fn(a, b):
        return float(iou_matrix(np.asarray(a)[None], np.asarray(b)[None])[0, 0])

    mismatches = 0
    for _ in range(n_cases):
        n = int(rng.integers(0, max_boxes + 1))
        boxes = clustered_boxes(rng, n)
        fast = nms_indices(boxes, 0.5).tolist()
        ref = oracles.brute_nms(boxes, 0.5, iou_fn)
        mismatches += fast != ref
        preds, gts = boxes[: n // 2], boxes[n // 2:]
        a = assign(preds, gts, 0.3)
        pairs, up, ug = oracles.brute_assign(preds, gts, 0.3, iou_fn)
        mismatches += ([(p, g) for p, g, _ in a.pairs] != [(p, g) for p, g, _ in pairs]
                       or sorted(a.unmatched_preds) != sorted(up) or a.unmatched_gts != ug)
    return SuiteResult("nms_oracle", mismatches == 0, f"cases={n_cases} mismatches={mismatches}")


def clustered_boxes(rng, n, roi=None, spread=3.0, n_classes=2):
    """Boxes around a few shared centers so that NMS has real work to do."""
    roi = roi or RoiPriorConfig()
    boxes = random_boxes(rng, n, roi, n_classes, confidence=None)
    if n:
        centers = random_boxes(rng, max(1, n // 6), roi)
        pick = rng.integers(0, len(centers), n)
        boxes[:, 0] = centers[pick, 0] + rng.normal(0, spread * 0.3, n)
        boxes[:, 1] = centers[pick, 1] + rng.normal(0, 0.3, n)
        boxes[:, 2] = np.clip(centers[pick, 2] + rng.normal(0, spread * 0.3, n), 0.1, None)
        boxes[:, 3:6] = np.minimum(boxes[:, 3:6], [2.5, 2.5, 6.0])
        boxes[:, 8] = np.round(rng.random(n), 2)
    return boxes


def check_tensor_dir(tensor_dir):
    bad = []
    paths = sorted(Path(tensor_dir).glob("*.cub"))
    for p in paths:
        try:
            load_tensor(p)
        except CorruptTensorFile as exc:
            bad.append(f"{p.stem} ({exc})")
    detail = f"files={len(paths)}" + (f" corrupt: {', '.join(bad)}" if bad else "")
    return SuiteResult("tensor_files", not bad, detail)


def run_checks(seed=0, n_cases=200, tensor_dir=None):
    rng = np.random.default_rng(seed)
    results = [
        check_roundtrip(rng, n_cases),
        check_iou_oracle(rng, max(1, min(n_cases, 10))),
        check_gradients(rng, max(1, min(n_cases, 10))),
        check_nms_oracle(rng, n_cases),
    ]
    if tensor_dir is not None:
        results.append(check_tensor_dir(tensor_dir))
    return results


def format_report(results, seed, n_cases):
    lines = [f"cubify3d check seed={seed} n_cases={n_cases}"]
    lines += [r.line() for r in results]
    lines.append("ALL PASS" if all(r.passed for r in results) else "FAILURES")
    return "\n".join(lines) + "\n"
