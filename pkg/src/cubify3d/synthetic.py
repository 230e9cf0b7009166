"""Seeded random scenes, tensors and boxes for tests, self-checks and benchmarks."""
from __future__ import annotations

import math

import numpy as np

from .config import RoiPriorConfig
from .geometry import CLS, CONF, YAW, Z


def random_boxes(rng, n, roi=None, n_classes=3, confidence=None):
    """``n`` boxes with centers in the ROI, dimensions inside the priors and uniform yaw."""
    roi = roi or RoiPriorConfig()
    p = roi.dim_priors
    arr = np.empty((n, 9))
    arr[:, 0] = rng.uniform(-roi.x_max, roi.x_max, n)
    arr[:, 1] = rng.uniform(-roi.y_max, roi.y_max, n)
    arr[:, 2] = rng.uniform(0, roi.z_max, n)
    arr[:, 2] = np.where(arr[:, 2] <= 0, roi.z_max, arr[:, 2])
    arr[:, 3] = rng.uniform(p.w_min, p.w_max, n)
    arr[:, 4] = rng.uniform(p.h_min, p.h_max, n)
    arr[:, 5] = rng.uniform(p.l_min, p.l_max, n)
    arr[:, YAW] = np.nextafter(-math.pi, 0) + rng.uniform(0, 2 * math.pi, n)
    arr[:, YAW] = np.minimum(arr[:, YAW], math.pi)
    arr[:, CLS] = rng.integers(0, n_classes, n)
    arr[:, CONF] = 1.0 if confidence is None else confidence
    return arr


def random_scene(rng, max_objects=40, roi=None, n_classes=3, out_of_roi_fraction=0.0):
    """A frame of up to ``max_objects`` boxes, optionally with some centers outside the ROI."""
    roi = roi or RoiPriorConfig()
    n = int(rng.integers(0, max_objects + 1))
    arr = random_boxes(rng, n, roi, n_classes)
    if out_of_roi_fraction and n:
        out = rng.random(n) < out_of_roi_fraction
        arr[out, Z] = roi.z_max + rng.uniform(0.1, 50.0, int(out.sum()))
    return arr


def sparse_scene(rng, n_objects, roi=None, n_classes=3, min_gap=None):
    """Non-overlapping boxes (rejection sampled on BEV center distance), like a driving frame."""
    roi = roi or RoiPriorConfig()
    p = roi.dim_priors
    gap = min_gap if min_gap is not None else math.hypot(p.w_max, p.l_max)
    out = []
    while len(out) < n_objects:
        cand = random_boxes(rng, 1, roi, n_classes)[0]
        if all(math.hypot(cand[0] - o[0], cand[2] - o[2]) > gap for o in out):
            out.append(cand)
    return np.array(out).reshape(-1, 9)


def random_label_tensor(rng, roi=None, fill=0.3):
    """Random (tensor, mask): occupied slots have confidence 1 and uniform fields, empty slots are zero."""
    roi = roi or RoiPriorConfig()
    mask = rng.random(roi.shape[:3]) < fill
    t = rng.uniform(0.0, 1.0, roi.shape)
    t[..., 0] = 1.0
    t[~mask] = 0.0
    return t, mask
