"""Non-maximum suppression and greedy prediction-to-ground-truth assignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import CLS, CONF, Z, array_to_boxes, boxes_to_array
from .iou import iou_matrix


def detection_order(arr):
    """Indices sorting detections by descending confidence, then smaller z, then input order."""
    arr = np.asarray(arr)
    if len(arr) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.lexsort((np.arange(len(arr)), arr[:, Z], -arr[:, CONF]))


def nms_indices(boxes, iou_threshold=0.5, per_class=True, kind="3d"):
    """Indices (into ``boxes``) of the survivors of greedy NMS, in output order.

    A box survives iff its IoU with every previously kept box (of the same
    class when ``per_class``) is below ``iou_threshold``.
    """
    arr = boxes_to_array(boxes)
    order = detection_order(arr)
    if len(order) == 0:
        return order
    ious = iou_matrix(arr, arr, kind)
    if per_class:
        same = arr[:, CLS][:, None] == arr[:, CLS][None, :]
        ious = np.where(same, ious, 0.0)
    kept = []
    suppressed = np.zeros(len(arr), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(i)
        suppressed |= ious[i] >= iou_threshold
    return np.array(kept, dtype=np.int64)


def nms(dets, iou_threshold=0.5, per_class=True, kind="3d"):
    """Greedy 3D NMS; returns the kept detections sorted by descending confidence.

    Returns the same container type as given: a list of ``Box3D`` or an (n, 9) array.
    """
    arr = boxes_to_array(dets)
    keep = nms_indices(arr, iou_threshold, per_class, kind)
    if isinstance(dets, np.ndarray):
        return arr[keep]
    dets = list(dets)
    return [dets[i] for i in keep]


@dataclass
class Assignment:
    """Result of matching predictions to ground truth; indices refer to the inputs."""

    pairs: list = field(default_factory=list)
    unmatched_preds: list = field(default_factory=list)
    unmatched_gts: list = field(default_factory=list)


def assign(preds, gts, iou_threshold=0.5, iou_kind="3d", ious=None):
    """Greedy matching in detection order.

    Each prediction takes the unmatched ground truth with the highest IoU
    (lowest index on ties) provided that IoU is at least ``iou_threshold``.
    Matching is class-agnostic; filter by class beforehand if needed. A
    precomputed (n_pred, n_gt) ``ious`` matrix may be passed.
    """
    p, g = boxes_to_array(preds), boxes_to_array(gts)
    if ious is None:
        ious = iou_matrix(p, g, iou_kind)
    taken = np.zeros(len(g), dtype=bool)
    out = Assignment()
    for i in detection_order(p):
        if len(g):
            row = np.where(taken, -1.0, ious[i])
            j = int(np.argmax(row))
            if row[j] >= iou_threshold:
                taken[j] = True
                out.pairs.append((int(i), j, float(ious[i, j])))
                continue
        out.unmatched_preds.append(int(i))
    out.unmatched_gts = [int(j) for j in np.nonzero(~taken)[0]]
    return out


class NMSFilter(TransformerMixin, BaseEstimator):
    """Stateless transformer applying confidence filtering and NMS to a list of frames."""

    def __init__(self, iou_threshold=0.5, conf_threshold=0.0, per_class=True, kind="3d"):
        self.iou_threshold = iou_threshold
        self.conf_threshold = conf_threshold
        self.per_class = per_class
        self.kind = kind

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        out = []
        for frame in X:
            arr = boxes_to_array(frame)
            arr = arr[arr[:, CONF] >= self.conf_threshold] if len(arr) else arr
            out.append(arr[nms_indices(arr, self.iou_threshold, self.per_class, self.kind)])
        return out

    def transform_boxes(self, X):
        return [array_to_boxes(f) for f in self.transform(X)]
