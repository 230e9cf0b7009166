"""Cubified label codec.

The region of interest in front of the camera is split into 4 image-plane
quadrants (by the signs of x and y) and each quadrant into ``M`` depth
cuboids of ``z_max / M`` meters. Every cuboid owns ``N`` object slots,
filled nearest-first. A slot holds 8 values in [0, 1]::

    (confidence, |x|/x_max, |y|/y_max, z offset within cuboid / dz,
     w, h, l normalized by the dimension priors, (yaw + pi) / 2pi)

Quadrant index: 0 = (x<0, y<0), 1 = (x>=0, y<0), 2 = (x<0, y>=0),
3 = (x>=0, y>=0). Ties go to the non-negative side and to the upper
cuboid.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import NAMED_PRIORS, DimPriors, RoiPriorConfig
from .exceptions import CorruptTensorFile, OutOfRoi
from .geometry import CLS, CONF, H, L, W, X, Y, YAW, Z, array_to_boxes, boxes_to_array, wrap_angles
from .validation import check_label_tensor

FIELDS = ("confidence", "x", "y", "z", "w", "h", "l", "orientation")
F_CONF, F_X, F_Y, F_Z, F_W, F_H, F_L, F_O = range(8)

MAGIC = b"CUB3"
HEADER = struct.Struct("<4sIII")
FLAG_CLASS_PLANE = 1


def _in_roi(x, y, z, cfg):
    return (np.abs(x) <= cfg.x_max) & (np.abs(y) <= cfg.y_max) & (z > 0) & (z <= cfg.z_max)


def _check_roi(x, y, z, cfg):
    if not _in_roi(x, y, z, cfg):
        raise OutOfRoi(f"center ({x}, {y}, {z}) outside ROI "
                       f"|x|<={cfg.x_max}, |y|<={cfg.y_max}, 0<z<={cfg.z_max}")


def _quadrants(x, y):
    return (x >= 0).astype(np.int64) + 2 * (y >= 0).astype(np.int64)


def _cuboids(z, cfg):
    return np.minimum(np.floor(z / cfg.dz).astype(np.int64), cfg.M - 1)


def quadrant_index(box, cfg=None):
    cfg = cfg or RoiPriorConfig()
    _check_roi(box.x, box.y, box.z, cfg)
    return int(_quadrants(np.float64(box.x), np.float64(box.y)))


def cuboid_index(z, cfg=None):
    cfg = cfg or RoiPriorConfig()
    if not 0 < z <= cfg.z_max:
        raise OutOfRoi(f"z={z} outside (0, {cfg.z_max}]")
    return int(_cuboids(np.float64(z), cfg))


def _normalize_rows(arr, cfg):
    """Normalized 8-vectors for in-ROI rows of an (n, 9) array, plus quadrant and cuboid."""
    q = _quadrants(arr[:, X], arr[:, Y])
    j = _cuboids(arr[:, Z], cfg)
    out = np.empty((len(arr), 8))
    out[:, F_CONF] = arr[:, CONF]
    out[:, F_X] = np.abs(arr[:, X]) / cfg.x_max
    out[:, F_Y] = np.abs(arr[:, Y]) / cfg.y_max
    out[:, F_Z] = np.clip(arr[:, Z] / cfg.dz - j, 0.0, 1.0)
    out[:, F_W:F_L + 1] = cfg.dim_priors.normalize(arr[:, [W, H, L]])
    out[:, F_O] = (arr[:, YAW] + math.pi) / (2 * math.pi)
    return out, q, j


def normalize_object(box, cfg=None):
    """The 8-slot encoding of a single box.

    Raises:
        OutOfRoi: if the box center is outside the region of interest.
    """
    cfg = cfg or RoiPriorConfig()
    _check_roi(box.x, box.y, box.z, cfg)
    out, _, _ = _normalize_rows(box.to_array()[None], cfg)
    return out[0]


@dataclass
class EncodedFrame:
    """Result of encoding one frame.

    ``class_ids`` has shape (4, M, N) and is -1 at empty slots.
    """

    tensor: np.ndarray
    mask: np.ndarray
    class_ids: np.ndarray
    overflow: int
    skipped: int

    def __iter__(self):
        # unpacks like the plain (tensor, mask, overflow) triple
        return iter((self.tensor, self.mask, self.overflow))


def encode(objects, cfg=None):
    """Encode a list of boxes (or an (n, 9) array) into the slot grid.

    Objects outside the ROI are skipped and counted in ``skipped``. When a
    cuboid receives more than N objects the N nearest are kept and the rest
    counted in ``overflow``. Unpacks as ``tensor, mask, overflow``.
    """
    cfg = cfg or RoiPriorConfig()
    arr = boxes_to_array(objects)
    tensor = np.zeros(cfg.shape)
    mask = np.zeros(cfg.shape[:3], dtype=bool)
    class_ids = np.full(cfg.shape[:3], -1, dtype=np.int64)
    if len(arr) == 0:
        return EncodedFrame(tensor, mask, class_ids, 0, 0)
    keep = _in_roi(arr[:, X], arr[:, Y], arr[:, Z], cfg)
    skipped = int(len(arr) - keep.sum())
    arr = arr[keep]
    vec, q, j = _normalize_rows(arr, cfg)
    bucket = q * cfg.M + j
    # sort by bucket, then z, then every remaining field, so input order never matters
    order = np.lexsort(tuple(arr[:, c] for c in (CONF, CLS, YAW, L, H, W, Y, X, Z)) + (bucket,))
    bucket = bucket[order]
    starts = np.searchsorted(bucket, bucket, side="left")
    slot = np.arange(len(bucket)) - starts
    fits = slot < cfg.N
    overflow = int((~fits).sum())
    sel = order[fits]
    qi, ji, ki = q[sel], j[sel], slot[fits]
    tensor[qi, ji, ki] = vec[sel]
    mask[qi, ji, ki] = True
    class_ids[qi, ji, ki] = arr[sel, CLS].astype(np.int64)
    return EncodedFrame(tensor, mask, class_ids, overflow, skipped)


def decode_slots(tensor, cfg=None):
    """Metric (x, y, z, w, h, l, yaw) for every slot; shape (4, M, N, 7)."""
    cfg = cfg or RoiPriorConfig()
    t = np.asarray(tensor, dtype=np.float64)
    q = np.arange(4)[:, None, None]
    j = np.arange(t.shape[1])[None, :, None]
    sx = np.where(q % 2 == 1, 1.0, -1.0)
    sy = np.where(q // 2 == 1, 1.0, -1.0)
    out = np.empty(t.shape[:3] + (7,))
    out[..., 0] = sx * t[..., F_X] * cfg.x_max
    out[..., 1] = sy * t[..., F_Y] * cfg.y_max
    out[..., 2] = (j + t[..., F_Z]) * cfg.dz
    out[..., 3:6] = cfg.dim_priors.denormalize(t[..., F_W:F_L + 1])
    out[..., 6] = t[..., F_O] * (2 * math.pi) - math.pi
    return out


def decode_array(tensor, cfg=None, conf_threshold=0.5, class_ids=None):
    """Like :func:`decode` but returns an (n, 9) box array, in slot order."""
    cfg = cfg or RoiPriorConfig()
    t = np.asarray(tensor, dtype=np.float64)
    sel = t[..., F_CONF] >= conf_threshold
    if not sel.any():
        return np.zeros((0, 9))
    idx = np.nonzero(sel)
    t = t[idx]
    q, j = idx[0], idx[1]
    out = np.empty((len(t), 9))
    # x, y at the origin stay +0.0 in the non-negative quadrants
    out[:, X] = np.where(q % 2 == 1, t[:, F_X], -t[:, F_X]) * cfg.x_max
    out[:, Y] = np.where(q // 2 == 1, t[:, F_Y], -t[:, F_Y]) * cfg.y_max
    out[:, Z] = (j + t[:, F_Z]) * cfg.dz
    out[:, [W, H, L]] = cfg.dim_priors.denormalize(t[:, F_W:F_L + 1])
    out[:, YAW] = wrap_angles(t[:, F_O] * (2 * math.pi) - math.pi)
    out[:, CLS] = 0 if class_ids is None else np.maximum(np.asarray(class_ids)[idx], 0)
    out[:, CONF] = np.clip(t[:, F_CONF], 0.0, 1.0)
    return out


def decode(tensor, cfg=None, conf_threshold=0.5, class_ids=None):
    """Boxes for every slot whose confidence is at least ``conf_threshold``.

    Signs of x and y come from the quadrant index and the z offset from the
    cuboid index. ``class_ids`` (4, M, N) supplies per-slot classes when
    available; otherwise class 0 is used.
    """
    return array_to_boxes(decode_array(tensor, cfg, conf_threshold, class_ids))


# --- serialization ---------------------------------------------------------


def tensor_to_bytes(tensor, class_ids=None):
    """Binary layout: header (magic, u32 M, u32 N, u32 flags) then float32 LE
    values in (quadrant, cuboid, slot, field) order; an int32 class plane
    of shape (4, M, N) follows when flag bit 0 is set."""
    t = np.asarray(tensor)
    _, M, N, _ = t.shape
    flags = FLAG_CLASS_PLANE if class_ids is not None else 0
    parts = [HEADER.pack(MAGIC, M, N, flags), np.ascontiguousarray(t, dtype="<f4").tobytes()]
    if class_ids is not None:
        parts.append(np.ascontiguousarray(class_ids, dtype="<i4").tobytes())
    return b"".join(parts)


def tensor_from_bytes(data):
    """Inverse of :func:`tensor_to_bytes`; returns ``(tensor, class_ids or None)``."""
    if len(data) < HEADER.size:
        raise CorruptTensorFile("truncated header")
    magic, M, N, flags = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptTensorFile(f"bad magic {magic!r}")
    if M < 1 or N < 1:
        raise CorruptTensorFile(f"invalid grid size M={M} N={N}")
    n_vals = 4 * M * N * 8
    expect = HEADER.size + 4 * n_vals + (4 * 4 * M * N if flags & FLAG_CLASS_PLANE else 0)
    if len(data) != expect:
        raise CorruptTensorFile(f"expected {expect} bytes for M={M} N={N}, got {len(data)}")
    tensor = np.frombuffer(data, dtype="<f4", count=n_vals, offset=HEADER.size)
    tensor = tensor.astype(np.float64).reshape(4, M, N, 8)
    if not np.all(np.isfinite(tensor)) or tensor.min() < 0 or tensor.max() > 1:
        raise CorruptTensorFile("tensor values outside [0, 1]")
    class_ids = None
    if flags & FLAG_CLASS_PLANE:
        class_ids = np.frombuffer(data, dtype="<i4", count=4 * M * N,
                                  offset=HEADER.size + 4 * n_vals).astype(np.int64).reshape(4, M, N)
    return tensor, class_ids


def save_tensor(path, tensor, class_ids=None):
    Path(path).write_bytes(tensor_to_bytes(tensor, class_ids))


def load_tensor(path):
    return tensor_from_bytes(Path(path).read_bytes())


def tensor_to_json(tensor, class_ids=None):
    """Debug mirror of the binary format."""
    t = np.asarray(tensor)
    doc = {"M": int(t.shape[1]), "N": int(t.shape[2]), "fields": list(FIELDS), "values": t.tolist()}
    if class_ids is not None:
        doc["class_ids"] = np.asarray(class_ids).tolist()
    return json.dumps(doc)


def tensor_from_json(text):
    doc = json.loads(text)
    t = np.asarray(doc["values"], dtype=np.float64).reshape(4, doc["M"], doc["N"], 8)
    cls = doc.get("class_ids")
    return t, (None if cls is None else np.asarray(cls, dtype=np.int64))


# --- estimator wrapper -----------------------------------------------------


class CubifyEncoder(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`encode` / :func:`decode`.

    ``X`` is a list of frames, each a sequence of ``Box3D`` or an (n, 9)
    array. ``transform`` returns an array of shape (n_frames, 4, M, N, 8).

    :param priors: ``"kitti"``, ``"vkitti2"``, a :class:`DimPriors`, or
        ``"fit"`` to take the min/max of the in-ROI training objects.
    :param conf_threshold: slot confidence needed by ``inverse_transform``.
    """

    def __init__(self, x_max=40.0, y_max=10.0, z_max=100.0, n_cuboids=5, n_slots=10,
                 priors="kitti", conf_threshold=0.5):
        self.x_max = x_max
        self.y_max = y_max
        self.z_max = z_max
        self.n_cuboids = n_cuboids
        self.n_slots = n_slots
        self.priors = priors
        self.conf_threshold = conf_threshold

    def _roi(self, priors):
        return RoiPriorConfig(self.x_max, self.y_max, self.z_max, self.n_cuboids, self.n_slots, priors)

    def fit(self, X, y=None):
        if isinstance(self.priors, DimPriors):
            priors = self.priors
        elif self.priors == "fit":
            from .dataset_io import compute_priors

            roi = self._roi(NAMED_PRIORS["kitti"])
            priors = compute_priors([boxes_to_array(f) for f in X], roi)
        else:
            priors = NAMED_PRIORS[str(self.priors).lower()]
        self.config_ = self._roi(priors)
        self.priors_ = priors
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        frames = [encode(f, self.config_) for f in X]
        self.overflow_ = np.array([f.overflow for f in frames])
        self.skipped_ = np.array([f.skipped for f in frames])
        self.class_ids_ = np.stack([f.class_ids for f in frames]) if frames else None
        if not frames:
            return np.zeros((0,) + self.config_.shape)
        return np.stack([f.tensor for f in frames])

    def inverse_transform(self, T, class_ids=None):
        check_is_fitted(self, "config_")
        T = check_label_tensor(T, self.config_, batched=True)
        if class_ids is None:
            class_ids = [None] * len(T)
        return [decode_array(t, self.config_, self.conf_threshold, c) for t, c in zip(T, class_ids)]
