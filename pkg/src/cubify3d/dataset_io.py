"""KITTI label / calibration I/O, dimension priors and split files.

Label lines follow the KITTI object format::

    type trunc occ alpha left top right bottom h w l x y z rotation_y [score]

where (x, y, z) is the bottom-center of the box in camera coordinates.
Parsing is strict: any malformed line raises :class:`MalformedLine` with
its 1-based line number.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import KITTI_CLASSES, DimPriors, RoiPriorConfig
from .exceptions import MalformedLine, MissingP2
from .geometry import CLS, H, L, W, X, Y, Z, Box3D, CameraIntrinsics, boxes_to_array, wrap_angle

DONTCARE = "DontCare"
FRAME_ID = re.compile(r"^\d{6}$")


@dataclass(frozen=True)
class KittiLabel:
    cls: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple
    dimensions: tuple  # (h, w, l)
    location: tuple  # (x, y, z), bottom-center
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self):
        return self.cls == DONTCARE

    @property
    def bbox_height(self):
        return self.bbox[3] - self.bbox[1]


def _parse_line(line, lineno):
    parts = line.split()
    if len(parts) not in (15, 16):
        raise MalformedLine(lineno, f"expected 15 or 16 fields, got {len(parts)}")
    cls = parts[0]
    try:
        nums = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise MalformedLine(lineno, f"non-numeric field ({exc})") from None
    if not all(math.isfinite(v) for v in nums):
        raise MalformedLine(lineno, "non-finite numeric field")
    trunc, occ = nums[0], nums[1]
    if occ != int(occ):
        raise MalformedLine(lineno, f"occlusion must be an integer, got {parts[2]}")
    occ = int(occ)
    if cls == DONTCARE:
        if not (trunc == -1 or 0 <= trunc <= 1) or occ not in (-1, 0, 1, 2, 3):
            raise MalformedLine(lineno, "invalid truncation/occlusion")
    else:
        if not 0 <= trunc <= 1:
            raise MalformedLine(lineno, f"truncation {trunc} outside [0, 1]")
        if occ not in (0, 1, 2, 3):
            raise MalformedLine(lineno, f"occlusion {occ} not in 0..3")
    left, top, right, bottom = nums[3:7]
    if right < left or bottom < top:
        raise MalformedLine(lineno, "inverted 2D box")
    return KittiLabel(
        cls=cls, truncation=trunc, occlusion=occ, alpha=nums[2],
        bbox=(left, top, right, bottom), dimensions=tuple(nums[7:10]),
        location=tuple(nums[10:13]), rotation_y=nums[13],
        score=nums[14] if len(nums) == 15 else None,
    )


def parse_labels(text):
    """Parse the contents of one KITTI label file; blank lines are skipped."""
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            labels.append(_parse_line(line, lineno))
    return labels


def _fmt(v):
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def format_label(label):
    fields = [label.cls, _fmt(label.truncation), str(int(label.occlusion)), _fmt(label.alpha)]
    fields += [_fmt(v) for v in label.bbox]
    fields += [_fmt(v) for v in label.dimensions]
    fields += [_fmt(v) for v in label.location]
    fields.append(_fmt(label.rotation_y))
    if label.score is not None:
        fields.append(f"{label.score:.4f}")
    return " ".join(fields)


def format_labels(labels):
    return "".join(format_label(lb) + "\n" for lb in labels)


def to_box3d(label, classes=KITTI_CLASSES):
    """Convert a label to a center-based :class:`Box3D` (y_center = y_bottom - h/2).

    Raises:
        ValueError: for DontCare entries, non-positive dimensions or unknown classes.
    """
    if label.is_dontcare:
        raise ValueError("DontCare labels have no 3D box")
    h, w, l = label.dimensions
    if min(h, w, l) <= 0:
        raise ValueError(f"non-positive dimensions {label.dimensions}")
    if label.cls not in classes:
        raise ValueError(f"class {label.cls!r} not in registry")
    x, y, z = label.location
    conf = 1.0 if label.score is None else min(max(label.score, 0.0), 1.0)
    return Box3D(x, y - h / 2, z, w, h, l, label.rotation_y,
                 class_id=classes.index(label.cls), confidence=conf)


def from_box3d(box, cls, score=None, cam=None, truncation=0.0, occlusion=0):
    """KITTI label for a box. The 2D box is the projected hull when ``cam`` is given, else zeros."""
    bbox = (0.0, 0.0, 0.0, 0.0)
    if cam is not None:
        from .geometry import project_to_image

        try:
            bbox = project_to_image(box, cam).as_tuple()
        except ValueError:
            pass
    alpha = wrap_angle(box.yaw - math.atan2(box.x, box.z))
    return KittiLabel(cls, truncation, occlusion, alpha, bbox,
                      (box.height, box.width, box.length),
                      (box.x, box.y + box.height / 2, box.z), box.yaw, score)


def serialize_labels(boxes, class_names, scores=None, cam=None):
    """KITTI result text (16 fields) for detections.

    ``class_names`` gives one name per box; ``scores`` defaults to each box's confidence.
    """
    if scores is None:
        scores = [b.confidence for b in boxes]
    return format_labels(from_box3d(b, c, s, cam) for b, c, s in zip(boxes, class_names, scores))


def labels_to_array(labels, classes=KITTI_CLASSES):
    """(n, 9) box array for the non-DontCare, registered-class labels."""
    boxes = [to_box3d(lb, classes) for lb in labels if not lb.is_dontcare and lb.cls in classes]
    return boxes_to_array(boxes)


def compute_priors(frames, roi=None, classes=KITTI_CLASSES):
    """Per-dimension min/max over all in-ROI, non-DontCare objects.

    ``frames`` is an iterable of frames; each frame is a list of
    :class:`KittiLabel`, a list of :class:`Box3D` or an (n, 9) array.
    """
    roi = roi or RoiPriorConfig()
    chunks = []
    for frame in frames:
        if isinstance(frame, np.ndarray):
            arr = frame
        else:
            frame = list(frame)
            if frame and isinstance(frame[0], KittiLabel):
                arr = labels_to_array(frame, classes)
            else:
                arr = boxes_to_array(frame)
        if len(arr):
            chunks.append(arr)
    if not chunks:
        raise ValueError("no objects to compute priors from")
    arr = np.vstack(chunks)
    inside = ((np.abs(arr[:, X]) <= roi.x_max) & (np.abs(arr[:, Y]) <= roi.y_max)
              & (arr[:, Z] > 0) & (arr[:, Z] <= roi.z_max))
    arr = arr[inside]
    if not len(arr):
        raise ValueError("no objects inside the region of interest")
    lo = arr[:, [W, H, L]].min(axis=0)
    hi = arr[:, [W, H, L]].max(axis=0)
    return DimPriors(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]), float(lo[2]), float(hi[2]))


def parse_calib(text, image_width=1242, image_height=375):
    """Intrinsics from the P2 row of a KITTI calibration file; translation terms are ignored."""
    for line in text.splitlines():
        key, _, rest = line.partition(":")
        if key.strip() == "P2":
            vals = [float(v) for v in rest.split()]
            if len(vals) != 12:
                raise MissingP2(f"P2 row has {len(vals)} values, expected 12")
            P = np.array(vals).reshape(3, 4)
            return CameraIntrinsics(P[0, 0], P[1, 1], P[0, 2], P[1, 2], image_width, image_height)
    raise MissingP2("no P2 row in calibration text")


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple

    def __post_init__(self):
        for fid in self.train + self.val:
            if not FRAME_ID.match(fid):
                raise ValueError(f"frame id {fid!r} is not a zero-padded 6-digit id")
        overlap = set(self.train) & set(self.val)
        if overlap:
            raise ValueError(f"train and val splits share {len(overlap)} frames")


def read_split(path):
    ids = tuple(s.strip() for s in Path(path).read_text().splitlines() if s.strip())
    for fid in ids:
        if not FRAME_ID.match(fid):
            raise ValueError(f"{path}: bad frame id {fid!r}")
    return ids


def write_split(path, ids):
    Path(path).write_text("".join(f"{i}\n" for i in ids))


def load_label_dir(label_dir, frame_ids=None):
    """``{frame_id: [KittiLabel, ...]}`` for every ``*.txt`` in ``label_dir``.

    Parse errors are re-raised with the offending file name prefixed.
    """
    label_dir = Path(label_dir)
    paths = sorted(label_dir.glob("*.txt"))
    if frame_ids is not None:
        wanted = set(frame_ids)
        paths = [p for p in paths if p.stem in wanted]
    out = {}
    for p in paths:
        try:
            out[p.stem] = parse_labels(p.read_text(encoding="utf-8"))
        except MalformedLine as exc:
            raise MalformedLine(exc.line_number, f"{p.name}: {exc.reason}") from None
    return out
