"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeMismatch


def check_box_array(boxes, *, allow_empty=True):
    """Validate an (n, 9) box array (or a ``Box3D`` sequence) and return it as float64."""
    from .geometry import H, L, W, boxes_to_array

    arr = boxes_to_array(boxes)
    if arr.ndim != 2 or arr.shape[1] != 9:
        raise ShapeMismatch(f"box array must have shape (n, 9), got {arr.shape}")
    if len(arr) == 0:
        if not allow_empty:
            raise ValueError("empty box array")
        return arr
    arr = check_array(arr, dtype=np.float64, ensure_all_finite=True)
    if np.any(arr[:, [W, H, L]] <= 0):
        raise ValueError("box dimensions must be positive")
    return arr


def check_label_tensor(tensor, cfg=None, *, batched=False):
    """Check that ``tensor`` has the (4, M, N, 8) slot layout with entries in [0, 1]."""
    t = np.asarray(tensor, dtype=np.float64)
    core = t.shape[1:] if batched else t.shape
    if len(core) != 4 or core[0] != 4 or core[3] != 8:
        raise ShapeMismatch(f"label tensor must be (4, M, N, 8), got {t.shape}")
    if cfg is not None and core[1:3] != (cfg.M, cfg.N):
        raise ShapeMismatch(f"tensor grid {core[1:3]} does not match config ({cfg.M}, {cfg.N})")
    if not np.all(np.isfinite(t)):
        raise ValueError("label tensor has non-finite entries")
    if t.size and (t.min() < 0 or t.max() > 1):
        raise ValueError("label tensor entries must lie in [0, 1]")
    return t


def check_same_shape(a, b, what="arrays"):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what} shape mismatch: {a.shape} vs {b.shape}")
    return a, b
