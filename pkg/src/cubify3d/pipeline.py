"""Per-frame encode -> decode -> NMS -> assignment, with optional process parallelism."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import RoiPriorConfig
from .cubify import decode_array, encode
from .geometry import CLS
from .matching import assign, nms_indices


def process_frame(gt, roi=None, conf_threshold=0.5, nms_threshold=0.5, iou_threshold=0.5):
    """Round-trip one ground-truth frame through the codec and match the result back.

    Returns ``(n_matched, n_gt, overflow, skipped)``.
    """
    roi = roi or RoiPriorConfig()
    frame = encode(gt, roi)
    dets = decode_array(frame.tensor, roi, conf_threshold, frame.class_ids)
    dets = dets[nms_indices(dets, nms_threshold, per_class=True)]
    matched = 0
    for c in np.unique(gt[:, CLS]) if len(gt) else ():
        a = assign(dets[dets[:, CLS] == c], gt[gt[:, CLS] == c], iou_threshold)
        matched += len(a.pairs)
    return matched, len(gt), frame.overflow, frame.skipped


def _run_chunk(args):
    frames, roi, kw = args
    return [process_frame(f, roi, **kw) for f in frames]


def run_frames(frames, roi=None, workers=1, **kw):
    """Process frames, in ``workers`` processes when > 1; results keep input order."""
    roi = roi or RoiPriorConfig()
    if workers <= 1:
        return [process_frame(f, roi, **kw) for f in frames]
    chunks = [frames[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_run_chunk, [(c, roi, kw) for c in chunks]))
    out = [None] * len(frames)
    for w, part in enumerate(parts):
        out[w::workers] = part
    return out
