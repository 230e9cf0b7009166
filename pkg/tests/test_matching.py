import numpy as np
import pytest

from cubify3d import oracles
from cubify3d.checks import clustered_boxes
from cubify3d.geometry import Box3D
from cubify3d.iou import iou_matrix
from cubify3d.matching import NMSFilter, assign, nms, nms_indices


def iou_fn(a, b):
    return float(iou_matrix(np.asarray(a)[None], np.asarray(b)[None])[0, 0])


def box(x, conf, z=20.0, cls=0, w=2.0):
    return Box3D(x, 0.0, z, w, 1.5, 4.0, 0.0, cls, conf)


def test_identical_boxes_keep_highest():
    out = nms([box(0, 0.8), box(0, 0.9)], 0.5)
    assert [b.confidence for b in out] == [0.9]


def test_disjoint_all_survive_in_order():
    out = nms([box(0, 0.3), box(10, 0.9), box(-10, 0.6)], 0.5)
    assert [b.confidence for b in out] == [0.9, 0.6, 0.3]


def test_tie_break_prefers_nearer_then_input_order():
    a, b = box(0, 0.9, z=21.0), box(0.1, 0.9, z=20.5)
    assert nms([a, b], 0.5) == [b]
    c = box(0.1, 0.9, z=21.0)
    assert nms([a, c], 0.5) == [a]


def test_per_class_and_class_agnostic():
    boxes = [box(0, 0.9, cls=0), box(0, 0.8, cls=1)]
    assert len(nms(boxes, 0.5)) == 2
    assert len(nms(boxes, 0.5, per_class=False)) == 1


def test_array_in_array_out(rng):
    arr = clustered_boxes(rng, 20)
    out = nms(arr, 0.5)
    assert isinstance(out, np.ndarray) and out.shape[1] == 9


def test_assign_examples():
    a = assign([box(0, 0.9)], [box(0, 1.0)], 0.7)
    assert len(a.pairs) == 1 and a.pairs[0][:2] == (0, 0) and a.pairs[0][2] == pytest.approx(1.0)
    # width-2 boxes offset so that IoU is about 0.3
    p, g = box(1.0769, 0.9), box(0.0, 1.0)
    iou = iou_fn(p.to_array(), g.to_array())
    assert iou == pytest.approx(0.3, abs=1e-3)
    a = assign([p], [g], 0.5)
    assert a.pairs == [] and a.unmatched_preds == [0] and a.unmatched_gts == [0]


def test_assign_tie_lowest_gt_index():
    a = assign([box(0, 0.9)], [box(0, 1.0), box(0, 1.0)], 0.5)
    assert a.pairs[0][1] == 0 and a.unmatched_gts == [1]


def test_assign_empty_inputs():
    a = assign([], [box(0, 1)], 0.5)
    assert a.unmatched_gts == [0] and not a.pairs
    a = assign([box(0, 0.5)], [], 0.5)
    assert a.unmatched_preds == [0]


def test_nms_matches_brute_force(rng):
    for _ in range(100):
        boxes = clustered_boxes(rng, int(rng.integers(0, 40)))
        for per_class in (True, False):
            assert nms_indices(boxes, 0.5, per_class).tolist() == oracles.brute_nms(boxes, 0.5, iou_fn, per_class)


def test_assign_matches_brute_force(rng):
    for _ in range(100):
        n = int(rng.integers(0, 40))
        boxes = clustered_boxes(rng, n)
        preds, gts = boxes[: n // 2], boxes[n // 2:]
        a = assign(preds, gts, 0.3)
        pairs, up, ug = oracles.brute_assign(preds, gts, 0.3, iou_fn)
        assert [(i, j) for i, j, _ in a.pairs] == [(i, j) for i, j, _ in pairs]
        assert sorted(a.unmatched_preds) == sorted(up) and a.unmatched_gts == ug


def test_nms_properties(rng):
    for _ in range(50):
        boxes = clustered_boxes(rng, int(rng.integers(1, 50)))
        kept = nms(boxes, 0.5)
        assert np.array_equal(nms(kept, 0.5), kept)
        assert len(kept) <= len(boxes)
        assert all(any(np.array_equal(k, b) for b in boxes) for k in kept)
        ious = iou_matrix(kept, kept)
        same = kept[:, 7][:, None] == kept[:, 7][None, :]
        np.fill_diagonal(ious, 0)
        assert not np.any((ious >= 0.5) & same)


def test_assign_is_one_to_one(rng):
    boxes = clustered_boxes(rng, 40)
    a = assign(boxes[:20], boxes[20:], 0.1)
    ps = [p for p, _, _ in a.pairs]
    gs = [g for _, g, _ in a.pairs]
    assert len(set(ps)) == len(ps) and len(set(gs)) == len(gs)
    assert sorted(ps + a.unmatched_preds) == list(range(20))
    assert sorted(gs + a.unmatched_gts) == list(range(20))


def test_nms_filter_estimator(rng):
    frames = [clustered_boxes(rng, 15) for _ in range(3)]
    f = NMSFilter(iou_threshold=0.5, conf_threshold=0.3)
    out = f.fit_transform(frames)
    assert all((o[:, 8] >= 0.3).all() for o in out)
    assert f.get_params()["iou_threshold"] == 0.5
    assert isinstance(f.transform_boxes(frames)[0], list)
