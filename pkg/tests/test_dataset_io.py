import math

import numpy as np
import pytest

from cubify3d.config import KITTI_CLASSES
from cubify3d.dataset_io import (SplitSpec, compute_priors, format_labels, from_box3d, labels_to_array,
                                 load_label_dir, parse_calib, parse_labels, read_split, serialize_labels,
                                 to_box3d, write_split)
from cubify3d.exceptions import MalformedLine, MissingP2
from cubify3d.geometry import Box3D
from cubify3d.synthetic import random_boxes

CAR = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"


def test_canonical_car_line():
    (lb,) = parse_labels(CAR + "\n")
    assert lb.cls == "Car"
    assert lb.truncation == 0.0 and lb.occlusion == 0
    assert lb.alpha == -1.58
    assert lb.bbox == (587.01, 173.33, 614.12, 200.12)
    assert lb.dimensions == (1.65, 1.67, 3.64)
    assert lb.location == (-0.65, 1.71, 46.70)
    assert lb.rotation_y == -1.59
    assert lb.score is None


def test_empty_and_blank():
    assert parse_labels("") == []
    assert parse_labels("\n\n") == []


@pytest.mark.parametrize("line, fragment", [
    ("Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70", "14"),
    (CAR.replace("46.70", "abc"), "non-numeric"),
    (CAR.replace("Car 0.00 0", "Car 0.00 7"), "occlusion"),
    (CAR.replace("Car 0.00", "Car 1.50"), "truncation"),
    (CAR.replace("46.70", "nan"), "non-finite"),
])
def test_malformed_lines(line, fragment):
    with pytest.raises(MalformedLine) as exc:
        parse_labels(CAR + "\n" + line + "\n")
    assert exc.value.line_number == 2
    assert fragment in str(exc.value)


def test_fixture_dir(kitti_dir):
    frames = load_label_dir(kitti_dir / "label_2")
    assert sorted(frames) == ["000000", "000001", "000002", "000003", "000004"]
    assert frames["000004"] == []
    assert sum(len(v) for v in frames.values()) >= 20
    assert {lb.cls for v in frames.values() for lb in v} >= set(KITTI_CLASSES) | {"DontCare"}


def test_fixture_roundtrip_byte_identical(kitti_dir):
    for sub in ("label_2", "results"):
        for p in sorted((kitti_dir / sub).glob("*.txt")):
            text = p.read_text()
            assert format_labels(parse_labels(text)) == text


def test_error_names_file(tmp_path):
    (tmp_path / "000007.txt").write_text(CAR + "\nCar 1 2\n")
    with pytest.raises(MalformedLine, match="000007.txt") as exc:
        load_label_dir(tmp_path)
    assert exc.value.line_number == 2


def test_to_box3d_center():
    lb = parse_labels(CAR.replace("1.65 1.67 3.64 -0.65 1.71", "1.50 1.67 3.64 -0.65 1.65"))[0]
    b = to_box3d(lb)
    assert b.y == pytest.approx(0.9)
    assert (b.width, b.height, b.length) == (1.67, 1.5, 3.64)
    assert b.class_id == 0 and b.confidence == 1.0


def test_to_box3d_rejects(kitti_dir):
    dc = [lb for lb in parse_labels((kitti_dir / "label_2" / "000000.txt").read_text()) if lb.is_dontcare]
    with pytest.raises(ValueError):
        to_box3d(dc[0])
    with pytest.raises(ValueError):
        to_box3d(parse_labels(CAR.replace("Car", "Bus"))[0])


def test_box_label_roundtrip(rng):
    for row in random_boxes(rng, 50):
        b = Box3D.from_array(np.round(row, 2))
        lb = from_box3d(b, KITTI_CLASSES[b.class_id], score=0.5)
        back = to_box3d(parse_labels(format_labels([lb]))[0])
        np.testing.assert_allclose(back.to_array()[:7], b.to_array()[:7], atol=5e-3)


def test_serialize_labels_sixteen_fields(rng):
    boxes = [Box3D.from_array(r) for r in random_boxes(rng, 3, confidence=0.73456)]
    text = serialize_labels(boxes, ["Car"] * 3)
    lines = text.splitlines()
    assert len(lines) == 3 and all(len(s.split()) == 16 for s in lines)
    assert lines[0].endswith("0.7346")


def test_priors_single_object():
    b = Box3D(0, 0, 10, 2.0, 1.5, 4.0)
    p = compute_priors([[b]])
    assert p.w_min == p.w_max == 2.0


def test_priors_known_width_span():
    frames = [[Box3D(0, 0, 10, 0.30, 1.0, 1.0)], [Box3D(0, 0, 20, 3.01, 1.0, 1.0), Box3D(1, 0, 30, 1.7, 1, 1)]]
    p = compute_priors(frames)
    assert (p.w_min, p.w_max) == (0.30, 3.01)


def test_priors_match_scalar_oracle(rng):
    frames = [random_boxes(rng, int(rng.integers(1, 20))) for _ in range(30)]
    p = compute_priors(frames)
    rows = [r for f in frames for r in f]
    assert p.w_min == min(r[3] for r in rows) and p.w_max == max(r[3] for r in rows)
    assert p.h_min == min(r[4] for r in rows) and p.h_max == max(r[4] for r in rows)
    assert p.l_min == min(r[5] for r in rows) and p.l_max == max(r[5] for r in rows)


def test_priors_skip_out_of_roi(kitti_dir):
    frames = load_label_dir(kitti_dir / "label_2").values()
    p = compute_priors(frames)
    arr = np.vstack([labels_to_array(f) for f in load_label_dir(kitti_dir / "label_2").values() if f])
    inside = arr[arr[:, 2] <= 100]
    assert p.w_max == inside[:, 3].max()
    with pytest.raises(ValueError):
        compute_priors([])


def test_parse_calib(kitti_dir):
    cam = parse_calib((kitti_dir / "calib" / "000000.txt").read_text())
    assert cam.fx == pytest.approx(721.5377) and cam.cx == pytest.approx(609.5593)
    with pytest.raises(MissingP2):
        parse_calib("P0: 1 2 3\n")
    with pytest.raises(MissingP2):
        parse_calib("P2: 1 2 3\n")


def test_splits(tmp_path):
    write_split(tmp_path / "val.txt", ["000001", "000003"])
    assert read_split(tmp_path / "val.txt") == ("000001", "000003")
    with pytest.raises(ValueError):
        SplitSpec(("000001",), ("000001",))
    with pytest.raises(ValueError):
        SplitSpec(("1",), ())


def test_load_label_dir_filters_ids(kitti_dir):
    frames = load_label_dir(kitti_dir / "label_2", ["000001", "000003"])
    assert sorted(frames) == ["000001", "000003"]
