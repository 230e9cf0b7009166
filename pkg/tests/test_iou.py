import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubify3d.geometry import Box3D
from cubify3d.iou import (bev_intersection_area, bev_iou, bev_iou_matrix, iou_3d, iou_3d_matrix, iou_3d_with_grad,
                          iou_pairs)
from cubify3d.oracles import monte_carlo_iou

# Monte-Carlo (4e6 samples, seed 42) values for a fixed rotated pair, frozen
PAIR_A = np.array([1.3, 0.4, 20.2, 1.8, 1.5, 4.2, 0.37, 0, 1.0])
PAIR_B = np.array([2.0, 0.1, 21.1, 1.6, 1.7, 3.9, -0.52, 0, 1.0])
MC_3D = 0.22227186529566137
MC_BEV = 0.2859883126094516


def test_identical_boxes():
    b = Box3D(3, 1, 20, 1.7, 1.5, 4.2, 0.9)
    assert iou_3d(b, b) == 1.0
    assert bev_iou(b, b) == 1.0


def test_offset_unit_squares():
    a, b = Box3D(0, 0, 5, 1, 1, 1), Box3D(0.5, 0, 5, 1, 1, 1)
    assert bev_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)
    assert iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)


def test_octagon_against_monte_carlo_and_closed_form():
    a, b = Box3D(0, 0, 10, 1, 1, 1), Box3D(0, 0, 10, 1, 1, 1, math.pi / 4)
    mc = monte_carlo_iou(a.to_array(), b.to_array(), 1_000_000, np.random.default_rng(7), bev=True)
    assert bev_iou(a, b) == pytest.approx(mc, abs=0.005)
    # regular octagon of area 2(sqrt2 - 1) inside two unit squares
    octagon = 2 * (math.sqrt(2) - 1)
    assert bev_intersection_area(a, b) == pytest.approx(octagon, abs=1e-12)
    assert bev_iou(a, b) == pytest.approx(octagon / (2 - octagon), abs=1e-12)


def test_vertical_gap_is_zero():
    assert iou_3d(Box3D(0, 0, 10, 2, 1, 4), Box3D(0, 1.5, 10, 2, 1, 4)) == 0.0


def test_random_pair_matches_frozen_monte_carlo():
    assert iou_3d_matrix(PAIR_A[None], PAIR_B[None])[0, 0] == pytest.approx(MC_3D, abs=0.002)
    assert bev_iou_matrix(PAIR_A[None], PAIR_B[None])[0, 0] == pytest.approx(MC_BEV, abs=0.002)


def test_touching_boxes_are_zero():
    assert iou_3d(Box3D(0, 0, 10, 1, 1, 1), Box3D(1, 0, 10, 1, 1, 1)) == 0.0
    assert bev_iou(Box3D(0, 0, 10, 1, 1, 1), Box3D(0, 0, 11, 1, 1, 1)) == 0.0


def test_disjoint():
    assert iou_3d(Box3D(0, 0, 10, 1, 1, 1), Box3D(5, 0, 10, 1, 1, 1)) == 0.0


def test_near_degenerate_no_nan():
    a = Box3D(0, 0, 10, 1e-9, 1e-9, 1e-9)
    assert math.isfinite(iou_3d(a, a))
    assert math.isfinite(iou_3d(a, Box3D(0, 0, 10, 1, 1, 1)))


def test_matrix_shapes_and_empty():
    assert iou_3d_matrix(np.zeros((0, 9)), PAIR_A[None]).shape == (0, 1)
    assert iou_pairs(PAIR_A[None, :7], PAIR_B[None, :7])[0] == pytest.approx(iou_3d_matrix(PAIR_A[None], PAIR_B[None])[0, 0])


def test_differentiable_path_agrees_with_kernel(rng):
    for _ in range(50):
        a = PAIR_A.copy()
        a[[0, 1, 2]] += rng.normal(0, 0.5, 3)
        a[6] = rng.uniform(-math.pi, math.pi)
        v, _ = iou_3d_with_grad(a[:7], PAIR_B[:7])
        assert v == pytest.approx(iou_3d_matrix(a[None], PAIR_B[None])[0, 0], abs=1e-12)


coord = st.floats(-3, 3)
dim = st.floats(0.2, 4)
angle = st.floats(-math.pi, math.pi)
box_st = st.builds(lambda x, y, z, w, h, l, t: Box3D(x, y, 20 + z, w, h, l, t), coord, coord, coord, dim, dim, dim, angle)


@settings(max_examples=300, deadline=None)
@given(box_st, box_st)
def test_symmetry_exact_and_range(a, b):
    v = iou_3d(a, b)
    assert v == iou_3d(b, a)
    assert 0.0 <= v <= 1.0
    assert bev_iou(a, b) == bev_iou(b, a)


@settings(max_examples=200, deadline=None)
@given(box_st, box_st, st.floats(-30, 30), st.floats(-5, 5), st.floats(-10, 60), angle)
def test_rigid_motion_invariance(a, b, dx, dy, dz, theta):
    base = iou_3d(a, b)
    shifted = [x.replace(x=x.x + dx, y=x.y + dy, z=x.z + dz) for x in (a, b)]
    assert iou_3d(*shifted) == pytest.approx(base, abs=1e-9)
    # rotate both about the vertical axis through the origin
    c, s = math.cos(theta), math.sin(theta)
    rot = [x.replace(x=c * x.x + s * x.z, z=-s * x.x + c * x.z, yaw=x.yaw + theta) for x in (a, b)]
    assert iou_3d(*rot) == pytest.approx(base, abs=1e-9)


def test_iou_gradient_matches_finite_differences():
    pred = np.array([0.3, 0.1, 10.2, 1.8, 1.5, 4.0, 0.0])
    gt = np.array([0.0, 0.0, 10.0, 1.7, 1.6, 4.2, 0.0])
    _, g = iou_3d_with_grad(pred, gt)
    h = 1e-6
    for k in range(7):
        e = np.zeros(7)
        e[k] = h
        fd = (iou_3d_with_grad(pred + e, gt)[0] - iou_3d_with_grad(pred - e, gt)[0]) / (2 * h)
        assert g[k] == pytest.approx(fd, abs=1e-6)


def _corner_on_pred_edge(j, yaw):
    # long thin boxes, nearly parallel; gt corner j sits 1e-6 m inside the pred's x = +0.25 edge
    pred = np.array([0.0, 0.0, 20.0, 0.5, 1.5, 28.0, 0.0])
    w, l = 0.5, 28.0
    lx, lz = ((-w / 2, -l / 2), (w / 2, -l / 2), (w / 2, l / 2), (-w / 2, l / 2))[j]
    c, s = math.cos(yaw), math.sin(yaw)
    cx = 0.25 - 1e-6 - (lx * c + lz * s)
    cz = 33.0 - (-lx * s + lz * c)
    return pred, np.array([cx, 0.0, cz, w, 1.0, l, yaw])


@pytest.mark.parametrize("j", range(4))
@pytest.mark.parametrize("yaw", [0.02, 0.02 - math.pi, -0.02, math.pi - 0.02])
def test_margin_sees_gt_corner_near_parallel_edge(j, yaw):
    pred, gt = _corner_on_pred_edge(j, yaw)
    _, _, margin = iou_3d_with_grad(pred, gt, return_margin=True)
    assert margin < 1e-5
