"""Exact rotated IoU for boxes that rotate only about the vertical axis.

The bird's-eye-view intersection is the Sutherland-Hodgman clip of one
convex footprint by the other. Because both boxes share the vertical axis,
the 3D intersection volume factorizes into BEV intersection area times the
overlap of the two y-intervals.

Batched IoU matrices run in a numba kernel. :func:`iou_3d_with_grad` is a
separate pure-Python path carrying forward-mode derivatives with respect
to the first box, used by the IoU loss.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .geometry import Box3D, bev_corners, boxes_to_array

# Intersections below this fraction of the smaller footprint are treated as
# touching (zero area) so that tie behavior stays deterministic.
TOUCH_RTOL = 1e-12


@njit(cache=True, nogil=True)
def _clip_area(subj, clip):
    """Area of convex ``subj`` clipped by convex CCW ``clip``; both (4, 2)."""
    buf_a = np.empty((16, 2))
    buf_b = np.empty((16, 2))
    n = 4
    for i in range(4):
        buf_a[i, 0] = subj[i, 0]
        buf_a[i, 1] = subj[i, 1]
    src, dst = buf_a, buf_b
    for e in range(4):
        e0x, e0z = clip[e, 0], clip[e, 1]
        ex = clip[(e + 1) % 4, 0] - e0x
        ez = clip[(e + 1) % 4, 1] - e0z
        m = 0
        for k in range(n):
            px, pz = src[k, 0], src[k, 1]
            qx, qz = src[(k + 1) % n, 0], src[(k + 1) % n, 1]
            dp = ex * (pz - e0z) - ez * (px - e0x)
            dq = ex * (qz - e0z) - ez * (qx - e0x)
            if dp >= 0.0:
                dst[m, 0] = px
                dst[m, 1] = pz
                m += 1
                if dq < 0.0:
                    t = dp / (dp - dq)
                    dst[m, 0] = px + t * (qx - px)
                    dst[m, 1] = pz + t * (qz - pz)
                    m += 1
            elif dq >= 0.0:
                t = dp / (dp - dq)
                dst[m, 0] = px + t * (qx - px)
                dst[m, 1] = pz + t * (qz - pz)
                m += 1
        n = m
        if n < 3:
            return 0.0
        src, dst = dst, src
    area = 0.0
    for k in range(n):
        area += src[k, 0] * src[(k + 1) % n, 1] - src[(k + 1) % n, 0] * src[k, 1]
    return max(0.5 * area, 0.0)


@njit(cache=True, nogil=True)
def _shoelace(c):
    a = 0.0
    for k in range(4):
        a += c[k, 0] * c[(k + 1) % 4, 1] - c[(k + 1) % 4, 0] * c[k, 1]
    return 0.5 * a


@njit(cache=True, nogil=True)
def _row_less(a, b):
    for k in range(a.shape[0]):
        if a[k] < b[k]:
            return True
        if a[k] > b[k]:
            return False
    return False


@njit(cache=True, nogil=True)
def _pair_iou(ra, ca, rb, cb, three_d):
    # canonical operand order makes iou(a, b) == iou(b, a) bit-for-bit
    if _row_less(rb, ra):
        ra, ca, rb, cb = rb, cb, ra, ca
    # footprint areas and heights are evaluated exactly like the intersection
    # terms so that identical boxes give an IoU of exactly 1
    area_a = _shoelace(ca)
    area_b = _shoelace(cb)
    inter = _clip_area(ca, cb)
    if inter <= TOUCH_RTOL * min(area_a, area_b):
        return 0.0
    if three_d:
        top_a, bot_a = ra[1] - 0.5 * ra[4], ra[1] + 0.5 * ra[4]
        top_b, bot_b = rb[1] - 0.5 * rb[4], rb[1] + 0.5 * rb[4]
        overlap = min(bot_a, bot_b) - max(top_a, top_b)
        if overlap <= 0.0:
            return 0.0
        inter = inter * overlap
        union = area_a * (bot_a - top_a) + area_b * (bot_b - top_b) - inter
    else:
        union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


@njit(cache=True, nogil=True)
def _iou_matrix(ka, ca, kb, cb, three_d):
    out = np.zeros((ka.shape[0], kb.shape[0]))
    for i in range(ka.shape[0]):
        for j in range(kb.shape[0]):
            out[i, j] = _pair_iou(ka[i], ca[i], kb[j], cb[j], three_d)
    return out


@njit(cache=True, nogil=True)
def _iou_pairs(ka, ca, kb, cb, three_d):
    out = np.zeros(ka.shape[0])
    for i in range(ka.shape[0]):
        out[i] = _pair_iou(ka[i], ca[i], kb[i], cb[i], three_d)
    return out


def _kernel_inputs(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return np.ascontiguousarray(arr[:, :7]), np.ascontiguousarray(bev_corners(arr))


def iou_matrix(boxes_a, boxes_b, kind="3d"):
    """Pairwise IoU between two box collections (``Box3D`` sequences or (n, 9) arrays)."""
    if kind not in ("3d", "bev"):
        raise ValueError(f"unknown IoU kind {kind!r}")
    a, b = boxes_to_array(boxes_a), boxes_to_array(boxes_b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ka, ca = _kernel_inputs(a)
    kb, cb = _kernel_inputs(b)
    return _iou_matrix(ka, ca, kb, cb, kind == "3d")


def iou_pairs(boxes_a, boxes_b, kind="3d"):
    """Elementwise IoU of ``boxes_a[i]`` with ``boxes_b[i]``.

    Accepts (n, 7) parameter arrays (x, y, z, w, h, l, yaw) as well as (n, 9) box arrays.
    """
    a = np.asarray(boxes_to_array(boxes_a), dtype=np.float64)
    b = np.asarray(boxes_to_array(boxes_b), dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError("iou_pairs needs equally long inputs")
    if len(a) == 0:
        return np.zeros(0)
    ka, ca = _kernel_inputs(a)
    kb, cb = _kernel_inputs(b)
    return _iou_pairs(ka, ca, kb, cb, kind == "3d")


def iou_3d_matrix(boxes_a, boxes_b):
    return iou_matrix(boxes_a, boxes_b, "3d")


def bev_iou_matrix(boxes_a, boxes_b):
    return iou_matrix(boxes_a, boxes_b, "bev")


def iou_3d(a, b):
    """Exact IoU of two oriented boxes."""
    return float(iou_matrix([a], [b], "3d")[0, 0])


def bev_iou(a, b):
    """IoU of the ground-plane footprints of two boxes."""
    return float(iou_matrix([a], [b], "bev")[0, 0])


def bev_intersection_area(a, b):
    ca = bev_corners(a.to_array()[None])[0]
    cb = bev_corners(b.to_array()[None])[0]
    return float(_clip_area(ca, cb))


# --- differentiable path ---------------------------------------------------


class _Dual:
    """Scalar with a gradient vector (forward-mode)."""

    __slots__ = ("v", "g")

    def __init__(self, v, g):
        self.v = v
        self.g = g

    def __add__(self, o):
        if isinstance(o, _Dual):
            return _Dual(self.v + o.v, self.g + o.g)
        return _Dual(self.v + o, self.g)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, _Dual):
            return _Dual(self.v - o.v, self.g - o.g)
        return _Dual(self.v - o, self.g)

    def __rsub__(self, o):
        return _Dual(o - self.v, -self.g)

    def __neg__(self):
        return _Dual(-self.v, -self.g)

    def __mul__(self, o):
        if isinstance(o, _Dual):
            return _Dual(self.v * o.v, self.g * o.v + o.g * self.v)
        return _Dual(self.v * o, self.g * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, _Dual):
            return _Dual(self.v / o.v, (self.g * o.v - o.g * self.v) / (o.v * o.v))
        return _Dual(self.v / o, self.g / o)

    def __rtruediv__(self, o):
        return _Dual(o / self.v, -o * self.g / (self.v * self.v))


def _val(a):
    return a.v if isinstance(a, _Dual) else a


def _footprint(x, z, w, l, yaw, trig):
    c, s = trig
    hw, hl = 0.5 * w, 0.5 * l
    pts = []
    for lx, lz in ((-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl)):
        pts.append((lx * c + lz * s + x, -lx * s + lz * c + z))
    return pts


def _clip_generic(subj, clip):
    """Clip polygon area plus the smallest distance from any vertex to a line or edge it could cross."""
    poly = list(subj)
    margin = math.inf
    for e in range(4):
        e0, e1 = clip[e], clip[(e + 1) % 4]
        ex, ez = e1[0] - e0[0], e1[1] - e0[1]
        elen = math.hypot(_val(ex), _val(ez))
        out = []
        n = len(poly)
        for k in range(n):
            p, q = poly[k], poly[(k + 1) % n]
            dp = ex * (p[1] - e0[1]) - ez * (p[0] - e0[0])
            dq = ex * (q[1] - e0[1]) - ez * (q[0] - e0[0])
            margin = min(margin, abs(_val(dp)) / elen)
            if _val(dp) >= 0.0:
                out.append(p)
                if _val(dq) < 0.0:
                    t = dp / (dp - dq)
                    out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
            elif _val(dq) >= 0.0:
                t = dp / (dp - dq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        poly = out
        if len(poly) < 3:
            return 0.0, min(margin, _corner_margin(subj, clip))
    return _poly_area(poly), min(margin, _corner_margin(subj, clip))


def _corner_margin(subj, clip):
    # clip corners crossing subject edges also change the intersection shape
    best = math.inf
    for c in clip:
        cx, cz = _val(c[0]), _val(c[1])
        for k in range(4):
            ax, az = _val(subj[k][0]), _val(subj[k][1])
            bx, bz = _val(subj[(k + 1) % 4][0]), _val(subj[(k + 1) % 4][1])
            dx, dz = bx - ax, bz - az
            t = min(1.0, max(0.0, ((cx - ax) * dx + (cz - az) * dz) / (dx * dx + dz * dz)))
            best = min(best, math.hypot(cx - ax - t * dx, cz - az - t * dz))
    return best


def _poly_area(poly):
    area = 0.0
    n = len(poly)
    for k in range(n):
        area = area + (poly[k][0] * poly[(k + 1) % n][1] - poly[(k + 1) % n][0] * poly[k][1])
    return 0.5 * area


def iou_3d_with_grad(pred, gt, return_margin=False):
    """IoU of two boxes and its gradient w.r.t. the first box's (x, y, z, w, h, l, yaw).

    ``pred`` and ``gt`` are 7-sequences or ``Box3D``. Returns ``(iou, grad)``
    where ``grad`` has shape (7,); the gradient is zero where the boxes do
    not overlap. With ``return_margin`` a third value is returned: the
    distance (m) to the nearest configuration where the intersection
    changes shape, below which the IoU is not smooth.
    """
    if isinstance(pred, Box3D):
        pred = pred.to_array()[:7]
    if isinstance(gt, Box3D):
        gt = gt.to_array()[:7]
    eye = np.eye(7)
    p = [_Dual(float(v), eye[i]) for i, v in enumerate(pred[:7])]
    g = [float(v) for v in gt[:7]]
    px, py, pz, pw, ph, pl, pyaw = p
    yaw_trig = (_Dual(math.cos(pyaw.v), -math.sin(pyaw.v) * pyaw.g),
                _Dual(math.sin(pyaw.v), math.cos(pyaw.v) * pyaw.g))
    fa = _footprint(px, pz, pw, pl, pyaw, yaw_trig)
    fb = _footprint(g[0], g[2], g[3], g[5], g[6], (math.cos(g[6]), math.sin(g[6])))
    area_a, area_b = _poly_area(fa), _poly_area(fb)
    area, margin = _clip_generic(fa, fb)
    a_top, b_top = py - 0.5 * ph, g[1] - 0.5 * g[4]
    a_bot, b_bot = py + 0.5 * ph, g[1] + 0.5 * g[4]
    margin = min(margin, abs(a_top.v - b_top), abs(a_bot.v - b_bot))
    zero = np.zeros(7)

    def result(iou, grad):
        return (iou, grad, margin) if return_margin else (iou, grad)

    if not isinstance(area, _Dual) or area.v <= TOUCH_RTOL * min(area_a.v, area_b):
        return result(0.0, zero)
    top = a_top if a_top.v >= b_top else b_top
    bot = a_bot if a_bot.v <= b_bot else b_bot
    overlap = bot - top
    if _val(overlap) <= 0.0:
        return result(0.0, zero)
    inter = area * overlap
    union = area_a * (a_bot - a_top) + area_b * (b_bot - b_top) - inter
    iou = inter / union
    return result(float(iou.v), np.array(iou.g, dtype=np.float64))
