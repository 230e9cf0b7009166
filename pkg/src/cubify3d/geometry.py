"""Oriented 3D boxes in the camera frame.

Camera frame: x right, y down, z forward. A box's length runs along its
local z axis (heading), width along local x and height along y. Positive
yaw turns the local +z axis toward +x, i.e. the rotation applied to local
coordinates is::

    R(yaw) = [[ cos, 0, sin],
              [   0, 1,   0],
              [-sin, 0, cos]]

Batched code works on ``(n, 9)`` float arrays whose columns are listed in
``BOX_FIELDS``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import BehindCamera

BOX_FIELDS = ("x", "y", "z", "width", "height", "length", "yaw", "class_id", "confidence")
X, Y, Z, W, H, L, YAW, CLS, CONF = range(9)

TAU = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle into (-pi, pi]. Values already in range are returned unchanged."""
    a = float(a)
    if -math.pi < a <= math.pi:
        return a
    r = math.remainder(a, TAU)
    return math.pi if r <= -math.pi else r


def wrap_angles(a):
    """Vectorized :func:`wrap_angle`."""
    a = np.array(a, dtype=np.float64, copy=True)
    bad = ~((a > -math.pi) & (a <= math.pi))
    if bad.any():
        a[bad] = [wrap_angle(v) for v in a[bad]]
    return a


@dataclass(frozen=True)
class Box3D:
    """One oriented 3D object in camera coordinates.

    ``(x, y, z)`` is the geometric center of the box (not the KITTI
    bottom-center). Yaw is wrapped into (-pi, pi] on construction and by
    :meth:`replace`.
    """

    x: float
    y: float
    z: float
    width: float
    height: float
    length: float
    yaw: float = 0.0
    class_id: int = 0
    confidence: float = 1.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.width, self.height, self.length, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box field in {vals}")
        if not (self.width > 0 and self.height > 0 and self.length > 0):
            raise ValueError(f"box dimensions must be positive, got "
                             f"w={self.width} h={self.height} l={self.length}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))

    @property
    def center(self):
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self):
        return self.width * self.height * self.length

    def replace(self, **changes):
        return replace(self, **changes)

    def to_array(self):
        return np.array([self.x, self.y, self.z, self.width, self.height, self.length,
                         self.yaw, self.class_id, self.confidence], dtype=np.float64)

    @classmethod
    def from_array(cls, row):
        row = np.asarray(row, dtype=np.float64)
        return cls(*(float(v) for v in row[:7]), class_id=int(row[CLS]), confidence=float(row[CONF]))


def boxes_to_array(boxes):
    """Stack boxes into an ``(n, 9)`` array; arrays pass through (copied to float64)."""
    if isinstance(boxes, np.ndarray):
        arr = np.array(boxes, dtype=np.float64, copy=True)
        return arr.reshape(0, 9) if arr.size == 0 else arr
    rows = [b.to_array() for b in boxes]
    if not rows:
        return np.zeros((0, 9))
    return np.vstack(rows)


def array_to_boxes(arr):
    return [Box3D.from_array(r) for r in np.asarray(arr)]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: float
    image_height: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.image_width and 0 <= self.cy <= self.image_height):
            raise ValueError("principal point outside the image")


@dataclass(frozen=True)
class Rect2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted rectangle {self}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class BevPolygon:
    """Ground-plane footprint; ``vertices`` is a (4, 2) array of (x, z), counter-clockwise."""

    vertices: np.ndarray

    @property
    def area(self):
        return polygon_area(self.vertices)


def polygon_area(vertices):
    """Signed shoelace area; positive for counter-clockwise (x, z) vertex order."""
    v = np.asarray(vertices, dtype=np.float64)
    x, z = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(z, -1)) - np.dot(np.roll(x, -1), z))


def rotation_y(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Unit corner signs (local x, y, z). Rows 0-3: bottom face (y = +h/2),
# rows 4-7: top face; each face goes front-left, front-right, back-right,
# back-left when viewed with +z as front and +x as right.
_CORNER_SIGNS = np.array([
    [-1, 1, 1], [1, 1, 1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, -1, -1], [-1, -1, -1],
], dtype=np.float64)


def corners(box):
    """The 8 corners of ``box`` as an (8, 3) array, in the fixed order of ``_CORNER_SIGNS``."""
    half = 0.5 * np.array([box.width, box.height, box.length])
    local = _CORNER_SIGNS * half
    return local @ rotation_y(box.yaw).T + box.center


def bev_corners(arr):
    """Footprints of an ``(n, 9)`` box array as an (n, 4, 2) array of CCW (x, z) vertices."""
    arr = np.asarray(arr, dtype=np.float64)
    hw, hl = 0.5 * arr[:, W], 0.5 * arr[:, L]
    lx = np.stack([-hw, hw, hw, -hw], axis=1)
    lz = np.stack([-hl, -hl, hl, hl], axis=1)
    c, s = np.cos(arr[:, YAW])[:, None], np.sin(arr[:, YAW])[:, None]
    px = lx * c + lz * s + arr[:, X, None]
    pz = -lx * s + lz * c + arr[:, Z, None]
    return np.stack([px, pz], axis=2)


def bev_footprint(box):
    return BevPolygon(bev_corners(box.to_array()[None])[0])


def project_points(points, cam):
    """Pinhole projection of (n, 3) camera-frame points to (n, 2) pixels."""
    p = np.asarray(points, dtype=np.float64)
    return np.stack([cam.fx * p[:, 0] / p[:, 2] + cam.cx,
                     cam.fy * p[:, 1] / p[:, 2] + cam.cy], axis=1)


def project_to_image(box, cam):
    """Axis-aligned hull of the projected corners, clipped to the image.

    Raises:
        BehindCamera: if any corner has z <= 0.
    """
    pts = corners(box)
    if np.any(pts[:, 2] <= 0):
        raise BehindCamera(f"box at z={box.z:.3f} has corners at or behind the camera")
    uv = project_points(pts, cam)
    u0, v0 = np.clip(uv.min(axis=0), 0, [cam.image_width, cam.image_height])
    u1, v1 = np.clip(uv.max(axis=0), 0, [cam.image_width, cam.image_height])
    return Rect2D(float(u0), float(v0), float(u1), float(v1))


def crop_spec(box, cam, priors):
    """Classifier inputs for a detection: its image crop rectangle and prior-normalized (w, h, l).

    Resampling the crop to the classifier's input size is left to the caller.
    """
    rect = project_to_image(box, cam)
    return rect, priors.normalize([box.width, box.height, box.length])
