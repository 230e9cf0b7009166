"""Augmentations: horizontal flip, HSV saturation/value jitter, center noise.

Randomness always comes from an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import math

import numpy as np

from .geometry import X, YAW, Box3D, boxes_to_array, wrap_angle, wrap_angles

HSV_FACTOR_RANGE = (0.5, 1.5)
CENTER_NOISE = 0.2


def flip_lr(box):
    """Mirror a box for a left-right flipped image: x -> -x, yaw -> pi - yaw."""
    return box.replace(x=-box.x, yaw=wrap_angle(math.pi - box.yaw))


def flip_lr_array(arr):
    arr = boxes_to_array(arr)
    arr[:, X] = -arr[:, X]
    arr[:, YAW] = wrap_angles(math.pi - arr[:, YAW])
    return arr


def flip_image(image):
    return np.ascontiguousarray(np.asarray(image)[:, ::-1])


def rgb_to_hsv(rgb):
    """Vectorized RGB -> HSV for arrays with a trailing channel axis, all in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    v = maxc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, delta / maxc, 0.0)
        rc = (maxc - r) / delta
        gc = (maxc - g) / delta
        bc = (maxc - b) / delta
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv):
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [np.stack(c, axis=-1) for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))]
    out = np.choose(i[..., None], choices)
    return np.where((s == 0)[..., None], v[..., None], out)


def hsv_jitter(image, s_factor, v_factor):
    """Scale saturation and value of an RGB image in [0, 1]; hue is untouched."""
    lo, hi = HSV_FACTOR_RANGE
    if not (lo <= s_factor <= hi and lo <= v_factor <= hi):
        raise ValueError(f"HSV factors must lie in [{lo}, {hi}]")
    hsv = rgb_to_hsv(image)
    hsv[..., 1] = np.clip(hsv[..., 1] * s_factor, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * v_factor, 0.0, 1.0)
    return hsv_to_rgb(hsv)


def random_hsv_jitter(image, rng):
    s_factor, v_factor = rng.uniform(*HSV_FACTOR_RANGE, size=2)
    return hsv_jitter(image, s_factor, v_factor)


def perturb_center(box, rng, max_offset=CENTER_NOISE):
    """Add independent uniform noise in [-max_offset, max_offset] m to x, y and z."""
    dx, dy, dz = rng.uniform(-max_offset, max_offset, size=3)
    return box.replace(x=box.x + dx, y=box.y + dy, z=box.z + dz)
