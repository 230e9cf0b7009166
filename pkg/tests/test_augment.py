import colorsys
import math

import numpy as np
import pytest

from cubify3d.augment import (flip_image, flip_lr, flip_lr_array, hsv_jitter, perturb_center, random_hsv_jitter,
                              rgb_to_hsv)
from cubify3d.config import RoiPriorConfig
from cubify3d.cubify import F_O, encode
from cubify3d.geometry import Box3D
from cubify3d.synthetic import random_boxes

CFG = RoiPriorConfig()


def test_flip_examples():
    b = flip_lr(Box3D(2.0, 1.0, 20.0, 1.6, 1.5, 3.9, 0.0))
    assert b.yaw == pytest.approx(math.pi) and b.x == -2.0
    b = flip_lr(Box3D(4.0, 1.0, 20.0, 1.6, 1.5, 3.9, math.pi / 3))
    assert b.yaw == pytest.approx(2 * math.pi / 3) and b.x == -4.0


def test_flip_involution_and_preservation(rng):
    for row in random_boxes(rng, 200):
        b = Box3D.from_array(row)
        f = flip_lr(b)
        assert (f.y, f.z, f.width, f.height, f.length, f.class_id, f.confidence) == \
            (b.y, b.z, b.width, b.height, b.length, b.class_id, b.confidence)
        ff = flip_lr(f)
        assert ff.x == b.x and ff.yaw == pytest.approx(b.yaw, abs=1e-12)


def test_flip_array_matches_scalar(rng):
    arr = random_boxes(rng, 50)
    np.testing.assert_allclose(flip_lr_array(arr), [flip_lr(Box3D.from_array(r)).to_array() for r in arr])


def test_flip_commutes_with_encode(rng):
    for _ in range(100):
        scene = random_boxes(rng, int(rng.integers(0, 25)))
        a = encode(scene, CFG)
        b = encode(flip_lr_array(scene), CFG)
        swapped = a.tensor[[1, 0, 3, 2]]
        assert np.array_equal(b.mask, a.mask[[1, 0, 3, 2]])
        keep = [i for i in range(8) if i != F_O]
        np.testing.assert_allclose(b.tensor[..., keep], swapped[..., keep], atol=1e-12)
        yaw = swapped[..., F_O] * 2 * math.pi - math.pi
        o = (np.remainder(math.pi - yaw + math.pi, 2 * math.pi)) / (2 * math.pi)
        # pi - yaw lands on the wrap point when yaw == 0; compare on the circle
        d = np.abs(b.tensor[..., F_O] - o)
        d = np.minimum(d, 1 - d)
        assert np.all(d[b.mask] < 1e-9)


def test_flip_image():
    img = np.arange(12).reshape(2, 2, 3)
    np.testing.assert_array_equal(flip_image(img)[:, 0], img[:, 1])


def test_hsv_identity(rng):
    img = rng.random((16, 16, 3))
    np.testing.assert_allclose(hsv_jitter(img, 1.0, 1.0), img, atol=1e-6)


def test_hsv_gray_unchanged():
    img = np.tile(np.linspace(0, 0.6, 10)[:, None, None], (1, 4, 3))
    for s in (0.5, 1.0, 1.5):
        np.testing.assert_allclose(hsv_jitter(img, s, 1.0), img, atol=1e-12)


def test_hsv_matches_colorsys(rng):
    img = rng.random((12, 12, 3))
    out = hsv_jitter(img, 0.5, 1.5)
    for i in range(12):
        for j in range(12):
            h, s, v = colorsys.rgb_to_hsv(*img[i, j])
            ref = colorsys.hsv_to_rgb(h, min(s * 0.5, 1.0), min(v * 1.5, 1.0))
            np.testing.assert_allclose(out[i, j], ref, atol=1e-6)


def test_hsv_preserves_hue(rng):
    img = rng.uniform(0.1, 0.6, (20, 20, 3))
    h0 = rgb_to_hsv(img)[..., 0]
    h1 = rgb_to_hsv(hsv_jitter(img, 0.7, 1.3))[..., 0]
    d = np.abs(h0 - h1)
    assert np.minimum(d, 1 - d).max() < 1e-9


def test_hsv_rejects_bad_factor(rng):
    with pytest.raises(ValueError):
        hsv_jitter(rng.random((2, 2, 3)), 2.0, 1.0)


def test_random_hsv_reproducible():
    img = np.random.default_rng(1).random((4, 4, 3))
    a = random_hsv_jitter(img, np.random.default_rng(7))
    b = random_hsv_jitter(img, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_perturb_center():
    box = Box3D(1.0, 1.0, 30.0, 1.6, 1.5, 3.9)
    a = perturb_center(box, np.random.default_rng(3))
    assert a == perturb_center(box, np.random.default_rng(3))
    rng = np.random.default_rng(11)
    offs = np.array([[p.x - 1.0, p.y - 1.0, p.z - 30.0]
                     for p in (perturb_center(box, rng) for _ in range(100_000))])
    assert np.abs(offs).max() <= 0.2 + 1e-12
    sigma = 0.4 / math.sqrt(12) / math.sqrt(len(offs))
    assert np.all(np.abs(offs.mean(axis=0)) < 3 * sigma)
