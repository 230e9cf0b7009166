import math

import numpy as np
import pytest

from cubify3d.config import KITTI_PRIORS, RoiPriorConfig
from cubify3d.cubify import (CubifyEncoder, cuboid_index, decode, decode_array, decode_slots, encode,
                             normalize_object, quadrant_index, save_tensor, load_tensor, tensor_from_bytes,
                             tensor_from_json, tensor_to_bytes, tensor_to_json)
from cubify3d.exceptions import CorruptTensorFile, OutOfRoi, ShapeMismatch
from cubify3d.geometry import Box3D
from cubify3d.synthetic import random_boxes, random_scene

CFG = RoiPriorConfig()


def car(x=1.0, y=1.0, z=30.0, **kw):
    return Box3D(x, y, z, kw.pop("w", 1.6), kw.pop("h", 1.5), kw.pop("l", 3.9), **kw)


def assert_tensor_invariants(tensor, mask, cfg=CFG):
    assert tensor.min() >= 0 and tensor.max() <= 1
    for q in range(4):
        for j in range(cfg.M):
            occ = mask[q, j]
            n = int(occ.sum())
            assert occ[:n].all() and not occ[n:].any()
            assert not tensor[q, j, n:].any()
            z = decode_slots(tensor, cfg)[q, j, :n, 2]
            assert np.all(np.diff(z) >= 0)


@pytest.mark.parametrize("xyz, q", [((-5, -1, 30), 0), ((0, 0, 30), 3), ((12, 3, 99), 3), ((4, -2, 5), 1), ((-4, 2, 5), 2)])
def test_quadrant_index(xyz, q):
    assert quadrant_index(car(*xyz)) == q


@pytest.mark.parametrize("xyz", [(41, 0, 10), (0, -10.5, 10), (0, 0, 0), (0, 0, 100.01)])
def test_quadrant_out_of_roi(xyz):
    with pytest.raises(OutOfRoi):
        quadrant_index(car(*xyz))


@pytest.mark.parametrize("z, j", [(25, 1), (100, 4), (20, 1), (0.1, 0), (19.999, 0)])
def test_cuboid_index(z, j):
    assert cuboid_index(z, CFG) == j


def test_cuboid_index_rejects():
    with pytest.raises(OutOfRoi):
        cuboid_index(0.0, CFG)


def test_normalize_object_examples():
    assert normalize_object(car(yaw=0.0))[7] == 0.5
    assert normalize_object(car(x=-40.0))[1] == 1.0
    assert normalize_object(car(w=3.01))[4] == pytest.approx(1.0)
    v = normalize_object(car(x=-10, y=5, z=35, yaw=math.pi / 2))
    np.testing.assert_allclose(v, [1, 0.25, 0.5, 0.75, (1.6 - .3) / 2.71, (1.5 - .76) / 3.44, (3.9 - .2) / 35.04, 0.75])


def test_dimensions_clamped_to_priors():
    v = normalize_object(car(w=5.0, h=0.1))
    assert v[4] == 1.0 and v[5] == 0.0


def test_encode_empty():
    t, m, overflow = encode([], CFG)
    assert not t.any() and not m.any() and overflow == 0


def test_encode_overflow_keeps_nearest():
    cars = [car(x=1.0 + 0.1 * i, z=21.0 + i) for i in range(11)]
    fr = encode(cars[::-1], CFG)
    assert fr.overflow == 1
    assert fr.mask.sum() == 10
    zs = decode_slots(fr.tensor, CFG)[3, 1, :, 2]
    np.testing.assert_allclose(zs, [21.0 + i for i in range(10)])


def test_encode_sorts_by_z():
    fr = encode([car(z=35), car(z=22)], CFG)
    z = decode_slots(fr.tensor, CFG)[3, 1, :2, 2]
    np.testing.assert_allclose(z, [22, 35])


def test_encode_counts_skipped():
    fr = encode([car(z=150), car(x=50), car()], CFG)
    assert fr.skipped == 2 and fr.mask.sum() == 1


def test_decode_zero_tensor():
    assert decode(np.zeros(CFG.shape), CFG, 0.5) == []


def test_decode_orientation():
    t = np.zeros(CFG.shape)
    t[3, 0, 0] = [1, 0, 0, 0.5, 0.5, 0.5, 0.5, 0.75]
    (b,) = decode(t, CFG, 0.5)
    assert b.yaw == pytest.approx(math.pi / 2)
    assert b.z == pytest.approx(10.0)


def test_decode_threshold_and_confidence():
    t = np.zeros(CFG.shape)
    t[0, 2, 0] = [0.6, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]
    t[0, 2, 1] = [0.4, 0.5, 0.5, 0.6, 0.5, 0.5, 0.5, 0.5]
    (b,) = decode(t, CFG, 0.5)
    assert b.confidence == pytest.approx(0.6)
    assert b.x == pytest.approx(-20) and b.y == pytest.approx(-5) and b.z == pytest.approx(50)


def test_roundtrip_identity():
    objs = [car(-3.2, 1.1, 12.5, yaw=0.3), car(7.9, -0.4, 64.2, yaw=-2.9, class_id=2),
            car(0.0, 0.0, 100.0, yaw=math.pi), car(-39.9, -9.9, 0.01)]
    fr = encode(objs, CFG)
    out = decode(fr.tensor, CFG, 0.5, fr.class_ids)
    key = lambda b: (b.z, b.x)
    for a, b in zip(sorted(objs, key=key), sorted(out, key=key)):
        np.testing.assert_allclose(a.to_array(), b.to_array(), atol=1e-9, rtol=0)


def test_permutation_invariance(rng):
    for _ in range(50):
        scene = random_scene(rng, 40)
        perm = rng.permutation(len(scene))
        a, b = encode(scene, CFG), encode(scene[perm], CFG)
        assert np.array_equal(a.tensor, b.tensor)
        assert np.array_equal(a.class_ids, b.class_ids)


def test_fuzz_tensor_invariants_and_counts(rng):
    small = RoiPriorConfig(M=3, N=4)
    for _ in range(10_000):
        scene = random_scene(rng, 20, small, out_of_roi_fraction=0.1)
        fr = encode(scene, small)
        assert fr.tensor.min() >= 0 and fr.tensor.max() <= 1
        assert not fr.tensor[~fr.mask].any()
        n_dec = len(decode_array(fr.tensor, small, 0.5))
        assert n_dec + fr.overflow + fr.skipped == len(scene)
    # the full structural check on a subset
    for _ in range(200):
        scene = random_scene(rng, 20, small)
        fr = encode(scene, small)
        assert_tensor_invariants(fr.tensor, fr.mask, small)


def test_binary_roundtrip(tmp_path, rng):
    fr = encode(random_boxes(rng, 30), CFG)
    data = tensor_to_bytes(fr.tensor, fr.class_ids)
    assert data[:4] == b"CUB3"
    assert len(data) == 16 + 4 * 4 * 5 * 10 * 8 + 4 * 4 * 5 * 10
    t, c = tensor_from_bytes(data)
    np.testing.assert_allclose(t, fr.tensor, atol=1e-7)
    assert np.array_equal(c, fr.class_ids)
    save_tensor(tmp_path / "a.cub", fr.tensor)
    t2, c2 = load_tensor(tmp_path / "a.cub")
    assert c2 is None and t2.shape == (4, 5, 10, 8)


def test_binary_layout_is_row_major_little_endian():
    t = np.zeros((4, 1, 1, 8))
    t[2, 0, 0, 3] = 0.5
    data = tensor_to_bytes(t)
    vals = np.frombuffer(data[16:], dtype="<f4")
    assert vals[2 * 8 + 3] == 0.5 and vals.sum() == 0.5


@pytest.mark.parametrize("mutate", [
    lambda d: d[:10],
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:-4],
    lambda d: d[:16] + np.full(160 * 8, 2.0, dtype="<f4").tobytes() + d[16 + 4 * 160 * 8:],
])
def test_corrupt_bytes_rejected(mutate):
    data = tensor_to_bytes(np.zeros((4, 5, 8, 8)))
    with pytest.raises(CorruptTensorFile):
        tensor_from_bytes(mutate(data))


def test_json_mirror(rng):
    fr = encode(random_boxes(rng, 5), CFG)
    t, c = tensor_from_json(tensor_to_json(fr.tensor, fr.class_ids))
    assert np.array_equal(t, fr.tensor) and np.array_equal(c, fr.class_ids)


def test_estimator_fit_transform_inverse(rng):
    frames = [random_boxes(rng, int(rng.integers(0, 8))) for _ in range(20)]
    enc = CubifyEncoder()
    T = enc.fit_transform(frames)
    assert T.shape == (20, 4, 5, 10, 8)
    assert enc.priors_ == KITTI_PRIORS
    out = enc.inverse_transform(T, enc.class_ids_)
    assert [len(o) for o in out] == [len(f) for f in frames]


def test_estimator_fit_priors_from_data(rng):
    frames = [random_boxes(rng, 10) for _ in range(5)]
    enc = CubifyEncoder(priors="fit").fit(frames)
    allb = np.vstack(frames)
    assert enc.priors_.w_min == allb[:, 3].min() and enc.priors_.l_max == allb[:, 5].max()
    assert enc.get_params()["priors"] == "fit"


def test_estimator_validates_tensor_shape():
    enc = CubifyEncoder().fit([])
    with pytest.raises(ShapeMismatch):
        enc.inverse_transform(np.zeros((1, 4, 3, 10, 8)))
