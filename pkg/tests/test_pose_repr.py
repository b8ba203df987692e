import numpy as np
import pytest

from lmmpose.errors import DomainError, ValidationError
from lmmpose.geom import Intrinsics, Pose9D, ScaleAgnosticPose, project, random_rotation
from lmmpose.pose_repr import (
    DetectionBox,
    SizeCodebook,
    TranslationParams,
    compute_codebook,
    decode_size,
    decode_translation,
    denormalize_pose,
    encode_size,
    encode_translation,
    normalize_pose,
)
from lmmpose.synth import PoseRanges, gen_scene, gen_shape


def random_pose(rng):
    return Pose9D(random_rotation(rng), rng.uniform(-1, 1, 3), rng.uniform(0.01, 2, 3))


def test_normalize_hand_example():
    sap, d = normalize_pose(Pose9D(np.eye(3), [3, 6, 9], [1, 2, 2]))
    assert d == pytest.approx(3)
    assert np.allclose(sap.s_norm, [1 / 3, 2 / 3, 2 / 3])
    assert np.allclose(sap.t_norm, [1, 2, 3])
    back = denormalize_pose(sap, 3.0)
    assert np.allclose(back.size, [1, 2, 2]) and np.allclose(back.translation, [3, 6, 9])


@pytest.mark.parametrize("a", [1e-3, 0.5, 7.0])
def test_isotropic_size(a):
    sap, _ = normalize_pose(Pose9D(np.eye(3), np.zeros(3), [a, a, a]))
    assert np.allclose(sap.s_norm, np.ones(3) / np.sqrt(3))


def test_denormalize_identity_at_unit_d(rng):
    sap, _ = normalize_pose(random_pose(rng))
    p = denormalize_pose(sap, 1.0)
    assert np.array_equal(p.size, sap.s_norm) and np.array_equal(p.translation, sap.t_norm)
    with pytest.raises(DomainError):
        denormalize_pose(sap, 0.0)


def test_normalize_round_trip_and_unit_norm(rng):
    for _ in range(1000):
        p = random_pose(rng)
        sap, d = normalize_pose(p)
        assert abs(np.linalg.norm(sap.s_norm) - 1) < 1e-12
        q = denormalize_pose(sap, d)
        assert np.allclose(q.size, p.size, rtol=0, atol=1e-12)
        assert np.allclose(q.translation, p.translation, rtol=0, atol=1e-12)


def test_normalize_scale_invariance(rng):
    for _ in range(100):
        p = random_pose(rng)
        k = 2.0 ** rng.integers(-5, 6)  # power of two keeps the division exact
        a, _ = normalize_pose(p)
        b, _ = normalize_pose(Pose9D(p.rotation, k * p.translation, k * p.size))
        assert np.array_equal(a.t_norm, b.t_norm) and np.array_equal(a.s_norm, b.s_norm)


def test_encode_translation_examples():
    box = DetectionBox(100, 80, 50, 40, 256)
    assert np.allclose(encode_translation([100, 80], 0.0, box).as_array(), 0)
    unit = DetectionBox(10, 20, 30, 30, 30)
    assert np.allclose(encode_translation([40, 20], 2.0, unit).as_array(), [1, 0, 2])
    p = encode_translation([110, 70], 3.0, box)
    assert np.allclose(p.as_array(), [0.2, -0.25, 3 * 50 / 256])


def test_decode_translation_round_trip_hand_example(K):
    box = DetectionBox(100, 80, 50, 40, 256)
    t = decode_translation(encode_translation([110, 70], 3.0, box), box, K)
    assert np.allclose(project(K, t), [110, 70], atol=1e-12)
    assert t[2] == pytest.approx(3.0, abs=1e-12)


def test_decode_translation_principal_ray(K):
    box = DetectionBox(K.cx, K.cy, 40, 60, 256)
    t = decode_translation(TranslationParams(0, 0, 0.5), box, K)
    assert np.allclose(t, [0, 0, 0.5 * 256 / 60])


def test_decode_translation_rejects_nonpositive_depth(K):
    with pytest.raises(DomainError):
        decode_translation(TranslationParams(0, 0, -0.1), DetectionBox(0, 0, 1, 1, 1), K)


def test_translation_full_chain(K, rng):
    for _ in range(10_000 // 10):
        t = np.array([*rng.uniform(-1, 1, 2), rng.uniform(1, 10)])
        o = project(K, t)
        box = DetectionBox(*(o + rng.uniform(-20, 20, 2)), *rng.uniform(10, 200, 2), 256)
        assert np.max(np.abs(decode_translation(encode_translation(o, t[2], box), box, K) - t)) < 1e-9


def test_decode_translation_invariant_to_crop_rescaling(K, rng):
    for _ in range(200):
        t = np.array([*rng.uniform(-1, 1, 2), rng.uniform(1, 10)])
        o = project(K, t)
        box = DetectionBox(*(o + rng.uniform(-20, 20, 2)), *rng.uniform(10, 200, 2), 256)
        params = encode_translation(o, t[2], box)
        k = rng.uniform(0.3, 3)
        # the re-detection scales box size and offset; encoded deltas shift the depth term
        scaled = DetectionBox(box.c_x, box.c_y, k * box.w_box, k * box.h_box, box.s_in)
        off = (o - [box.c_x, box.c_y])
        p2 = TranslationParams(off[0] / scaled.w_box * k, off[1] / scaled.h_box * k, params.dz * k)
        # same object point, same depth: decoding with scaled box but rescaled deltas
        o2 = np.array([scaled.c_x, scaled.c_y]) + np.array([p2.dx * scaled.w_box, p2.dy * scaled.h_box]) / k
        assert np.allclose(o2, o, atol=1e-9)
        t2 = decode_translation(encode_translation(o, t[2], scaled), scaled, K)
        assert np.max(np.abs(t2 - t)) < 1e-9


def test_size_codec():
    # third components are the unit-norm completions (0.7416..., 0.7681...)
    cb = SizeCodebook({"mug": [0.3, 0.6, np.sqrt(0.55)]})
    s = np.array([0.4, 0.5, np.sqrt(0.59)])
    assert np.allclose(encode_size(s, "mug", cb), [0.1, -0.1, 0.026], atol=1e-3)
    assert np.allclose(encode_size(cb["mug"], "mug", cb), 0)
    assert np.allclose(decode_size(encode_size(s, "mug", cb), "mug", cb), s, atol=1e-15)
    with pytest.raises(KeyError, match="laptop"):
        encode_size(s, "laptop", cb)


def test_codebook_validation():
    with pytest.raises(ValidationError):
        SizeCodebook({"x": [1, 1, 1]})
    with pytest.raises(ValidationError):
        SizeCodebook({"x": [0.5, -0.1, 0.5]})


def _scenes(K, shapes, n, seed):
    return [gen_scene(shapes, len(shapes), PoseRanges(), K, (640, 480), [seed, i]) for i in range(n)]


def test_compute_codebook_single_instance(K):
    shape = gen_shape("box", "box", 60, 0, extents=(1, 2, 2))
    cb = compute_codebook(_scenes(K, [shape], 1, 0))
    assert np.allclose(cb["box"], [1 / 3, 2 / 3, 2 / 3], atol=1e-12)


def test_compute_codebook_mean_matches_independent_oracle(K, rng):
    shapes = [gen_shape("box", "box", 40, i, extents=tuple(rng.uniform(0.5, 2, 3))) for i in range(100)]
    scenes = [gen_scene([s], 1, PoseRanges(), K, (640, 480), i) for i, s in enumerate(shapes)]
    expected = np.mean([s.s_norm for s in shapes], axis=0)
    assert np.max(np.abs(compute_codebook(scenes)["box"] - expected)) < 1e-12


def test_compute_codebook_two_mirrored_instances(K):
    a = gen_shape("box", "box", 60, 0, extents=(1, 2, 3))
    b = gen_shape("box", "box", 60, 1, extents=(3, 2, 1))
    cb = compute_codebook([gen_scene([a, b], 2, PoseRanges(), K, (640, 480), 0)])
    assert np.allclose(cb["box"], (a.s_norm + b.s_norm) / 2, atol=1e-12)
    assert cb["box"][0] == pytest.approx(cb["box"][2])


def test_compute_codebook_missing_category(K):
    scenes = _scenes(K, [gen_shape("box", "box", 40, 0)], 1, 0)
    with pytest.raises(ValueError, match="bowl"):
        compute_codebook(scenes, categories=["box", "bowl"])
