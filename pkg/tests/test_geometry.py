import math

import numpy as np
import pytest

from mirrorlink.geometry import (
    PoseSE3,
    Quaternion,
    SimilarityTransform,
    apply_similarity,
    compose,
    inverse,
    pose_delta,
)


def rot_z(angle):
    return Quaternion.from_axis_angle([0, 0, 1], angle)


class TestQuaternion:
    def test_constructor_normalizes(self):
        q = Quaternion(2.0, 0.0, 0.0, 0.0)
        assert abs(math.sqrt(q.w**2 + q.x**2 + q.y**2 + q.z**2) - 1.0) <= 1e-9

    def test_canonical_sign(self):
        q = Quaternion(-0.5, 0.5, 0.5, 0.5)
        assert q.w >= 0
        # negating all components is the same rotation and same representation
        assert q == Quaternion(0.5, -0.5, -0.5, -0.5)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            Quaternion(0.0, 0.0, 0.0, 0.0)

    def test_rotate_matches_matrix(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            q = Quaternion(*rng.normal(size=4))
            v = rng.normal(size=3)
            assert np.allclose(q.rotate(v), q.to_rotation_matrix() @ v, atol=1e-12)

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            q = Quaternion(*rng.normal(size=4))
            r = Quaternion.from_rotation_matrix(q.to_rotation_matrix())
            assert q.angle_to(r) < 1e-9

    def test_normalization_preserved_under_many_compositions(self):
        # drift < 1e-6 over a long composition chain
        rng = np.random.default_rng(3)
        q = Quaternion.identity()
        steps = [Quaternion(*rng.normal(size=4)) for _ in range(1000)]
        for _ in range(1000):
            for s in steps:
                q = q.multiply(s)
        n = math.sqrt(q.w**2 + q.x**2 + q.y**2 + q.z**2)
        assert abs(n - 1.0) < 1e-6


class TestPose:
    def test_compose_identity(self):
        rng = np.random.default_rng(4)
        p = PoseSE3(rng.normal(size=3), Quaternion(*rng.normal(size=4)))
        out = compose(PoseSE3.identity(), p)
        assert np.allclose(out.position, p.position)
        assert out.orientation.angle_to(p.orientation) < 1e-12

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p = PoseSE3(rng.normal(size=3), Quaternion(*rng.normal(size=4)))
            ident = compose(p, inverse(p))
            assert np.linalg.norm(ident.position) <= 1e-9
            assert ident.orientation.angle_to(Quaternion.identity()) <= 1e-9

    def test_compose_translation_then_rotation(self):
        # a = translate(1,0,0), b = rotZ(90 deg): point (1,0,0) -> (1,1,0)
        a = PoseSE3.from_translation(1.0, 0.0, 0.0)
        b = PoseSE3(np.zeros(3), rot_z(math.pi / 2))
        ab = compose(a, b)
        assert np.allclose(ab.apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)

    def test_compose_associative(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            ps = [PoseSE3(rng.normal(size=3), Quaternion(*rng.normal(size=4))) for _ in range(3)]
            left = compose(compose(ps[0], ps[1]), ps[2])
            right = compose(ps[0], compose(ps[1], ps[2]))
            lin, ang = pose_delta(left, right)
            assert lin <= 1e-9 and ang <= 1e-9


class TestPoseDelta:
    def test_zero_for_same_pose(self):
        p = PoseSE3(np.array([0.1, 0.2, 0.3]), rot_z(0.5))
        assert pose_delta(p, p) == (0.0, 0.0)

    def test_pure_translation(self):
        a = PoseSE3.identity()
        b = PoseSE3.from_translation(0.3, 0.0, 0.0)
        lin, ang = pose_delta(a, b)
        assert lin == pytest.approx(0.3)
        assert ang == 0.0

    def test_rotation_angle(self):
        # rotZ(60 deg) vs rotZ(-60 deg): 120 deg apart = 2.0944 rad
        a = PoseSE3(np.zeros(3), rot_z(math.pi / 3))
        b = PoseSE3(np.zeros(3), rot_z(-math.pi / 3))
        lin, ang = pose_delta(a, b)
        assert lin == 0.0
        assert ang == pytest.approx(2.0944, abs=1e-4)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = PoseSE3(rng.normal(size=3), Quaternion(*rng.normal(size=4)))
            b = PoseSE3(rng.normal(size=3), Quaternion(*rng.normal(size=4)))
            assert pose_delta(a, b) == pose_delta(b, a)


class TestSimilarity:
    def test_identity(self):
        p = np.array([1.0, 2.0, 3.0])
        assert np.allclose(apply_similarity(SimilarityTransform.identity(), p), p)

    def test_axis_aligned(self):
        t = SimilarityTransform(2.0, Quaternion.identity(), np.array([0.0, 0.0, 1.0]))
        assert np.allclose(apply_similarity(t, [1.0, 0.0, 0.0]), [2.0, 0.0, 1.0])

    def test_rotation_case(self):
        t = SimilarityTransform(1.0, rot_z(math.pi / 2), np.array([1.0, 0.0, 0.0]))
        assert np.allclose(apply_similarity(t, [1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            SimilarityTransform(0.0, Quaternion.identity(), np.zeros(3))
        with pytest.raises(ValueError):
            SimilarityTransform(-1.0, Quaternion.identity(), np.zeros(3))

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            t = SimilarityTransform(
                rng.uniform(0.2, 5.0), Quaternion(*rng.normal(size=4)), rng.normal(size=3)
            )
            p = rng.normal(size=3)
            back = apply_similarity(t.inverse(), apply_similarity(t, p))
            assert np.linalg.norm(back - p) <= 1e-9

    def test_batch_matches_single(self):
        rng = np.random.default_rng(9)
        t = SimilarityTransform(1.7, Quaternion(*rng.normal(size=4)), rng.normal(size=3))
        pts = rng.normal(size=(50, 3))
        batch = apply_similarity(t, pts)
        for i in range(50):
            assert np.allclose(batch[i], apply_similarity(t, pts[i]))
