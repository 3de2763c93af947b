import math

import numpy as np
import pytest

from mirrorlink.alignment import (
    CameraIntrinsics,
    DegenerateConfiguration,
    DegenerateGeometry,
    InsufficientCorrespondences,
    compose_frame_chain,
    estimate_similarity,
    icp_register,
    load_intrinsics,
    project,
    read_correspondences,
    read_ply,
    register_camera,
    reprojection_rmse,
    transform_from_dict,
    transform_to_dict,
    write_ply,
)
from mirrorlink.geometry import (
    PoseSE3,
    Quaternion,
    SimilarityTransform,
    apply_similarity,
)


def random_transform(rng, scale_range=(0.5, 2.0)):
    return SimilarityTransform(
        rng.uniform(*scale_range), Quaternion(*rng.normal(size=4)), rng.normal(size=3)
    )


class TestEstimateSimilarity:
    def test_identity_for_equal_clouds(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(12, 3))
        t = estimate_similarity(pts, pts)
        assert abs(t.scale - 1.0) <= 1e-12
        assert t.rotation.angle_to(Quaternion.identity()) <= 1e-12
        assert np.linalg.norm(t.translation) <= 1e-12

    def test_pure_translation(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(8, 3))
        t = estimate_similarity(pts, pts + [1.0, 2.0, 3.0])
        assert abs(t.scale - 1.0) <= 1e-12
        assert np.allclose(t.translation, [1.0, 2.0, 3.0], atol=1e-12)

    def test_random_generator_recovery(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            src = rng.normal(size=(10, 3))
            truth = random_transform(rng)
            est = estimate_similarity(src, apply_similarity(truth, src))
            assert abs(est.scale - truth.scale) <= 1e-9
            assert est.rotation.angle_to(truth.rotation) <= 1e-9
            assert np.linalg.norm(est.translation - truth.translation) <= 1e-9

    def test_without_scale(self):
        rng = np.random.default_rng(3)
        src = rng.normal(size=(10, 3))
        truth = SimilarityTransform(1.0, Quaternion(*rng.normal(size=4)), rng.normal(size=3))
        est = estimate_similarity(src, apply_similarity(truth, src), with_scale=False)
        assert est.scale == 1.0
        assert est.rotation.angle_to(truth.rotation) <= 1e-9

    def test_fixed_scale(self):
        rng = np.random.default_rng(4)
        src = rng.normal(size=(10, 3))
        truth = SimilarityTransform(1.5, Quaternion(*rng.normal(size=4)), rng.normal(size=3))
        est = estimate_similarity(src, apply_similarity(truth, src), fixed_scale=1.5)
        assert est.scale == 1.5
        assert est.rotation.angle_to(truth.rotation) <= 1e-9

    def test_reflection_not_produced(self):
        # near-planar clouds tempt the SVD into a reflection; determinant
        # correction must keep det(R) = +1
        rng = np.random.default_rng(5)
        src = rng.normal(size=(20, 3)) * [1.0, 1.0, 1e-6]
        truth = random_transform(rng)
        est = estimate_similarity(src, apply_similarity(truth, src))
        det = np.linalg.det(est.rotation.to_rotation_matrix())
        assert det == pytest.approx(1.0, abs=1e-9)

    def test_collinear_degenerate(self):
        line = np.outer(np.linspace(0, 1, 5), [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateConfiguration):
            estimate_similarity(line, line)

    def test_too_few_points(self):
        pts = np.zeros((2, 3))
        with pytest.raises(InsufficientCorrespondences):
            estimate_similarity(pts, pts)

    def test_noise_error_shrinks_with_n(self):
        rng = np.random.default_rng(6)
        sigma = 0.01
        errs = []
        for n in (10, 100, 1000):
            trials = []
            for _ in range(20):
                src = rng.normal(size=(n, 3))
                truth = random_transform(rng, scale_range=(1.0, 1.0))
                noisy = apply_similarity(truth, src) + rng.normal(0, sigma, (n, 3))
                est = estimate_similarity(src, noisy)
                trials.append(np.linalg.norm(est.translation - truth.translation))
            errs.append(np.mean(trials))
        assert errs[0] > errs[1] > errs[2]


class TestICP:
    def test_identity_on_equal_clouds(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(-0.5, 0.5, size=(200, 3))
        res = icp_register(pts, pts)
        assert res.rmse <= 1e-12
        assert res.transform.rotation.angle_to(Quaternion.identity()) <= 1e-9

    def test_recovers_small_rigid_motion(self):
        rng = np.random.default_rng(8)
        src = rng.uniform(-0.5, 0.5, size=(500, 3))
        truth = SimilarityTransform(
            1.0, Quaternion.from_axis_angle([0, 0, 1], math.radians(10)), np.array([0.05, 0, 0])
        )
        res = icp_register(src, apply_similarity(truth, src))
        assert res.transform.rotation.angle_to(truth.rotation) <= math.radians(0.5)
        assert np.linalg.norm(res.transform.translation - truth.translation) <= 0.002

    def test_rmse_monotone_over_runs(self):
        rng = np.random.default_rng(9)
        for i in range(50):
            src = rng.uniform(-0.5, 0.5, size=(300, 3))
            truth = SimilarityTransform(
                1.0,
                Quaternion.from_axis_angle(rng.normal(size=3), math.radians(rng.uniform(1, 10))),
                rng.normal(0, 0.02, 3),
            )
            res = icp_register(src, apply_similarity(truth, src))
            hist = res.rmse_history
            assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_idempotent_on_aligned_clouds(self):
        rng = np.random.default_rng(10)
        pts = rng.uniform(-0.5, 0.5, size=(400, 3))
        res = icp_register(pts, pts + rng.normal(0, 1e-9, pts.shape))
        assert abs(res.transform.scale - 1.0) <= 1e-6
        assert res.transform.rotation.angle_to(Quaternion.identity()) <= 1e-6
        assert np.linalg.norm(res.transform.translation) <= 1e-6

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            icp_register(np.zeros((0, 3)), np.zeros((5, 3)))


class TestCamera:
    INTR = CameraIntrinsics(700.0, 700.0, 320.0, 240.0, 640, 480)

    def scene_points(self, rng, n=20):
        return rng.uniform(-1, 1, size=(n, 3)) * [0.5, 0.5, 0.3] + [0.0, 0.0, 1.0]

    def test_unit_projection_sanity(self):
        intr = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
        px = project(intr, PoseSE3.identity(), np.array([[0.0, 0.0, 1.0]]))
        assert np.allclose(px, [[0.0, 0.0]])

    def test_noise_free_recovery(self):
        rng = np.random.default_rng(11)
        pts = self.scene_points(rng)
        truth = PoseSE3(
            np.array([0.05, -0.03, 0.1]), Quaternion.from_axis_angle([0.2, 1, 0.1], 0.3)
        )
        pose, rmse = register_camera(self.INTR, pts, project(self.INTR, truth, pts))
        assert np.linalg.norm(pose.position - truth.position) <= 1e-6
        assert pose.orientation.angle_to(truth.orientation) <= 1e-6
        assert rmse <= 1e-8

    def test_local_minimum(self):
        rng = np.random.default_rng(12)
        pts = self.scene_points(rng)
        truth = PoseSE3(np.array([0.0, 0.0, 0.05]), Quaternion.from_axis_angle([0, 1, 0], 0.2))
        px = project(self.INTR, truth, pts)
        pose, rmse = register_camera(self.INTR, pts, px)
        base = reprojection_rmse(self.INTR, pose, pts, px)
        for k in range(12):
            d = np.zeros(6)
            d[k % 6] = 1e-4 * (1 if k < 6 else -1)
            perturbed = PoseSE3(
                pose.position + d[3:],
                Quaternion.from_axis_angle([1, 0, 0], d[0])
                .multiply(Quaternion.from_axis_angle([0, 1, 0], d[1]))
                .multiply(Quaternion.from_axis_angle([0, 0, 1], d[2]))
                .multiply(pose.orientation),
            )
            assert reprojection_rmse(self.INTR, perturbed, pts, px) >= base

    def test_insufficient_points(self):
        rng = np.random.default_rng(13)
        pts = self.scene_points(rng, n=5)
        with pytest.raises(InsufficientCorrespondences):
            register_camera(self.INTR, pts, np.zeros((5, 2)))

    def test_coplanar_rejected(self):
        rng = np.random.default_rng(14)
        pts = self.scene_points(rng, n=10)
        pts[:, 2] = 1.0
        with pytest.raises(DegenerateGeometry):
            register_camera(self.INTR, pts, np.zeros((10, 2)))

    def test_focal_length_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 1.0, 0.0, 0.0)


class TestComposeFrameChain:
    def test_identity_similarity(self):
        cam = PoseSE3(np.array([1.0, 2.0, 3.0]), Quaternion.from_axis_angle([0, 0, 1], 0.7))
        out = compose_frame_chain(SimilarityTransform.identity(), cam)
        assert np.allclose(out.position, cam.position)
        assert out.orientation.angle_to(cam.orientation) <= 1e-12

    def test_pure_translation(self):
        cam = PoseSE3(np.array([1.0, 0.0, 0.0]), Quaternion.from_axis_angle([1, 0, 0], 0.4))
        sim = SimilarityTransform(1.0, Quaternion.identity(), np.array([0.0, 0.0, 2.0]))
        out = compose_frame_chain(sim, cam)
        assert np.allclose(out.position, [1.0, 0.0, 2.0])
        assert out.orientation.angle_to(cam.orientation) <= 1e-12

    def test_scaled_and_rotated(self):
        rng = np.random.default_rng(15)
        cam = PoseSE3(rng.normal(size=3), Quaternion(*rng.normal(size=4)))
        sim = random_transform(rng)
        out = compose_frame_chain(sim, cam)
        assert np.allclose(out.position, apply_similarity(sim, cam.position))
        expected_q = sim.rotation.multiply(cam.orientation)
        assert out.orientation.angle_to(expected_q) <= 1e-12


class TestFileFormats:
    def test_ply_ascii_round_trip(self, tmp_path):
        rng = np.random.default_rng(16)
        pts = rng.normal(size=(25, 3))
        path = tmp_path / "cloud.ply"
        write_ply(path, pts)
        assert np.allclose(read_ply(path), pts, atol=1e-6)

    def test_ply_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        pts = rng.normal(size=(25, 3)).astype(np.float32)
        path = tmp_path / "cloud_bin.ply"
        write_ply(path, pts, binary=True)
        assert np.allclose(read_ply(path), pts, atol=1e-7)

    def test_ply_rejects_other_files(self, tmp_path):
        path = tmp_path / "not.ply"
        path.write_text("hello")
        with pytest.raises(ValueError):
            read_ply(path)

    def test_correspondence_csv(self, tmp_path):
        path = tmp_path / "corr.csv"
        path.write_text("id,X,Y,Z,u,v\nA,1,2,3,10,20\nB,4,5,6,30,40\n")
        pts, px, ids = read_correspondences(path)
        assert pts.shape == (2, 3) and px.shape == (2, 2)
        assert ids == ["A", "B"]
        assert px[1].tolist() == [30.0, 40.0]

    def test_intrinsics_json(self, tmp_path):
        path = tmp_path / "intr.json"
        path.write_text('{"fx": 500, "fy": 510, "cx": 320, "cy": 240, "distortion": [0.1]}')
        intr = load_intrinsics(path)
        assert intr.fx == 500 and intr.fy == 510

    def test_transform_dict_round_trip(self):
        rng = np.random.default_rng(18)
        t = random_transform(rng)
        again = transform_from_dict(transform_to_dict(t))
        assert abs(again.scale - t.scale) <= 1e-12
        assert again.rotation.angle_to(t.rotation) <= 1e-12
        assert np.allclose(again.translation, t.translation)
