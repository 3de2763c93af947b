import math

import numpy as np
import pytest

from mirrorlink.filtering import (
    ArmCascade,
    ClutchDisengagedError,
    ClutchState,
    FilterConfig,
    StageOutcome,
    STAGE_IK,
    STAGE_JUMP,
    STAGE_POSE,
    clutch_transform,
    cross_frame_pose_filter,
    encode_filter_outcome,
    ik_jump_filter,
)
from mirrorlink.geometry import PoseSE3, Quaternion, compose, pose_delta
from mirrorlink.kinematics import neutral_pose


def rot_z(a):
    return Quaternion.from_axis_angle([0, 0, 1], a)


class TestClutchTransform:
    def test_no_motion_returns_robot_anchor(self):
        anchor = PoseSE3.from_translation(0.5, 0.1, 0.2)
        robot = PoseSE3.from_translation(0.0, 0.3, 0.1)
        clutch = ClutchState(True, anchor, robot)
        target = clutch_transform(clutch, anchor)
        lin, ang = pose_delta(target, robot)
        assert lin <= 1e-12 and ang <= 1e-12

    def test_relative_translation_passes_through(self):
        anchor = PoseSE3.from_translation(1.0, 2.0, 3.0)
        robot = PoseSE3.from_translation(0.0, 0.3, 0.1)
        clutch = ClutchState(True, anchor, robot)
        moved = PoseSE3.from_translation(1.1, 2.0, 3.0)
        target = clutch_transform(clutch, moved)
        assert np.allclose(target.position, robot.position + [0.1, 0.0, 0.0], atol=1e-12)

    def test_rotated_anchor_maps_motion_through_anchor_frame(self):
        anchor = PoseSE3(np.zeros(3), rot_z(math.pi / 2))
        robot = PoseSE3.from_translation(0.0, 0.3, 0.1)
        clutch = ClutchState(True, anchor, robot)
        moved = PoseSE3(np.array([0.1, 0.0, 0.0]), rot_z(math.pi / 2))
        target = clutch_transform(clutch, moved)
        # delta in anchor frame is (0,-0.1,0); robot anchor is unrotated
        expected = compose(robot, PoseSE3.from_translation(0.0, -0.1, 0.0))
        assert np.allclose(target.position, expected.position, atol=1e-12)

    def test_disengaged_raises(self):
        with pytest.raises(ClutchDisengagedError):
            clutch_transform(ClutchState(False), PoseSE3.identity())


class TestCrossFramePoseFilter:
    CFG = FilterConfig(ee_linear_max=0.10, ee_angular_max=0.15)

    def test_identical_pose_passes(self):
        p = PoseSE3.from_translation(0.1, 0.2, 0.3)
        accepted, outcome = cross_frame_pose_filter(p, p, self.CFG)
        assert outcome is StageOutcome.PASSED

    def test_linear_jump_rejected(self):
        prev = PoseSE3.identity()
        proposed = PoseSE3.from_translation(0.30, 0.0, 0.0)
        accepted, outcome = cross_frame_pose_filter(prev, proposed, self.CFG)
        assert outcome is StageOutcome.REJECTED
        assert np.allclose(accepted.position, prev.position)

    def test_angular_component_alone_rejects(self):
        prev = PoseSE3.identity()
        proposed = PoseSE3(np.array([0.05, 0.0, 0.0]), rot_z(0.2))
        accepted, outcome = cross_frame_pose_filter(prev, proposed, self.CFG)
        assert outcome is StageOutcome.REJECTED


class TestIkJumpFilter:
    CFG = FilterConfig(joint_jump_max=0.2)

    def test_identical_passes(self):
        q = np.linspace(0, 1, 7)
        accepted, outcome = ik_jump_filter(q, q, self.CFG)
        assert outcome is StageOutcome.PASSED

    def test_large_jump_rejected(self):
        q = np.zeros(7)
        q_new = q.copy()
        q_new[3] = 0.5
        accepted, outcome = ik_jump_filter(q, q_new, self.CFG)
        assert outcome is StageOutcome.REJECTED
        assert np.array_equal(accepted, q)

    def test_inf_norm_just_below_threshold_passes(self):
        q = np.zeros(7)
        q_new = np.full(7, 0.19)
        accepted, outcome = ik_jump_filter(q, q_new, self.CFG)
        assert outcome is StageOutcome.PASSED
        assert np.array_equal(accepted, q_new)

    def test_clamp_mode_limits_step(self):
        cfg = FilterConfig(joint_jump_max=0.2, clamp_mode=True)
        q = np.zeros(7)
        q_new = np.full(7, 0.5)
        accepted, outcome = ik_jump_filter(q, q_new, cfg)
        assert outcome is StageOutcome.CLAMPED
        assert np.allclose(accepted, 0.2)


class TestConfigValidation:
    @pytest.mark.parametrize("field", ["joint_jump_max", "ee_linear_max", "ee_angular_max"])
    def test_nonpositive_rejected(self, field):
        with pytest.raises(ValueError):
            FilterConfig(**{field: 0.0})

    def test_round_trips_through_dict(self):
        cfg = FilterConfig(joint_jump_max=0.2, ee_linear_max=0.07, clamp_mode=True)
        again = FilterConfig.from_dict(cfg.to_dict())
        assert again == cfg


class TestCascade:
    def _cascade(self, model, side="right", cfg=None):
        chain = model.chain(side)
        return ArmCascade(chain, cfg or FilterConfig(), neutral_pose(chain))

    def test_stationary_controller_holds(self, model):
        cascade = self._cascade(model)
        controller = PoseSE3.from_translation(0.0, 0.0, 1.2)
        first = cascade.step(controller, clutch_engaged=True)
        assert first.accepted
        before = cascade.joints.copy()
        report = cascade.step(controller, clutch_engaged=True)
        assert all(o is StageOutcome.PASSED for o in report.stages.values())
        assert np.allclose(report.joints, before)

    def test_teleport_rejected_at_pose_stage_before_ik(self, model):
        cascade = self._cascade(model)
        controller = PoseSE3.identity()
        cascade.step(controller, clutch_engaged=True)
        teleported = PoseSE3.from_translation(1.0, 0.0, 0.0)
        report = cascade.step(teleported, clutch_engaged=True)
        assert report.stages[STAGE_POSE] is StageOutcome.REJECTED
        assert report.stages[STAGE_IK] is StageOutcome.NOT_EVALUATED
        assert report.stages[STAGE_JUMP] is StageOutcome.NOT_EVALUATED
        assert not report.accepted

    def test_unreachable_target_rejected_at_ik_stage(self, model):
        # generous pose limits so the unreachable target survives stage 2
        cfg = FilterConfig(ee_linear_max=10.0, ee_angular_max=10.0)
        cascade = self._cascade(model, cfg=cfg)
        controller = PoseSE3.identity()
        cascade.step(controller, clutch_engaged=True)
        report = cascade.step(PoseSE3.from_translation(1.4, 0.0, 0.0), clutch_engaged=True)
        assert report.stages[STAGE_POSE] is StageOutcome.PASSED
        assert report.stages[STAGE_IK] is StageOutcome.REJECTED
        assert report.stages[STAGE_JUMP] is StageOutcome.NOT_EVALUATED

    def test_clutch_reengage_has_zero_jump(self, model):
        cascade = self._cascade(model)
        cascade.step(PoseSE3.identity(), clutch_engaged=True)
        # drag the arm somewhere
        for i in range(40):
            cascade.step(PoseSE3.from_translation(0.001 * i, 0.0, 0.0), True)
        ee_before = cascade.ee_pose
        # disengage, wander wildly, re-engage
        cascade.step(PoseSE3.from_translation(5.0, 5.0, 5.0), False)
        assert pose_delta(cascade.ee_pose, ee_before)[0] <= 1e-12
        report = cascade.step(PoseSE3.from_translation(-3.0, 2.0, 1.0), True)
        lin, ang = pose_delta(report.target, ee_before)
        assert lin <= 1e-9 and ang <= 1e-9
        assert report.accepted

    def test_disengaged_stream_holds_command(self, model):
        cascade = self._cascade(model)
        before = cascade.joints.copy()
        rng = np.random.default_rng(0)
        for _ in range(50):
            report = cascade.step(
                PoseSE3(rng.normal(size=3), Quaternion(*rng.normal(size=4))), False
            )
            assert np.array_equal(report.joints, before)

    def test_fuzz_never_violates_jump_bound(self, model):
        cfg = FilterConfig()
        cascade = self._cascade(model, cfg=cfg)
        rng = np.random.default_rng(42)
        prev = cascade.joints.copy()
        controller = PoseSE3.identity()
        cascade.step(controller, True)
        prev = cascade.joints.copy()
        for i in range(2000):
            if rng.random() < 0.3:
                controller = PoseSE3(rng.normal(scale=0.5, size=3), Quaternion(*rng.normal(size=4)))
            else:
                controller = compose(
                    controller, PoseSE3(rng.normal(scale=0.01, size=3), Quaternion.identity())
                )
            report = cascade.step(controller, clutch_engaged=rng.random() < 0.9)
            jump = np.max(np.abs(report.joints - prev))
            assert jump <= cfg.joint_jump_max + 1e-12
            prev = report.joints

    def test_short_circuit_determinism(self, model):
        rng_poses = []
        rng = np.random.default_rng(9)
        for _ in range(200):
            rng_poses.append(
                (PoseSE3(rng.normal(scale=0.2, size=3), Quaternion(*rng.normal(size=4))), rng.random() < 0.8)
            )
        runs = []
        for _ in range(2):
            cascade = self._cascade(model)
            outcomes = []
            for pose, engaged in rng_poses:
                report = cascade.step(pose, engaged)
                outcomes.append((tuple(report.stages.values()), report.joints.tobytes()))
            runs.append(outcomes)
        assert runs[0] == runs[1]

    def test_outcome_byte_encoding(self, model):
        cascade = self._cascade(model)
        cascade.step(PoseSE3.identity(), True)
        ok = cascade.step(PoseSE3.identity(), True)
        bad = cascade.step(PoseSE3.from_translation(1.0, 0.0, 0.0), True)
        assert encode_filter_outcome(ok, ok) == 0
        assert encode_filter_outcome(bad, ok) == 2  # stage 2 rejected, left nibble
        assert encode_filter_outcome(ok, bad) == 2 << 4
