"""Four-stage filter cascade between raw teleop poses and joint commands.

Stage order: clutch mapping, cross-frame pose threshold, IK convergence
check, joint jump limit. The first rejecting stage short-circuits the rest
and the last accepted command is held (or optionally clamped toward the
proposal when `clamp_mode` is set).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseSE3, compose, inverse, pose_delta
from .kinematics import IKConfig, KinematicChain, forward_kinematics, solve_ik


class StageOutcome(enum.Enum):
    PASSED = "passed"
    REJECTED = "rejected"
    CLAMPED = "clamped"
    NOT_EVALUATED = "not_evaluated"


STAGE_CLUTCH = "clutch"
STAGE_POSE = "cross_frame_pose"
STAGE_IK = "ik_convergence"
STAGE_JUMP = "joint_jump"
STAGES = (STAGE_CLUTCH, STAGE_POSE, STAGE_IK, STAGE_JUMP)


class ClutchDisengagedError(RuntimeError):
    """Raised when the clutch mapping is queried while not engaged."""


@dataclass(frozen=True)
class ClutchState:
    engaged: bool = False
    controller_anchor: PoseSE3 = field(default_factory=PoseSE3.identity)
    robot_anchor: PoseSE3 = field(default_factory=PoseSE3.identity)


@dataclass(frozen=True)
class FilterConfig:
    joint_jump_max: float = 0.15  # rad per frame, infinity norm
    ee_linear_max: float = 0.05  # m per frame
    ee_angular_max: float = 0.12  # rad per frame
    ik: IKConfig = field(default_factory=IKConfig)
    clamp_mode: bool = False

    def __post_init__(self):
        for name in ("joint_jump_max", "ee_linear_max", "ee_angular_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def to_dict(self) -> dict:
        return {
            "joint_jump_max": self.joint_jump_max,
            "ee_linear_max": self.ee_linear_max,
            "ee_angular_max": self.ee_angular_max,
            "clamp_mode": self.clamp_mode,
            "ik": {
                "damping": self.ik.damping,
                "max_iterations": self.ik.max_iterations,
                "tol_linear": self.ik.tol_linear,
                "tol_angular": self.ik.tol_angular,
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "FilterConfig":
        ik = d.get("ik", {})
        return FilterConfig(
            joint_jump_max=d.get("joint_jump_max", 0.15),
            ee_linear_max=d.get("ee_linear_max", 0.05),
            ee_angular_max=d.get("ee_angular_max", 0.12),
            clamp_mode=d.get("clamp_mode", False),
            ik=IKConfig(
                damping=ik.get("damping", 0.05),
                max_iterations=ik.get("max_iterations", 100),
                tol_linear=ik.get("tol_linear", 1e-4),
                tol_angular=ik.get("tol_angular", 1e-3),
            ),
        )


@dataclass
class FilterReport:
    """Per-frame cascade outcome for one arm."""

    stages: dict[str, StageOutcome]
    joints: np.ndarray  # emitted 7-vector (held value on rejection)
    target: PoseSE3  # EE target after the clutch mapping
    accepted: bool

    def first_rejecting_stage(self) -> int:
        """1-based index of the first rejected stage, 0 when fully passed."""
        for i, name in enumerate(STAGES, start=1):
            if self.stages[name] is StageOutcome.REJECTED:
                return i
        return 0


def clutch_transform(clutch: ClutchState, controller_now: PoseSE3) -> PoseSE3:
    """Map current controller pose to a robot EE target, relative to anchors."""
    if not clutch.engaged:
        raise ClutchDisengagedError("clutch mapping requires an engaged clutch")
    delta = compose(inverse(clutch.controller_anchor), controller_now)
    return compose(clutch.robot_anchor, delta)


def cross_frame_pose_filter(
    prev: PoseSE3, proposed: PoseSE3, cfg: FilterConfig
) -> tuple[PoseSE3, StageOutcome]:
    lin, ang = pose_delta(prev, proposed)
    if lin <= cfg.ee_linear_max and ang <= cfg.ee_angular_max:
        return proposed, StageOutcome.PASSED
    return prev, StageOutcome.REJECTED


def ik_jump_filter(
    q_prev: np.ndarray, q_new: np.ndarray, cfg: FilterConfig
) -> tuple[np.ndarray, StageOutcome]:
    q_prev = np.asarray(q_prev, dtype=float)
    q_new = np.asarray(q_new, dtype=float)
    delta = q_new - q_prev
    jump = float(np.max(np.abs(delta))) if delta.size else 0.0
    if jump <= cfg.joint_jump_max:
        return q_new, StageOutcome.PASSED
    if cfg.clamp_mode:
        clamped = q_prev + np.clip(delta, -cfg.joint_jump_max, cfg.joint_jump_max)
        return clamped, StageOutcome.CLAMPED
    return q_prev, StageOutcome.REJECTED


class ArmCascade:
    """Stateful per-arm filter pipeline; confined to one simulation tick loop.

    Holds last accepted joints/EE pose and the clutch anchors. Feed it one
    controller pose per frame via `step`; when the clutch is disengaged the
    output simply holds.
    """

    def __init__(self, chain: KinematicChain, cfg: FilterConfig, q_init):
        self.chain = chain
        self.cfg = cfg
        self.joints = chain.clamp(np.asarray(q_init, dtype=float))
        self.ee_pose = forward_kinematics(chain, self.joints)
        self.clutch = ClutchState()

    def set_clutch(self, engaged: bool, controller_now: PoseSE3) -> None:
        """Engage/disengage; anchors are captured atomically at the transition."""
        if engaged and not self.clutch.engaged:
            self.clutch = ClutchState(True, controller_now, self.ee_pose)
        elif not engaged and self.clutch.engaged:
            self.clutch = ClutchState(False, self.clutch.controller_anchor, self.clutch.robot_anchor)

    def step(self, controller_now: PoseSE3, clutch_engaged: bool) -> FilterReport:
        self.set_clutch(clutch_engaged, controller_now)
        stages = {name: StageOutcome.NOT_EVALUATED for name in STAGES}

        if not self.clutch.engaged:
            # Disengaged: target holds at the last engaged value.
            stages[STAGE_CLUTCH] = StageOutcome.PASSED
            for name in (STAGE_POSE, STAGE_IK, STAGE_JUMP):
                stages[name] = StageOutcome.PASSED
            return FilterReport(stages, self.joints.copy(), self.ee_pose, True)

        target = clutch_transform(self.clutch, controller_now)
        stages[STAGE_CLUTCH] = StageOutcome.PASSED

        accepted_pose, outcome = cross_frame_pose_filter(self.ee_pose, target, self.cfg)
        stages[STAGE_POSE] = outcome
        if outcome is StageOutcome.REJECTED:
            return FilterReport(stages, self.joints.copy(), target, False)

        ik = solve_ik(self.chain, accepted_pose, self.joints, self.cfg.ik)
        if not ik.converged:
            stages[STAGE_IK] = StageOutcome.REJECTED
            return FilterReport(stages, self.joints.copy(), target, False)
        stages[STAGE_IK] = StageOutcome.PASSED

        joints, outcome = ik_jump_filter(self.joints, ik.joints, self.cfg)
        stages[STAGE_JUMP] = outcome
        if outcome is StageOutcome.REJECTED:
            return FilterReport(stages, self.joints.copy(), target, False)

        self.joints = joints.copy()
        self.ee_pose = forward_kinematics(self.chain, self.joints)
        return FilterReport(stages, self.joints.copy(), target, True)

    def step_joints(self, q_target) -> FilterReport:
        """Joint-space entry point (policy execution): jump filter + limits only."""
        stages = {name: StageOutcome.NOT_EVALUATED for name in STAGES}
        q_target = self.chain.clamp(np.asarray(q_target, dtype=float))
        joints, outcome = ik_jump_filter(self.joints, q_target, self.cfg)
        stages[STAGE_JUMP] = outcome
        accepted = outcome is not StageOutcome.REJECTED
        if accepted:
            self.joints = joints.copy()
            self.ee_pose = forward_kinematics(self.chain, self.joints)
        return FilterReport(stages, self.joints.copy(), self.ee_pose, accepted)


def encode_filter_outcome(left: FilterReport, right: FilterReport) -> int:
    """Pack both arms' first-rejecting stage into one byte (low nibble left)."""
    return (left.first_rejecting_stage() & 0x0F) | (
        (right.first_rejecting_stage() & 0x0F) << 4
    )
