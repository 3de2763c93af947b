"""Forward/inverse kinematics for the dual 7-DoF arm, 6-DoF hand model.

Arms are revolute chains solved with damped least squares; hand joints are
never solved, they are position-mapped from normalized finger values into
their limit range. The 26-dim command layout is
[left arm 0..6, left hand 7..12, right arm 13..19, right hand 20..25].

The hot path (FK + Jacobian inside the IK loop) runs on precomputed
rotation matrices rather than pose objects; the public API still speaks
PoseSE3.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import PoseSE3, Quaternion

ARM_DOF = 7
HAND_DOF = 6
ACTION_DIM = 2 * (ARM_DOF + HAND_DOF)

LEFT_ARM = slice(0, 7)
LEFT_HAND = slice(7, 13)
RIGHT_ARM = slice(13, 20)
RIGHT_HAND = slice(20, 26)


@dataclass(frozen=True, eq=False)
class Joint:
    axis: np.ndarray
    offset: PoseSE3
    lower: float
    upper: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError("joint axis must be non-zero")
        object.__setattr__(self, "axis", axis / n)
        if not self.lower < self.upper:
            raise ValueError("joint limits must satisfy lower < upper")


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Serial revolute chain; `tool` is a fixed transform after the last joint.

    `home` is the ready configuration used at reset and as the default IK
    seed; it defaults to mid-limits but models should pin a non-singular
    pose.
    """

    joints: tuple[Joint, ...]
    base: PoseSE3 = field(default_factory=PoseSE3.identity)
    tool: PoseSE3 = field(default_factory=PoseSE3.identity)
    home: np.ndarray | None = None

    @property
    def dof(self) -> int:
        return len(self.joints)

    def clamp(self, q) -> np.ndarray:
        pk = _packed(self)
        return np.clip(np.asarray(q, dtype=float), pk.lower, pk.upper)

    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        pk = _packed(self)
        return pk.lower.copy(), pk.upper.copy()


class _Packed:
    """Chain constants flattened to arrays for the FK/IK hot path."""

    def __init__(self, chain: KinematicChain):
        n = chain.dof
        self.n = n
        self.off_R = np.stack(
            [j.offset.orientation.to_rotation_matrix() for j in chain.joints]
        ) if n else np.zeros((0, 3, 3))
        self.off_p = np.stack([j.offset.position for j in chain.joints]) if n else np.zeros((0, 3))
        self.axes = np.stack([j.axis for j in chain.joints]) if n else np.zeros((0, 3))
        self.K = np.stack([_skew(a) for a in self.axes]) if n else np.zeros((0, 3, 3))
        self.K2 = np.stack([k @ k for k in self.K]) if n else np.zeros((0, 3, 3))
        self.base_R = chain.base.orientation.to_rotation_matrix()
        self.base_p = chain.base.position
        self.tool_R = chain.tool.orientation.to_rotation_matrix()
        self.tool_p = chain.tool.position
        self.lower = np.array([j.lower for j in chain.joints])
        self.upper = np.array([j.upper for j in chain.joints])


_packed_cache: "weakref.WeakKeyDictionary[KinematicChain, _Packed]" = (
    weakref.WeakKeyDictionary()
)


def _packed(chain: KinematicChain) -> _Packed:
    pk = _packed_cache.get(chain)
    if pk is None:
        pk = _Packed(chain)
        _packed_cache[chain] = pk
    return pk


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def _fk_arrays(
    chain: KinematicChain, q: np.ndarray, want_frames: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Returns (R_ee, p_ee, joint origins, world joint axes)."""
    pk = _packed(chain)
    if q.shape != (pk.n,):
        raise ValueError(f"expected {pk.n} joint values, got {q.shape}")
    R = pk.base_R
    p = pk.base_p
    origins = np.empty((pk.n, 3)) if want_frames else None
    axes_w = np.empty((pk.n, 3)) if want_frames else None
    eye = np.eye(3)
    for i in range(pk.n):
        p = R @ pk.off_p[i] + p
        R = R @ pk.off_R[i]
        if want_frames:
            origins[i] = p
            axes_w[i] = R @ pk.axes[i]
        s, c = math.sin(q[i]), math.cos(q[i])
        R = R @ (eye + s * pk.K[i] + (1.0 - c) * pk.K2[i])
    p_ee = R @ pk.tool_p + p
    R_ee = R @ pk.tool_R
    return R_ee, p_ee, origins, axes_w


def _rotvec(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (matrix logarithm)."""
    cos_angle = float(np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0))
    angle = math.acos(cos_angle)
    if angle < 1e-9:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if math.pi - angle < 1e-6:
        # Near pi the off-diagonal difference vanishes; recover axis from diagonal.
        diag = np.diag(R)
        i = int(np.argmax(diag))
        axis = np.zeros(3)
        axis[i] = math.sqrt(max(0.0, (diag[i] + 1.0) * 0.5))
        j, k = (i + 1) % 3, (i + 2) % 3
        axis[j] = R[i, j] / (2.0 * axis[i])
        axis[k] = R[i, k] / (2.0 * axis[i])
        return axis * angle
    scale = angle / (2.0 * math.sin(angle))
    return scale * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])


@dataclass
class IKResult:
    joints: np.ndarray
    residual_linear: float
    residual_angular: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class IKConfig:
    damping: float = 0.05
    max_iterations: int = 150
    tol_linear: float = 1e-4
    tol_angular: float = 1e-3
    # Per-iteration error clamps keep the DLS step well-conditioned when the
    # target starts far away.
    step_linear_max: float = 0.2
    step_angular_max: float = 0.8
    # Failed solves retry from a fixed pseudorandom seed sequence, so the
    # solver stays deterministic while escaping bad basins.
    restarts: int = 40


def forward_kinematics(chain: KinematicChain, q) -> PoseSE3:
    q = np.asarray(q, dtype=float)
    R, p, _, _ = _fk_arrays(chain, q, want_frames=False)
    return PoseSE3(p, Quaternion.from_rotation_matrix(R))


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric Jacobian in the world frame, rows [linear; angular]."""
    q = np.asarray(q, dtype=float)
    _, p_ee, origins, axes_w = _fk_arrays(chain, q, want_frames=True)
    J = np.zeros((6, chain.dof))
    if chain.dof:
        J[:3] = np.cross(axes_w, p_ee - origins).T
        J[3:] = axes_w.T
    return J


def jacobian_numeric(chain: KinematicChain, q, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of FK; oracle for the analytic Jacobian."""
    if h <= 0:
        raise ValueError("step must be positive")
    q = np.asarray(q, dtype=float)
    J = np.zeros((6, chain.dof))
    for i in range(chain.dof):
        qp, qm = q.copy(), q.copy()
        qp[i] += h
        qm[i] -= h
        Rp, pp, _, _ = _fk_arrays(chain, qp, want_frames=False)
        Rm, pm, _, _ = _fk_arrays(chain, qm, want_frames=False)
        J[:3, i] = (pp - pm) / (2 * h)
        J[3:, i] = _rotvec(Rp @ Rm.T) / (2 * h)
    return J


def pose_error(current: PoseSE3, target: PoseSE3) -> np.ndarray:
    """6-vector [position error; orientation error as a rotation vector]."""
    err_q = target.orientation.multiply(current.orientation.conjugate())
    return np.concatenate([target.position - current.position, err_q.axis_angle()])


_RESTART_SEED = 0xA11CE


def _dls_attempt(
    chain: KinematicChain,
    R_t: np.ndarray,
    p_t: np.ndarray,
    q0: np.ndarray,
    cfg: IKConfig,
    trace: list | None = None,
) -> tuple[bool, np.ndarray, float, float, int]:
    pk = _packed(chain)
    q = np.clip(q0, pk.lower, pk.upper)
    eye6 = np.eye(6)
    base_sq = cfg.damping * cfg.damping
    best_q, best_err = q.copy(), math.inf
    best_lin = best_ang = math.inf
    for it in range(cfg.max_iterations + 1):
        R, p, origins, axes_w = _fk_arrays(chain, q, want_frames=True)
        e_lin = p_t - p
        e_ang = _rotvec(R_t @ R.T)
        lin = float(np.linalg.norm(e_lin))
        ang = float(np.linalg.norm(e_ang))
        if trace is not None:
            trace.append(math.hypot(lin, ang))
        if lin + ang < best_err:
            best_q, best_err, best_lin, best_ang = q.copy(), lin + ang, lin, ang
        if lin <= cfg.tol_linear and ang <= cfg.tol_angular:
            return True, q, lin, ang, it
        if it == cfg.max_iterations:
            break
        if lin > cfg.step_linear_max:
            e_lin = e_lin * (cfg.step_linear_max / lin)
        if ang > cfg.step_angular_max:
            e_ang = e_ang * (cfg.step_angular_max / ang)
        e = np.concatenate([e_lin, e_ang])
        # Damping grows with the clamped error so far-away targets stay
        # stable and the floor cfg.damping governs the endgame.
        lam_sq = base_sq + 0.1 * float(e @ e)
        J = np.zeros((6, pk.n))
        if pk.n:
            J[:3] = np.cross(axes_w, p - origins).T
            J[3:] = axes_w.T
        step = J.T @ np.linalg.solve(J @ J.T + lam_sq * eye6, e)
        q = np.clip(q + step, pk.lower, pk.upper)
    return False, best_q, best_lin, best_ang, cfg.max_iterations


def solve_ik(
    chain: KinematicChain,
    target: PoseSE3,
    q_init,
    cfg: IKConfig = IKConfig(),
) -> IKResult:
    """Damped-least-squares IK, joints clamped to limits every step.

    Deterministic for fixed inputs: a failed first attempt retries from a
    fixed pseudorandom seed sequence. Non-convergence is reported via the
    result flag, never raised.
    """
    pk = _packed(chain)
    R_t = target.orientation.to_rotation_matrix()
    p_t = target.position
    q0 = np.asarray(q_init, dtype=float)
    ok, q, lin, ang, it = _dls_attempt(chain, R_t, p_t, q0, cfg)
    total_it = it
    if ok:
        return IKResult(q, lin, ang, total_it, True)
    best = (q, lin, ang)
    rng = np.random.default_rng(_RESTART_SEED)
    for _ in range(cfg.restarts):
        seed_q = rng.uniform(pk.lower, pk.upper)
        ok, q, lin, ang, it = _dls_attempt(chain, R_t, p_t, seed_q, cfg)
        total_it += it
        if ok:
            return IKResult(q, lin, ang, total_it, True)
        if lin + ang < best[1] + best[2]:
            best = (q, lin, ang)
    return IKResult(best[0], best[1], best[2], total_it, False)


def map_fingers(fingers, lower: float, upper: float) -> np.ndarray:
    """Normalized [0, 1] finger values -> hand joint positions, clamped."""
    f = np.clip(np.asarray(fingers, dtype=float), 0.0, 1.0)
    return lower + f * (upper - lower)


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Dual-arm model loaded from the declarative robot description file."""

    name: str
    model_version: str
    left: KinematicChain
    right: KinematicChain
    hand_lower: float
    hand_upper: float

    def chain(self, side: str) -> KinematicChain:
        if side == "left":
            return self.left
        if side == "right":
            return self.right
        raise ValueError(f"unknown arm side: {side!r}")

    def clamp_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float).reshape(ACTION_DIM).copy()
        a[LEFT_ARM] = self.left.clamp(a[LEFT_ARM])
        a[RIGHT_ARM] = self.right.clamp(a[RIGHT_ARM])
        a[LEFT_HAND] = np.clip(a[LEFT_HAND], self.hand_lower, self.hand_upper)
        a[RIGHT_HAND] = np.clip(a[RIGHT_HAND], self.hand_lower, self.hand_upper)
        return a

    def neutral_action(self) -> np.ndarray:
        a = np.zeros(ACTION_DIM)
        a[LEFT_ARM] = neutral_pose(self.left)
        a[RIGHT_ARM] = neutral_pose(self.right)
        a[LEFT_HAND] = self.hand_lower
        a[RIGHT_HAND] = self.hand_lower
        return a


def neutral_pose(chain: KinematicChain) -> np.ndarray:
    if chain.home is not None:
        return np.asarray(chain.home, dtype=float).copy()
    lo, hi = chain.limits()
    return 0.5 * (lo + hi)


def _pose_from_dict(d: dict) -> PoseSE3:
    pos = d.get("position", [0.0, 0.0, 0.0])
    quat = d.get("orientation_wxyz", [1.0, 0.0, 0.0, 0.0])
    return PoseSE3(np.asarray(pos, dtype=float), Quaternion(*quat))


def _chain_from_dict(d: dict) -> KinematicChain:
    joints = []
    for j in d["joints"]:
        if j.get("type", "revolute") != "revolute":
            raise ValueError(f"unsupported joint type: {j['type']!r}")
        joints.append(
            Joint(
                axis=np.asarray(j["axis"], dtype=float),
                offset=_pose_from_dict(j.get("offset", {})),
                lower=float(j["limits"][0]),
                upper=float(j["limits"][1]),
            )
        )
    if len(joints) != ARM_DOF:
        raise ValueError(f"arm chain must have {ARM_DOF} joints, got {len(joints)}")
    home = d.get("home")
    return KinematicChain(
        joints=tuple(joints),
        base=_pose_from_dict(d.get("base", {})),
        tool=_pose_from_dict(d.get("tool", {})),
        home=None if home is None else np.asarray(home, dtype=float),
    )


def load_robot_model(path: str | Path | None = None) -> RobotModel:
    """Load a robot description; defaults to the bundled dual-arm model."""
    if path is None:
        text = (
            resources.files("mirrorlink").joinpath("models/desk_dual_arm.json").read_text()
        )
    else:
        text = Path(path).read_text()
    d = json.loads(text)
    if "model_version" not in d:
        raise ValueError("robot model file missing model_version")
    hand = d["hands"]
    if int(hand.get("count", HAND_DOF)) != HAND_DOF:
        raise ValueError(f"hands must have {HAND_DOF} joints")
    return RobotModel(
        name=d.get("name", "unnamed"),
        model_version=str(d["model_version"]),
        left=_chain_from_dict(d["arms"]["left"]),
        right=_chain_from_dict(d["arms"]["right"]),
        hand_lower=float(hand["joint_limits"][0]),
        hand_upper=float(hand["joint_limits"][1]),
    )
