"""Scripted demonstration policies, one per benchmark task.

Each oracle is a deterministic phase machine over observations: phases name
palm pose targets (solved to joints with the shared IK) and finger
closures; chunks interpolate toward those targets in joint space with
per-tick steps far below the jump-filter bound. Consecutive chunks continue
the previous plan's trajectory so overlapping predictions stay consistent
under temporal ensembling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import PoseSE3, Quaternion, compose, inverse
from .kinematics import (
    LEFT_ARM,
    LEFT_HAND,
    RIGHT_ARM,
    RIGHT_HAND,
    IKConfig,
    RobotModel,
    solve_ik,
)
from .policy import ActionChunk, Observation, Policy
from .scene import Scene, TaskScenario

CLOSE = 0.93  # commanded closure when gripping (normalized)
OPEN = 0.07

JOINT_STEP = 0.05  # rad per tick, infinity norm
FINGER_STEP = 0.2  # normalized closure per tick

_ROLE_HOLD = None


@dataclass
class Phase:
    name: str
    left: Callable[["ScriptedOracle", Observation], PoseSE3 | None] | None
    right: Callable[["ScriptedOracle", Observation], PoseSE3 | None] | None
    left_close: float
    right_close: float
    done: Callable[["ScriptedOracle", Observation], bool]
    track: bool = False  # recompute the pose target at every replan
    max_ticks: int = 500


def at(x: float, y: float, z: float, orientation: Quaternion | None = None) -> PoseSE3:
    return PoseSE3(np.array([x, y, z]), orientation or Quaternion.identity())


def settled(oracle: "ScriptedOracle", obs: Observation) -> bool:
    return oracle.arms_settled(obs) and oracle.fingers_settled(obs)


def settled_near(side: str, role: str, dist: float):
    def cond(oracle: "ScriptedOracle", obs: Observation) -> bool:
        if not settled(oracle, obs):
            return False
        palm = obs.ee_left if side == "left" else obs.ee_right
        obj = obs.object_pose(oracle.task.roles[role])
        return float(np.linalg.norm(obj.position - palm.position)) <= dist

    return cond


class ScriptedOracle(Policy):
    """Base phase-machine oracle; subclasses provide the phase script."""

    def __init__(
        self, task: TaskScenario, model: RobotModel, horizon: int = 16, chunk_every: int = 8
    ):
        self.task = task
        self.model = model
        self.horizon = horizon
        self.chunk_every = max(1, min(chunk_every, horizon))
        self.ik_cfg = IKConfig(restarts=8)
        self.phases: list[Phase] = []
        self.reset()

    # -- phase machinery -------------------------------------------------

    def reset(self) -> None:
        self.phases = self.build_phases()
        self._phase_idx = 0
        self._phase_entry: int | None = None
        self._targets: dict[str, np.ndarray | None] = {"left": None, "right": None}
        self._target_pose: dict[str, PoseSE3 | None] = {"left": None, "right": None}
        self._fingers = {"left": OPEN, "right": OPEN}
        self._tail: np.ndarray | None = None
        self._plan: list[np.ndarray] = []
        self.grasp_offset: dict[str, PoseSE3] = {}

    def build_phases(self) -> list[Phase]:
        raise NotImplementedError

    @property
    def phase(self) -> Phase:
        return self.phases[min(self._phase_idx, len(self.phases) - 1)]

    def arms_settled(self, obs: Observation, tol: float = 0.03) -> bool:
        for side, sl in (("left", LEFT_ARM), ("right", RIGHT_ARM)):
            target = self._targets[side]
            if target is not None and np.max(np.abs(obs.joint_state[sl] - target)) > tol:
                return False
        return True

    def fingers_settled(self, obs: Observation, tol: float = 0.08) -> bool:
        lo, hi = self.model.hand_lower, self.model.hand_upper
        for side, sl in (("left", LEFT_HAND), ("right", RIGHT_HAND)):
            closure = float(np.mean((obs.joint_state[sl] - lo) / (hi - lo)))
            if abs(closure - self._fingers[side]) > tol:
                return False
        return True

    def role_pose(self, obs: Observation, role: str) -> PoseSE3:
        return obs.object_pose(self.task.roles[role])

    def record_grasp_offset(self, obs: Observation, side: str, role: str) -> PoseSE3:
        palm = obs.ee_left if side == "left" else obs.ee_right
        self.grasp_offset[side] = compose(inverse(palm), self.role_pose(obs, role))
        return self.grasp_offset[side]

    def palm_for(self, side: str, target: PoseSE3) -> PoseSE3:
        """Palm pose that places the held object at `target`."""
        offset = self.grasp_offset.get(side, PoseSE3.identity())
        return compose(target, inverse(offset))

    def _advance(self, obs: Observation) -> None:
        while self._phase_idx < len(self.phases):
            phase = self.phases[self._phase_idx]
            if self._phase_entry is None:
                self._phase_entry = obs.tick_index
                self._enter_phase(phase, obs)
                return
            expired = obs.tick_index - self._phase_entry >= phase.max_ticks
            if phase.done(self, obs) or expired:
                self._phase_idx += 1
                self._phase_entry = None
                continue
            if phase.track:
                self._aim(phase, obs)
            return

    def _enter_phase(self, phase: Phase, obs: Observation) -> None:
        self._fingers = {"left": phase.left_close, "right": phase.right_close}
        self._target_pose = {"left": None, "right": None}
        hook = getattr(self, f"on_enter_{phase.name}", None)
        if hook:
            hook(obs)
        self._aim(phase, obs)

    def _aim(self, phase: Phase, obs: Observation) -> None:
        for side, fn in (("left", phase.left), ("right", phase.right)):
            if fn is None:
                self._target_pose[side] = None
                self._targets[side] = None
                continue
            pose = fn(self, obs)
            if pose is None:
                self._target_pose[side] = None
                self._targets[side] = None
                continue
            prev = self._target_pose[side]
            if prev is not None and not phase.track:
                continue  # static target already solved
            if (
                prev is not None
                and np.allclose(prev.position, pose.position, atol=1e-12)
                and prev.orientation.as_array().tolist()
                == pose.orientation.as_array().tolist()
            ):
                continue
            sl = LEFT_ARM if side == "left" else RIGHT_ARM
            seed = (
                self._tail[sl]
                if self._tail is not None
                else obs.joint_state[sl]
            )
            result = solve_ik(self.model.chain(side), pose, seed, self.ik_cfg)
            self._target_pose[side] = pose
            self._targets[side] = result.joints

    # -- chunk construction ----------------------------------------------

    def _extend_step(self, q: np.ndarray) -> np.ndarray:
        """One tick of the reference trajectory toward the current targets."""
        q = q.copy()
        lo, hi = self.model.hand_lower, self.model.hand_upper
        for side, arm in (("left", LEFT_ARM), ("right", RIGHT_ARM)):
            target = self._targets[side]
            if target is not None:
                q[arm] += np.clip(target - q[arm], -JOINT_STEP, JOINT_STEP)
        for side, hand in (("left", LEFT_HAND), ("right", RIGHT_HAND)):
            goal = lo + self._fingers[side] * (hi - lo)
            step = FINGER_STEP * (hi - lo)
            q[hand] += np.clip(goal - q[hand], -step, step)
        return q

    def predict(self, obs: Observation) -> ActionChunk:
        """Emit the next window of the rolling committed plan.

        Entries already emitted in a previous chunk are replayed verbatim, so
        every prediction the ensembler blends for a given tick is identical
        and the executed trajectory equals the plan (no blend discontinuity
        can trip the jump filter). Phase changes only shape the fresh
        extension beyond the committed region.
        """
        self._advance(obs)
        if self._plan and np.max(np.abs(self._plan[0] - obs.joint_state)) > 0.5:
            self._plan = []  # lost sync (external interference); replan from reality
        if not self._plan:
            self._plan = [self._extend_step(obs.joint_state.astype(float))]
        while len(self._plan) < self.horizon:
            self._plan.append(self._extend_step(self._plan[-1]))
        actions = np.stack(self._plan[: self.horizon])
        self._tail = actions[-1]
        # Consume the entries the loop will execute before the next replan.
        self._plan = self._plan[self.chunk_every :]
        return ActionChunk(obs.tick_index, actions)


# -- kitchen cleanup ----------------------------------------------------------


class KitchenOracle(ScriptedOracle):
    HANDOVER = (0.0, 0.27)

    def build_phases(self) -> list[Phase]:
        hx, hy = self.HANDOVER
        item = lambda o, obs, z: at(*self.role_pose(obs, "item").position[:2], z)

        def basket_drop(o, obs):
            basket = self.role_pose(obs, "basket")
            return at(basket.position[0], basket.position[1], 0.20)

        return [
            Phase("l_hover", lambda o, obs: item(o, obs, 0.16), None, OPEN, OPEN, settled),
            Phase("l_descend", lambda o, obs: item(o, obs, 0.06), None, OPEN, OPEN, settled),
            Phase("l_close", None, None, CLOSE, OPEN, settled_near("left", "item", 0.07)),
            Phase("l_carry", lambda o, obs: at(hx, hy, 0.16), None, CLOSE, OPEN, settled),
            Phase("l_lower", lambda o, obs: at(hx, hy, 0.062), None, CLOSE, OPEN, settled),
            Phase("l_release", None, None, OPEN, OPEN, settled),
            Phase("l_retreat", lambda o, obs: at(-0.3, 0.22, 0.18), None, OPEN, OPEN, settled),
            Phase("r_hover", None, lambda o, obs: item(o, obs, 0.15), OPEN, OPEN, settled),
            Phase("r_descend", None, lambda o, obs: item(o, obs, 0.06), OPEN, OPEN, settled),
            Phase("r_close", None, None, OPEN, CLOSE, settled_near("right", "item", 0.07)),
            Phase("r_carry", None, basket_drop, OPEN, CLOSE, settled),
            Phase("r_release", None, None, OPEN, OPEN, settled),
            Phase("r_retreat", None, lambda o, obs: at(0.3, 0.22, 0.18), OPEN, OPEN, settled),
            Phase("hold", None, None, OPEN, OPEN, lambda o, obs: False, max_ticks=10_000),
        ]

    def on_enter_l_carry(self, obs: Observation) -> None:
        self.record_grasp_offset(obs, "left", "item")

    def on_enter_r_carry(self, obs: Observation) -> None:
        self.record_grasp_offset(obs, "right", "item")


# -- air fryer ----------------------------------------------------------------


class AirFryerOracle(ScriptedOracle):
    def handle_point(self, obs: Observation, forward: float = 0.0) -> PoseSE3:
        tray = self.role_pose(obs, "tray")
        off = np.asarray(self.task.predicate.get("handle_offset", [0, -0.095, 0]))
        p = tray.position + off
        return at(p[0], p[1] + forward, 0.05)

    def build_phases(self) -> list[Phase]:
        food = lambda o, obs, z: at(*self.role_pose(obs, "food").position[:2], z)

        def tray_drop(o, obs):
            tray = self.role_pose(obs, "tray")
            return at(tray.position[0], tray.position[1], 0.18)

        def tray_at_most(y):
            return lambda o, obs: settled(o, obs) and self.role_pose(obs, "tray").position[1] <= y

        def tray_at_least(y):
            return lambda o, obs: self.role_pose(obs, "tray").position[1] >= y

        pull_target = lambda o, obs: at(
            self.role_pose(obs, "tray").position[0], 0.125, 0.05
        )
        push_target = lambda o, obs: at(
            self.role_pose(obs, "tray").position[0], 0.249, 0.05
        )
        return [
            Phase("r_handle", None, lambda o, obs: self.handle_point(obs), OPEN, OPEN, settled),
            Phase("r_grip", None, None, OPEN, CLOSE, settled),
            Phase("r_pull", None, pull_target, OPEN, CLOSE, tray_at_most(0.225)),
            Phase("r_ungrip", None, None, OPEN, OPEN, settled),
            Phase("r_clear", None, lambda o, obs: at(0.32, 0.2, 0.16), OPEN, OPEN, settled),
            Phase("l_hover", lambda o, obs: food(o, obs, 0.14), None, OPEN, OPEN, settled),
            Phase("l_descend", lambda o, obs: food(o, obs, 0.045), None, OPEN, OPEN, settled),
            Phase("l_close", None, None, CLOSE, OPEN, settled_near("left", "food", 0.07)),
            Phase("l_lift", lambda o, obs: food(o, obs, 0.2), None, CLOSE, OPEN, settled),
            Phase("l_carry", tray_drop, None, CLOSE, OPEN, settled),
            Phase("l_release", None, None, OPEN, OPEN, settled),
            Phase("l_retreat", lambda o, obs: at(-0.32, 0.2, 0.16), None, OPEN, OPEN, settled),
            Phase("r_rehandle", None, lambda o, obs: self.handle_point(obs), OPEN, OPEN, settled),
            Phase("r_regrip", None, None, OPEN, CLOSE, settled),
            Phase("r_push", None, push_target, OPEN, CLOSE, tray_at_least(0.338)),
            Phase("r_open", None, None, OPEN, OPEN, settled),
            Phase("hold", None, None, OPEN, OPEN, lambda o, obs: False, max_ticks=10_000),
        ]

    def on_enter_l_lift(self, obs: Observation) -> None:
        self.record_grasp_offset(obs, "left", "food")


# -- can stacking -------------------------------------------------------------


class CanStackingOracle(ScriptedOracle):
    CENTER = (0.0, 0.30)

    def build_phases(self) -> list[Phase]:
        cx, cy = self.CENTER
        can = lambda role, z: lambda o, obs: at(*self.role_pose(obs, role).position[:2], z)
        return [
            Phase("l_hover", can("can_a", 0.16), None, OPEN, OPEN, settled),
            Phase("l_descend", can("can_a", 0.06), None, OPEN, OPEN, settled),
            Phase("l_close", None, None, CLOSE, OPEN, settled_near("left", "can_a", 0.07)),
            Phase("l_carry", lambda o, obs: at(cx, cy, 0.16), None, CLOSE, OPEN, settled),
            Phase("l_lower", lambda o, obs: at(cx, cy, 0.062), None, CLOSE, OPEN, settled),
            Phase("l_release", None, None, OPEN, OPEN, settled),
            Phase("l_retreat", lambda o, obs: at(-0.3, 0.22, 0.18), None, OPEN, OPEN, settled),
            Phase("r_hover", None, can("can_b", 0.16), OPEN, OPEN, settled),
            Phase("r_descend", None, can("can_b", 0.06), OPEN, OPEN, settled),
            Phase("r_close", None, None, OPEN, CLOSE, settled_near("right", "can_b", 0.07)),
            Phase("r_carry", None, lambda o, obs: at(cx, cy, 0.26), OPEN, CLOSE, settled),
            Phase("r_lower", None, lambda o, obs: at(cx, cy, 0.172), OPEN, CLOSE, settled),
            Phase("r_release", None, None, OPEN, OPEN, settled),
            Phase("r_retreat", None, lambda o, obs: at(0.3, 0.22, 0.18), OPEN, OPEN, settled),
            Phase("hold", None, None, OPEN, OPEN, lambda o, obs: False, max_ticks=10_000),
        ]


# -- cup-to-cup transfer ------------------------------------------------------


class CupTransferOracle(ScriptedOracle):
    LEFT_HOLD = (-0.10, 0.30, 0.16)
    TILT_FINAL = 2.1
    SPILL_AIM = 1.82  # just past the spill threshold; mouth aimed for this tilt

    def cup_palm(self, obs: Observation, side: str, cup_target: PoseSE3) -> PoseSE3:
        return self.palm_for(side, cup_target)

    def pour_center(self, obs: Observation) -> np.ndarray:
        left_cup = self.role_pose(obs, "left_cup")
        half = 0.045
        mouth_dx = half * math.sin(self.SPILL_AIM)
        return np.array(
            [left_cup.position[0] - mouth_dx, left_cup.position[1], left_cup.position[2] + 0.08]
        )

    def build_phases(self) -> list[Phase]:
        lx, ly, lz = self.LEFT_HOLD
        cup = lambda role, z: lambda o, obs: at(*self.role_pose(obs, role).position[:2], z)

        def lift_left(o, obs):
            return self.cup_palm(obs, "left", at(lx, ly, lz - 0.01))

        def lift_right(o, obs):
            rc = self.role_pose(obs, "right_cup")
            return self.cup_palm(obs, "right", at(rc.position[0] - 0.06, 0.30, 0.22))

        def position_pour(o, obs):
            return self.cup_palm(obs, "right", PoseSE3(self.pour_center(obs)))

        def tilt(theta):
            def fn(o, obs):
                target = PoseSE3(
                    self._pour_point, Quaternion.from_axis_angle([0, 1, 0], theta)
                )
                return self.cup_palm(obs, "right", target)

            return fn

        def spilled(o, obs):
            berry = self.role_pose(obs, "berry")
            left_cup = self.role_pose(obs, "left_cup")
            return float(np.linalg.norm(berry.position[:2] - left_cup.position[:2])) < 0.04 and (
                berry.position[2] < left_cup.position[2] + 0.01
            )

        return [
            Phase("l_hover", cup("left_cup", 0.16), None, OPEN, OPEN, settled),
            Phase("l_descend", cup("left_cup", 0.055), None, OPEN, OPEN, settled),
            Phase("l_close", None, None, CLOSE, OPEN, settled_near("left", "left_cup", 0.07)),
            Phase("l_lift", lift_left, None, CLOSE, OPEN, settled),
            Phase("r_hover", None, cup("right_cup", 0.16), CLOSE, OPEN, settled),
            Phase("r_descend", None, cup("right_cup", 0.055), CLOSE, OPEN, settled),
            Phase("r_close", None, None, CLOSE, CLOSE, settled_near("right", "right_cup", 0.07)),
            Phase("r_lift", None, lift_right, CLOSE, CLOSE, settled),
            Phase("r_position", None, position_pour, CLOSE, CLOSE, settled),
            Phase("tilt_a", None, tilt(0.9), CLOSE, CLOSE, settled),
            Phase("tilt_b", None, tilt(1.6), CLOSE, CLOSE, settled),
            Phase("tilt_c", None, tilt(self.TILT_FINAL), CLOSE, CLOSE, spilled),
            Phase("hold", None, None, CLOSE, CLOSE, lambda o, obs: False, max_ticks=10_000),
        ]

    def on_enter_l_lift(self, obs: Observation) -> None:
        self.record_grasp_offset(obs, "left", "left_cup")

    def on_enter_r_lift(self, obs: Observation) -> None:
        self.record_grasp_offset(obs, "right", "right_cup")

    def on_enter_tilt_a(self, obs: Observation) -> None:
        self._pour_point = self.pour_center(obs)


# -- assembly line sorting ----------------------------------------------------


class AssemblyOracle(ScriptedOracle):
    READY = (0.30, 0.33, 0.16)
    PICK_GATE = 0.34  # start tracking once the item is this far down the line

    def __init__(
        self,
        task: TaskScenario,
        model: RobotModel,
        item_plan: list[dict],
        horizon: int = 16,
        chunk_every: int = 8,
    ):
        # item_plan: [{"id": object id, "box": box role}], in spawn order
        self.item_plan = item_plan
        super().__init__(task, model, horizon, chunk_every)

    def build_phases(self) -> list[Phase]:
        phases = []
        rx, ry, rz = self.READY
        for i, entry in enumerate(self.item_plan):
            oid, box_role = entry["id"], entry["box"]
            item_pose = lambda obs, oid=oid: obs.object_pose(oid)

            def on_line(o, obs, oid=oid):
                return item_pose(obs, oid).position[0] <= self.PICK_GATE

            def track(o, obs, oid=oid):
                p = item_pose(obs, oid).position
                lead = -0.08 * (10 / 120)  # aim slightly down-belt of the item
                return at(p[0] + lead, p[1], 0.105)

            def caught(o, obs, oid=oid):
                palm = obs.ee_right
                p = item_pose(obs, oid).position
                return float(np.linalg.norm(palm.position - p)) <= 0.02

            def held(o, obs, oid=oid):
                palm = obs.ee_right
                p = item_pose(obs, oid).position
                return o.fingers_settled(obs) and float(
                    np.linalg.norm(palm.position - p)
                ) <= 0.035

            def lift(o, obs, oid=oid):
                p = item_pose(obs, oid).position
                return at(p[0], p[1], 0.2)

            def over_box(o, obs, box_role=box_role):
                box = self.role_pose(obs, box_role)
                return at(box.position[0], box.position[1], 0.2)

            phases += [
                Phase(f"wait_{i}", None, lambda o, obs: at(rx, ry, rz), OPEN, OPEN, on_line, max_ticks=1500),
                Phase(f"track_{i}", None, track, OPEN, OPEN, caught, track=True, max_ticks=400),
                Phase(f"close_{i}", None, track, OPEN, CLOSE, held, track=True, max_ticks=120),
                Phase(f"lift_{i}", None, lift, OPEN, CLOSE, settled),
                Phase(f"carry_{i}", None, over_box, OPEN, CLOSE, settled),
                Phase(f"drop_{i}", None, None, OPEN, OPEN, settled),
            ]
        phases.append(
            Phase("home", None, lambda o, obs: at(rx, ry, rz), OPEN, OPEN, lambda o, obs: False, max_ticks=10_000)
        )
        return phases


def make_oracle(
    scene: Scene, model: RobotModel, horizon: int = 16, chunk_every: int = 8
) -> ScriptedOracle:
    """Construct the demonstration policy for a scene's task."""
    task = scene.task
    if task.task_id == "kitchen_cleanup":
        return KitchenOracle(task, model, horizon, chunk_every)
    if task.task_id == "air_fryer":
        return AirFryerOracle(task, model, horizon, chunk_every)
    if task.task_id == "can_stacking":
        return CanStackingOracle(task, model, horizon, chunk_every)
    if task.task_id == "cup_to_cup":
        return CupTransferOracle(task, model, horizon, chunk_every)
    if task.task_id == "assembly_line":
        plan = [
            {
                "id": entry["object_id"],
                "box": f"box_{scene.objects[entry['object_id']].class_label}",
            }
            for entry in scene.conveyor.pending
        ]
        return AssemblyOracle(task, model, plan, horizon, chunk_every)
    raise ValueError(f"no oracle for task {task.task_id!r}")
