"""Deterministic kinematic desk-scale simulator for the five benchmark tasks.

There is no rigid-body dynamics here on purpose: grasping is
proximity-plus-closure attachment, released objects settle straight down
onto the highest support below them, contained items ride their container,
and the conveyor advances riders linearly. Success predicates are
pose-logical conditions over the final scene plus the recorded history.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import PoseSE3, Quaternion, compose, inverse
from .kinematics import (
    LEFT_ARM,
    LEFT_HAND,
    RIGHT_ARM,
    RIGHT_HAND,
    RobotModel,
    forward_kinematics,
)

TASK_IDS = (
    "kitchen_cleanup",
    "air_fryer",
    "can_stacking",
    "cup_to_cup",
    "assembly_line",
)

# Snap tolerance for settling: a release within this height of a support
# still seats the object on it.
SETTLE_SNAP = 0.02
SPILL_TILT = 1.75  # rad between container up-axis and world up before contents pour out
UP = np.array([0.0, 0.0, 1.0])


class UnknownTask(ValueError):
    pass


@dataclass(frozen=True)
class Shape:
    kind: str  # box | cylinder | sphere
    dims: tuple[float, ...]  # box: ex,ey,ez; cylinder: r,h; sphere: r

    def half_height(self) -> float:
        if self.kind == "box":
            return self.dims[2] / 2
        if self.kind == "cylinder":
            return self.dims[1] / 2
        return self.dims[0]

    def footprint_contains(self, dx: float, dy: float) -> bool:
        """Axis-aligned footprint test around the shape center."""
        if self.kind == "box":
            return abs(dx) <= self.dims[0] / 2 and abs(dy) <= self.dims[1] / 2
        r = self.dims[0]
        return dx * dx + dy * dy <= r * r

    @staticmethod
    def from_dict(d: dict) -> "Shape":
        if "box" in d:
            return Shape("box", tuple(float(v) for v in d["box"]))
        if "cylinder" in d:
            return Shape("cylinder", tuple(float(v) for v in d["cylinder"]))
        if "sphere" in d:
            return Shape("sphere", (float(d["sphere"]),))
        raise ValueError(f"unknown shape spec: {d}")

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"box": list(self.dims)}
        if self.kind == "cylinder":
            return {"cylinder": list(self.dims)}
        return {"sphere": self.dims[0]}


@dataclass
class SceneObject:
    object_id: int
    name: str
    kind: str  # freeItem | container | fixture
    shape: Shape
    pose: PoseSE3
    interior: Shape | None = None  # containment volume, centered in the local frame
    class_label: str = ""
    attached_to: str | None = None

    def up_axis(self) -> np.ndarray:
        return self.pose.orientation.rotate(UP)

    def tilt(self) -> float:
        return math.acos(float(np.clip(self.up_axis() @ UP, -1.0, 1.0)))

    def top_z(self) -> float:
        return self.pose.position[2] + self.shape.half_height()

    def bottom_z(self) -> float:
        return self.pose.position[2] - self.shape.half_height()

    def interior_bottom_z(self) -> float:
        assert self.interior is not None
        return self.pose.position[2] - self.interior.half_height()

    def contains(self, point: np.ndarray) -> bool:
        """Is a world point inside this object's interior volume?"""
        if self.interior is None:
            return False
        local = inverse(self.pose).apply(point)
        if abs(local[2]) > self.interior.half_height():
            return False
        return self.interior.footprint_contains(local[0], local[1])


@dataclass
class DrawerState:
    tray_id: int
    axis: np.ndarray  # unit, world frame
    max_travel: float
    opening: float
    base_pose: PoseSE3  # tray pose at opening 0
    handle_offset: np.ndarray  # handle box center in tray local frame
    handle_extents: np.ndarray

    def tray_pose(self) -> PoseSE3:
        return PoseSE3(
            self.base_pose.position + self.axis * self.opening,
            self.base_pose.orientation,
        )

    def handle_contains(self, point: np.ndarray) -> bool:
        local = inverse(self.tray_pose()).apply(point) - self.handle_offset
        return bool(np.all(np.abs(local) <= self.handle_extents / 2))


@dataclass
class ConveyorState:
    belt_id: int
    velocity: np.ndarray
    spawn_x: float
    # Items pre-exist (the episode format fixes the object count); they are
    # parked off-belt and released onto it on schedule.
    pending: list[dict]  # {object_id, time_s, y}, ordered by time
    spawned: int = 0
    # riders: object_id -> (reference position, reference tick)
    riders: dict[int, tuple[np.ndarray, int]] = field(default_factory=dict)


@dataclass
class SceneHistory:
    """Event log plus per-task running trackers, rebuilt identically on replay."""

    events: list[tuple[int, str, str, int]] = field(default_factory=list)
    max_drawer_opening: float = 0.0
    stack_stable_frames: int = 0
    berry_exit_tick: int | None = None
    berry_enter_tick: int | None = None
    transfer_lift_ok: bool = True

    def record(self, tick: int, kind: str, side: str, object_id: int) -> None:
        self.events.append((tick, kind, side, object_id))

    def first_event(self, kind: str, side: str, object_id: int) -> int | None:
        for tick, k, s, oid in self.events:
            if k == kind and s == side and oid == object_id:
                return tick
        return None


@dataclass
class HandRuntime:
    palm: PoseSE3
    prev_palm: PoseSE3
    attached: int | None = None
    grasp_offset: PoseSE3 = field(default_factory=PoseSE3.identity)


@dataclass(frozen=True)
class GraspConfig:
    radius: float = 0.06
    close_threshold: float = 0.6
    open_threshold: float = 0.3


@dataclass
class TaskScenario:
    task_id: str
    task_version: str
    instruction: str
    seed: int
    tick_hz: int
    grasp: GraspConfig
    predicate: dict
    heatmap_region: tuple[tuple[float, float], tuple[float, float]]
    roles: dict[str, int]  # semantic role -> object id (item, basket, tray, ...)
    primary_spawn: tuple[float, float] = (0.0, 0.0)


def load_manifest(task_id: str, manifest_dir: str | Path | None = None) -> dict:
    if task_id not in TASK_IDS:
        raise UnknownTask(f"unknown task id {task_id!r}; expected one of {TASK_IDS}")
    if manifest_dir is None:
        text = resources.files("mirrorlink").joinpath(f"tasks/{task_id}.json").read_text()
    else:
        text = (Path(manifest_dir) / f"{task_id}.json").read_text()
    manifest = json.loads(text)
    if "task_version" not in manifest:
        raise ValueError(f"manifest for {task_id} missing task_version")
    return manifest


class Scene:
    """One trial's world: dual-arm robot, objects, optional drawer/conveyor."""

    def __init__(self, model: RobotModel, manifest: dict, seed: int):
        self.model = model
        self.manifest = manifest
        self.task_id = manifest["task_id"]
        self.tick_hz = int(manifest.get("tick_hz", 120))
        self.dt = 1.0 / self.tick_hz
        self.tick = 0
        self.seed = seed
        self.history = SceneHistory()
        self.objects: dict[int, SceneObject] = {}
        self.drawer: DrawerState | None = None
        self.conveyor: ConveyorState | None = None
        self._contained_in: dict[int, int] = {}

        self.joints = model.neutral_action()
        self.hands = {
            "left": self._init_hand("left"),
            "right": self._init_hand("right"),
        }

        rng = np.random.default_rng([seed, _task_index(self.task_id)])
        self._build(rng)
        self._contained_in = self._compute_containment()
        # Per-tick berry jitter (off by default): models the erratic motion
        # of a loose berry; replaced-by-a-ball experiments set it to zero.
        self._jitter = float(manifest.get("predicate", {}).get("berry_jitter", 0.0))
        self._jitter_rng = np.random.default_rng([seed, _task_index(self.task_id), 7])
        grasp = manifest.get("grasp", {})
        self.task = TaskScenario(
            task_id=self.task_id,
            task_version=str(manifest["task_version"]),
            instruction=self._instruction,
            seed=seed,
            tick_hz=self.tick_hz,
            grasp=GraspConfig(
                radius=grasp.get("radius", 0.06),
                close_threshold=grasp.get("close_threshold", 0.6),
                open_threshold=grasp.get("open_threshold", 0.3),
            ),
            predicate=manifest.get("predicate", {}),
            heatmap_region=tuple(
                tuple(float(v) for v in pair) for pair in manifest["heatmap_region"]
            ),
            roles=self._roles,
            primary_spawn=self._primary_spawn,
        )

    # -- construction --------------------------------------------------

    def _init_hand(self, side: str) -> HandRuntime:
        arm = LEFT_ARM if side == "left" else RIGHT_ARM
        palm = forward_kinematics(self.model.chain(side), self.joints[arm])
        return HandRuntime(palm=palm, prev_palm=palm)

    def _build(self, rng: np.random.Generator) -> None:
        m = self.manifest
        self._roles: dict[str, int] = {}
        next_id = 1
        for entry in m.get("objects", []):
            obj = SceneObject(
                object_id=next_id,
                name=entry["name"],
                kind=entry["kind"],
                shape=Shape.from_dict(entry["shape"]),
                pose=PoseSE3(
                    np.asarray(entry.get("position", [0, 0, 0]), dtype=float),
                    Quaternion(*entry.get("orientation_wxyz", [1, 0, 0, 0])),
                ),
                interior=Shape.from_dict(entry["interior"]) if "interior" in entry else None,
                class_label=entry.get("class", ""),
            )
            self.objects[next_id] = obj
            if "role" in entry:
                self._roles[entry["role"]] = next_id
            next_id += 1

        self._primary_spawn = (0.0, 0.0)
        item_class = ""
        for spawn in m.get("spawns", []):
            classes = spawn.get("classes", [""])
            cls = classes[int(rng.integers(len(classes)))]
            region = np.asarray(spawn["region"], dtype=float)  # [[xmin,xmax],[ymin,ymax]]
            x = float(rng.uniform(region[0][0], region[0][1]))
            y = float(rng.uniform(region[1][0], region[1][1]))
            shape = Shape.from_dict(spawn["shape"])
            z = spawn.get("z", None)
            obj = SceneObject(
                object_id=next_id,
                name=spawn["name"],
                kind="freeItem",
                shape=shape,
                pose=PoseSE3(np.array([x, y, 10.0 if z is None else z])),
                interior=Shape.from_dict(spawn["interior"]) if "interior" in spawn else None,
                class_label=cls,
            )
            self.objects[next_id] = obj
            if z is None:
                self._settle(obj)
            if "role" in spawn:
                self._roles[spawn["role"]] = next_id
            if spawn.get("primary", False):
                self._primary_spawn = (x, y)
                item_class = cls or spawn["name"]
            next_id += 1
        self._next_id = next_id

        if "drawer" in m:
            d = m["drawer"]
            tray = self.objects[self._roles["tray"]]
            self.drawer = DrawerState(
                tray_id=tray.object_id,
                axis=np.asarray(d["axis"], dtype=float),
                max_travel=float(d["max_travel"]),
                opening=0.0,
                base_pose=tray.pose,
                handle_offset=np.asarray(d["handle_offset"], dtype=float),
                handle_extents=np.asarray(d["handle_extents"], dtype=float),
            )

        if "conveyor" in m:
            c = m["conveyor"]
            classes = list(c["classes"])
            order = rng.permutation(len(classes))
            belt = self.objects[self._roles["belt"]]
            shape = Shape.from_dict(c["item_shape"])
            pending = []
            for i, t in enumerate(c["spawn_times"]):
                y = float(rng.uniform(c["spawn_y"][0], c["spawn_y"][1]))
                park = np.array(
                    [float(c["spawn_x"]) + 0.08 * (i + 1), y, belt.top_z() + shape.half_height()]
                )
                obj = SceneObject(
                    object_id=next_id,
                    name=f"item_{i + 1}",
                    kind="freeItem",
                    shape=shape,
                    pose=PoseSE3(park),
                    class_label=classes[order[i]],
                )
                self.objects[next_id] = obj
                pending.append({"object_id": next_id, "time_s": float(t), "y": y})
                next_id += 1
            self._next_id = next_id
            self.conveyor = ConveyorState(
                belt_id=self._roles["belt"],
                velocity=np.asarray(c["velocity"], dtype=float),
                spawn_x=float(c["spawn_x"]),
                pending=pending,
            )
            if pending:
                self._primary_spawn = (float(c["spawn_x"]), pending[0]["y"])

        # Items declared contained at reset (the berry in the right cup).
        for rule in m.get("place_inside", []):
            item = self.objects[self._roles[rule["item"]]]
            host = self.objects[self._roles[rule["container"]]]
            item.pose = PoseSE3(
                np.array(
                    [
                        host.pose.position[0],
                        host.pose.position[1],
                        host.interior_bottom_z() + item.shape.half_height(),
                    ]
                )
            )

        self._instruction = m["instruction"].format(item=item_class or "item")

    # -- queries ---------------------------------------------------------

    def ee_pose(self, side: str) -> PoseSE3:
        return self.hands[side].palm

    def closure(self, side: str) -> float:
        sl = LEFT_HAND if side == "left" else RIGHT_HAND
        lo, hi = self.model.hand_lower, self.model.hand_upper
        return float(np.mean((self.joints[sl] - lo) / (hi - lo)))

    def ordered_objects(self) -> list[SceneObject]:
        return [self.objects[k] for k in sorted(self.objects)]

    def object_by_role(self, role: str) -> SceneObject:
        return self.objects[self.task.roles[role]]

    def state_digest(self) -> bytes:
        """Bit-level digest of the dynamic state, for determinism checks."""
        parts = [np.asarray(self.joints, dtype=np.float64).tobytes()]
        for obj in self.ordered_objects():
            parts.append(obj.pose.as_array().tobytes())
        if self.drawer:
            parts.append(np.float64(self.drawer.opening).tobytes())
        return b"".join(parts)

    def describe(self) -> dict:
        """Static scene description for renderers and manifest consumers."""
        return {
            "task_id": self.task_id,
            "task_version": self.task.task_version,
            "instruction": self.task.instruction,
            "tick_hz": self.tick_hz,
            "objects": [
                {
                    "id": o.object_id,
                    "name": o.name,
                    "kind": o.kind,
                    "class": o.class_label,
                    "shape": o.shape.to_dict(),
                }
                for o in self.ordered_objects()
            ],
        }

    # -- stepping ----------------------------------------------------------

    def step(self, action, dt: float | None = None) -> None:
        """Advance one tick with a 26-dim joint command (already filtered)."""
        if dt is None:
            dt = self.dt
        if dt <= 0:
            raise ValueError("dt must be positive")
        action = self.model.clamp_action(action)
        self.joints = action
        containment = self._contained_in

        for side in ("left", "right"):
            hand = self.hands[side]
            arm = LEFT_ARM if side == "left" else RIGHT_ARM
            hand.prev_palm = hand.palm
            hand.palm = forward_kinematics(self.model.chain(side), self.joints[arm])

        self._step_conveyor(dt)

        moved: dict[int, tuple[PoseSE3, PoseSE3]] = {}
        for side in ("left", "right"):
            hand = self.hands[side]
            if hand.attached is not None:
                obj = self.objects[hand.attached]
                old = obj.pose
                obj.pose = compose(hand.palm, hand.grasp_offset)
                moved[obj.object_id] = (old, obj.pose)

        self._step_drawer(moved)

        # Contained free items ride their container's motion.
        for item_id, host_id in containment.items():
            if host_id in moved and self.objects[item_id].attached_to is None:
                old, new = moved[host_id]
                obj = self.objects[item_id]
                obj.pose = compose(new, compose(inverse(old), obj.pose))

        for side in ("left", "right"):
            self.try_grasp(side)

        self._step_spills(containment)
        self._step_berry_jitter(containment)
        self._contained_in = self._compute_containment()
        self.tick += 1
        self._update_trackers()

    def try_grasp(self, side: str) -> int | None:
        """Apply the closure-hysteresis attach/release rule for one hand."""
        hand = self.hands[side]
        closure = self.closure(side)
        cfg = self.task.grasp
        if hand.attached is not None:
            if closure < cfg.open_threshold:
                obj = self.objects[hand.attached]
                obj.attached_to = None
                hand.attached = None
                self.history.record(self.tick, "release", side, obj.object_id)
                self._settle(obj)
            return hand.attached
        if closure > cfg.close_threshold:
            best, best_d = None, cfg.radius
            for obj in self.ordered_objects():
                if obj.kind != "freeItem" or obj.attached_to is not None:
                    continue
                if obj.object_id in self._contained_in:
                    continue  # fingers would close on the container instead
                d = float(np.linalg.norm(obj.pose.position - hand.palm.position))
                if d <= best_d:
                    best, best_d = obj, d
            if best is not None:
                best.attached_to = side
                hand.attached = best.object_id
                hand.grasp_offset = compose(inverse(hand.palm), best.pose)
                if self.conveyor:
                    self.conveyor.riders.pop(best.object_id, None)
                self.history.record(self.tick, "attach", side, best.object_id)
                return best.object_id
        return hand.attached

    # -- internal mechanics ----------------------------------------------

    def _step_conveyor(self, dt: float) -> None:
        c = self.conveyor
        if c is None:
            return
        now = self.tick * dt
        belt = self.objects[c.belt_id]
        while c.spawned < len(c.pending) and c.pending[c.spawned]["time_s"] <= now:
            entry = c.pending[c.spawned]
            obj = self.objects[entry["object_id"]]
            pos = np.array([c.spawn_x, entry["y"], belt.top_z() + obj.shape.half_height()])
            obj.pose = PoseSE3(pos, obj.pose.orientation)
            c.riders[obj.object_id] = (pos.copy(), self.tick)
            self.history.record(self.tick, "spawn", "", obj.object_id)
            c.spawned += 1

        for oid, (ref, ref_tick) in list(c.riders.items()):
            obj = self.objects[oid]
            if obj.attached_to is not None:
                del c.riders[oid]
                continue
            # Multiplicative update: position is exactly ref + v * elapsed.
            new_pos = ref + c.velocity * ((self.tick + 1 - ref_tick) * dt)
            dx = new_pos[0] - belt.pose.position[0]
            dy = new_pos[1] - belt.pose.position[1]
            if belt.shape.footprint_contains(dx, dy):
                obj.pose = PoseSE3(new_pos, obj.pose.orientation)
            else:
                del c.riders[oid]  # rolled off the end; stops where it is

    def _step_drawer(self, moved: dict[int, tuple[PoseSE3, PoseSE3]]) -> None:
        d = self.drawer
        if d is None:
            return
        delta = 0.0
        for side in ("left", "right"):
            hand = self.hands[side]
            if self.closure(side) <= self.task.grasp.close_threshold:
                continue
            if hand.attached is not None:
                continue
            if d.handle_contains(hand.prev_palm.position):
                delta += float((hand.palm.position - hand.prev_palm.position) @ d.axis)
        if delta != 0.0:
            new_opening = float(np.clip(d.opening + delta, 0.0, d.max_travel))
            if new_opening != d.opening:
                tray = self.objects[d.tray_id]
                old = tray.pose
                d.opening = new_opening
                tray.pose = d.tray_pose()
                moved[d.tray_id] = (old, tray.pose)
        self.history.max_drawer_opening = max(self.history.max_drawer_opening, d.opening)

    def _step_spills(self, containment: dict[int, int]) -> None:
        for item_id, host_id in containment.items():
            host = self.objects[host_id]
            item = self.objects[item_id]
            if item.attached_to is not None:
                continue
            if host.tilt() > SPILL_TILT:
                # Contents exit at the mouth and drop onto whatever is below.
                mouth = host.pose.position + host.up_axis() * host.shape.half_height()
                item.pose = PoseSE3(mouth, item.pose.orientation)
                self.history.record(self.tick, "spill", "", item_id)
                self._settle(item, exclude={host_id})

    def _step_berry_jitter(self, containment: dict[int, int]) -> None:
        if self._jitter <= 0.0 or "berry" not in self.task.roles:
            return
        berry = self.object_by_role("berry")
        host_id = containment.get(berry.object_id)
        if berry.attached_to is not None or host_id is None:
            return
        host = self.objects[host_id]
        if host.interior is None:
            return
        delta = self._jitter_rng.uniform(-self._jitter, self._jitter, 2) * self.dt
        pos = berry.pose.position + np.array([delta[0], delta[1], 0.0])
        local = inverse(host.pose).apply(pos)
        if host.interior.footprint_contains(local[0], local[1]):
            berry.pose = PoseSE3(pos, berry.pose.orientation)

    def _compute_containment(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for item in self.ordered_objects():
            if item.kind != "freeItem":
                continue
            for host in self.ordered_objects():
                if host.object_id == item.object_id or host.interior is None:
                    continue
                if host.contains(item.pose.position):
                    out[item.object_id] = host.object_id
                    break
        return out

    def _settle(self, obj: SceneObject, exclude: set[int] | None = None) -> None:
        """Drop an object straight down onto the highest support below it."""
        x, y, z = obj.pose.position
        half = obj.shape.half_height()
        best = half  # table plane z = 0
        exclude = exclude or set()
        for other in self.ordered_objects():
            if other.object_id == obj.object_id or other.object_id in exclude:
                continue
            dx, dy = x - other.pose.position[0], y - other.pose.position[1]
            # A held cup can still receive contents, so attached objects stay
            # valid interior candidates; only their top surface is excluded.
            if other.interior is not None and other.tilt() < 0.7:
                local = inverse(other.pose).apply(np.array([x, y, z]))
                if other.interior.footprint_contains(local[0], local[1]):
                    rest = other.interior_bottom_z() + half
                    if best < rest <= z + SETTLE_SNAP:
                        best = rest
                        continue
            if other.attached_to is None and other.shape.footprint_contains(dx, dy):
                rest = other.top_z() + half
                if best < rest <= z + SETTLE_SNAP:
                    best = rest
        obj.pose = PoseSE3(np.array([x, y, best]), obj.pose.orientation)
        if self.conveyor is not None:
            belt = self.objects[self.conveyor.belt_id]
            dx, dy = x - belt.pose.position[0], y - belt.pose.position[1]
            on_belt = (
                belt.shape.footprint_contains(dx, dy)
                and abs(obj.bottom_z() - belt.top_z()) < 1e-6
            )
            if on_belt:
                self.conveyor.riders[obj.object_id] = (
                    obj.pose.position.copy(),
                    self.tick,
                )

    # -- per-task history trackers ------------------------------------------

    def _update_trackers(self) -> None:
        if self.task_id == "can_stacking":
            self._track_stacking()
        elif self.task_id == "cup_to_cup":
            self._track_transfer()

    def _track_stacking(self) -> None:
        ok, _ = self._stack_predicate()
        self.history.stack_stable_frames = self.history.stack_stable_frames + 1 if ok else 0

    def _stack_predicate(self) -> tuple[bool, dict]:
        p = self.task.predicate
        a = self.object_by_role("can_a")
        b = self.object_by_role("can_b")
        bottom, top = (a, b) if a.pose.position[2] <= b.pose.position[2] else (b, a)
        can_height = top.shape.dims[1]
        xy = float(np.linalg.norm(top.pose.position[:2] - bottom.pose.position[:2]))
        dz = abs(top.pose.position[2] - (bottom.pose.position[2] + can_height))
        released = top.attached_to is None and bottom.attached_to is None
        detail = {
            "xy_alignment": xy < p["stack_tol_xy"],
            "z_alignment": dz < p["stack_tol_z"],
            "released": released,
        }
        return all(detail.values()), detail

    def _track_transfer(self) -> None:
        h = self.history
        berry = self.object_by_role("berry")
        right_cup = self.task.roles["right_cup"]
        left_cup = self.task.roles["left_cup"]
        host = self._contained_in.get(berry.object_id)
        if h.berry_exit_tick is None:
            if host != right_cup:
                h.berry_exit_tick = self.tick
        if h.berry_exit_tick is not None and h.berry_enter_tick is None:
            lift = self.task.predicate["lift_height"]
            for role in ("left_cup", "right_cup"):
                cup = self.object_by_role(role)
                if cup.bottom_z() <= lift:
                    h.transfer_lift_ok = False
            if host == left_cup:
                h.berry_enter_tick = self.tick

    # -- success predicates -------------------------------------------------

    def evaluate_success(self) -> tuple[bool, dict]:
        """Task predicate over (final scene, history); pure, re-runnable."""
        fn = {
            "kitchen_cleanup": self._success_kitchen,
            "air_fryer": self._success_air_fryer,
            "can_stacking": self._success_stacking,
            "cup_to_cup": self._success_transfer,
            "assembly_line": self._success_sorting,
        }.get(self.task_id)
        if fn is None:
            raise UnknownTask(self.task_id)
        detail = fn()
        return all(detail.values()), detail

    def _success_kitchen(self) -> dict:
        item = self.object_by_role("item")
        basket = self.object_by_role("basket")
        left_t = self.history.first_event("attach", "left", item.object_id)
        right_t = self.history.first_event("attach", "right", item.object_id)
        return {
            "in_basket": basket.contains(item.pose.position),
            "released": item.attached_to is None,
            "handover_order": left_t is not None and right_t is not None and left_t < right_t,
        }

    def _success_air_fryer(self) -> dict:
        p = self.task.predicate
        d = self.drawer
        assert d is not None
        tray = self.objects[d.tray_id]
        food = self.object_by_role("food")
        return {
            "opened": self.history.max_drawer_opening > p["open_frac"] * d.max_travel,
            "food_inside": tray.contains(food.pose.position),
            "closed": d.opening < p["close_frac"] * d.max_travel,
        }

    def _success_stacking(self) -> dict:
        p = self.task.predicate
        _, detail = self._stack_predicate()
        detail["stable"] = self.history.stack_stable_frames >= p["stable_frames"]
        return detail

    def _success_transfer(self) -> dict:
        berry = self.object_by_role("berry")
        left_cup = self.task.roles["left_cup"]
        transferred = self._contained_in.get(berry.object_id) == left_cup
        return {
            "berry_in_left_cup": transferred,
            "transfer_complete": self.history.berry_enter_tick is not None,
            "cups_lifted": self.history.transfer_lift_ok,
        }

    def _success_sorting(self) -> dict:
        assert self.conveyor is not None
        boxes = {
            self.objects[oid].class_label: self.objects[oid]
            for role, oid in self.task.roles.items()
            if role.startswith("box_")
        }
        detail = {"all_spawned": self.conveyor.spawned == len(self.conveyor.pending)}
        for i, entry in enumerate(self.conveyor.pending):
            obj = self.objects[entry["object_id"]]
            box = boxes.get(obj.class_label)
            detail[f"item_{i + 1}_sorted"] = box is not None and box.contains(
                obj.pose.position
            )
        return detail


def reset_scene(
    task_id: str,
    seed: int,
    model: RobotModel | None = None,
    manifest_dir: str | Path | None = None,
) -> Scene:
    """Build the seeded initial scene for a task; identical seed, identical layout."""
    from .kinematics import load_robot_model

    manifest = load_manifest(task_id, manifest_dir)
    if model is None:
        model = load_robot_model()
    return Scene(model, manifest, seed)


def _task_index(task_id: str) -> int:
    return TASK_IDS.index(task_id)
