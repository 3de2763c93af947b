"""Closed-loop policy execution: action chunks, temporal ensembling, and the
wire adapter that lets external policy processes drive the loop.

A policy receives an Observation every `chunk_every` ticks and answers with
a chunk of future actions. Overlapping chunk predictions for the same tick
are blended with exponentially decaying weights (oldest chunk weighted
highest); each blended action then passes through the joint-jump filter
before the simulator executes it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .filtering import ArmCascade, FilterConfig, encode_filter_outcome
from .geometry import PoseSE3
from .kinematics import ACTION_DIM, LEFT_ARM, LEFT_HAND, RIGHT_ARM, RIGHT_HAND
from .protocol import MSG_CONTROL, decode_control, encode_control, peek_type
from .scene import Scene


class NoPredictionAvailable(LookupError):
    pass


class PolicyTimeout(RuntimeError):
    """Policy missed its deadline; the loop holds and keeps going."""


class PolicyProtocolError(RuntimeError):
    """Malformed policy response; fatal for the trial."""


@dataclass(frozen=True)
class Observation:
    joint_state: np.ndarray  # 26
    ee_left: PoseSE3
    ee_right: PoseSE3
    object_poses: tuple[tuple[int, PoseSE3], ...]
    instruction: str
    tick_index: int

    def object_pose(self, object_id: int) -> PoseSE3:
        for oid, pose in self.object_poses:
            if oid == object_id:
                return pose
        raise KeyError(f"no object {object_id} in observation")


def observe(scene: Scene, tick_index: int) -> Observation:
    return Observation(
        joint_state=scene.joints.copy(),
        ee_left=scene.ee_pose("left"),
        ee_right=scene.ee_pose("right"),
        object_poses=tuple((o.object_id, o.pose) for o in scene.ordered_objects()),
        instruction=scene.task.instruction,
        tick_index=tick_index,
    )


@dataclass
class ActionChunk:
    start_tick: int
    actions: np.ndarray  # (H, 26)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=float).reshape(-1, ACTION_DIM)
        if self.horizon < 1:
            raise ValueError("chunk horizon must be >= 1")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def covers(self, tick: int) -> bool:
        return self.start_tick <= tick < self.start_tick + self.horizon


class EnsembleBuffer:
    """Blends overlapping chunk predictions with weights exp(-m * age)."""

    def __init__(self, decay: float = 0.1):
        if decay < 0:
            raise ValueError("decay must be >= 0")
        self.decay = decay
        self._chunks: list[ActionChunk] = []

    def add(self, chunk: ActionChunk) -> None:
        if self._chunks and chunk.start_tick < self._chunks[-1].start_tick:
            raise ValueError("chunks must arrive with non-decreasing start_tick")
        self._chunks.append(chunk)

    def predictions_for(self, tick: int) -> list[np.ndarray]:
        """Predicted actions for a tick, oldest chunk first."""
        return [c.actions[tick - c.start_tick] for c in self._chunks if c.covers(tick)]

    def step(self, tick: int) -> np.ndarray:
        self._chunks = [c for c in self._chunks if c.start_tick + c.horizon > tick]
        preds = self.predictions_for(tick)
        if not preds:
            raise NoPredictionAvailable(f"no chunk covers tick {tick}")
        weights = np.array([math.exp(-self.decay * k) for k in range(len(preds))])
        return np.average(np.stack(preds), axis=0, weights=weights)


class Policy:
    """Interface for closed-loop policies; in-process ones run synchronously."""

    synchronous = True

    def reset(self) -> None:  # pragma: no cover - default no-op
        pass

    def predict(self, obs: Observation) -> ActionChunk:
        raise NotImplementedError


class NullPolicy(Policy):
    """Always commands the zero action; useful as a failure baseline."""

    def __init__(self, horizon: int = 16):
        self.horizon = horizon

    def predict(self, obs: Observation) -> ActionChunk:
        return ActionChunk(obs.tick_index, np.zeros((self.horizon, ACTION_DIM)))


class HoldPolicy(Policy):
    """Repeats the current joint state, keeping the robot still."""

    def __init__(self, horizon: int = 16):
        self.horizon = horizon

    def predict(self, obs: Observation) -> ActionChunk:
        return ActionChunk(
            obs.tick_index, np.tile(obs.joint_state, (self.horizon, 1))
        )


@dataclass(frozen=True)
class ClosedLoopConfig:
    chunk_every: int = 8
    horizon: int = 16
    max_ticks: int = 1200
    decay: float = 0.1
    filter: FilterConfig = field(default_factory=FilterConfig)
    policy_timeout_s: float = 1.0


@dataclass
class ClosedLoopResult:
    success: bool
    detail: dict
    ticks: int
    timeouts: int
    protocol_error: bool
    frames: list  # FrameRecord list when recording was requested
    scene: Scene


def _observation_payload(obs: Observation) -> dict:
    return {
        "tickIndex": obs.tick_index,
        "instruction": obs.instruction,
        "jointState": [float(v) for v in obs.joint_state],
        "eePoses": {
            "left": [float(v) for v in obs.ee_left.as_array()],
            "right": [float(v) for v in obs.ee_right.as_array()],
        },
        "objectPoses": [
            {"id": oid, "pose": [float(v) for v in pose.as_array()]}
            for oid, pose in obs.object_poses
        ],
        "imageBlob": None,  # reserved for renderer-attached observations
    }


def chunk_from_payload(payload: dict) -> ActionChunk:
    try:
        start = int(payload["startTick"])
        actions = np.asarray(payload["actions"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyProtocolError(f"bad chunk payload: {exc}") from exc
    if actions.ndim != 2 or actions.shape[1] != ACTION_DIM:
        raise PolicyProtocolError(
            f"chunk actions must be H x {ACTION_DIM}, got {actions.shape}"
        )
    return ActionChunk(start, actions)


class ExternalPolicy(Policy):
    """Bridges to a policy process over the ControlMsg JSON channel.

    One outstanding request at a time; connect/timeout errors surface as
    PolicyTimeout, malformed responses as PolicyProtocolError.
    """

    synchronous = True  # request/response is blocking with a deadline

    def __init__(self, endpoint: str, timeout_s: float = 1.0):
        from websockets.sync.client import connect

        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self._seq = 0
        try:
            self._sock = connect(endpoint, open_timeout=timeout_s)
        except Exception as exc:
            raise PolicyTimeout(f"cannot reach policy endpoint {endpoint}: {exc}") from exc

    def close(self) -> None:
        try:
            self._sock.close()
        except Exception:
            pass

    def predict(self, obs: Observation) -> ActionChunk:
        self._seq += 1
        msg = encode_control(
            self._seq, int(time.monotonic() * 1e6), _observation_payload(obs)
        )
        try:
            self._sock.send(msg)
            raw = self._sock.recv(timeout=self.timeout_s)
        except TimeoutError as exc:
            raise PolicyTimeout(f"policy did not answer within {self.timeout_s}s") from exc
        except Exception as exc:
            raise PolicyTimeout(f"policy connection failed: {exc}") from exc
        if isinstance(raw, str):
            raw = raw.encode("utf-8")
        try:
            if peek_type(raw) != MSG_CONTROL:
                raise PolicyProtocolError("policy reply is not a ControlMsg")
            _, _, payload = decode_control(raw)
        except PolicyProtocolError:
            raise
        except Exception as exc:
            raise PolicyProtocolError(f"undecodable policy reply: {exc}") from exc
        return chunk_from_payload(payload)


def run_closed_loop(
    scene: Scene,
    policy: Policy,
    cfg: ClosedLoopConfig,
    record: bool = True,
) -> ClosedLoopResult:
    """Drive one trial: chunk requests, ensembling, filtering, stepping.

    Terminates on the task success predicate or at max_ticks. Policy
    timeouts hold the previous command; protocol errors end the trial as a
    failure.
    """
    from .dataset import FrameRecord, scene_ee_array, scene_object_poses

    policy.reset()
    buffer = EnsembleBuffer(cfg.decay)
    cascades = {
        side: ArmCascade(scene.model.chain(side), cfg.filter, scene.joints[arm])
        for side, arm in (("left", LEFT_ARM), ("right", RIGHT_ARM))
    }
    held = scene.joints.copy()
    frames: list = []
    timeouts = 0
    protocol_error = False
    success, detail = scene.evaluate_success()
    ticks = 0
    micros_per_tick = 1_000_000 / scene.tick_hz

    for tick in range(cfg.max_ticks):
        if tick % cfg.chunk_every == 0:
            obs = observe(scene, tick)
            try:
                buffer.add(policy.predict(obs))
            except PolicyTimeout:
                timeouts += 1
            except PolicyProtocolError:
                protocol_error = True
                break
        try:
            proposal = buffer.step(tick)
        except NoPredictionAvailable:
            proposal = held

        command = np.empty(ACTION_DIM)
        left = cascades["left"].step_joints(proposal[LEFT_ARM])
        right = cascades["right"].step_joints(proposal[RIGHT_ARM])
        command[LEFT_ARM] = left.joints
        command[RIGHT_ARM] = right.joints
        command[LEFT_HAND] = np.clip(
            proposal[LEFT_HAND], scene.model.hand_lower, scene.model.hand_upper
        )
        command[RIGHT_HAND] = np.clip(
            proposal[RIGHT_HAND], scene.model.hand_lower, scene.model.hand_upper
        )
        # Quantize to wire precision before executing so that recorded
        # episodes replay bit-identically.
        command = command.astype(np.float32).astype(np.float64)
        held = command

        scene.step(command)
        ticks = tick + 1
        if record:
            frames.append(
                FrameRecord(
                    timestamp_micros=int((tick + 1) * micros_per_tick),
                    joint_state=scene.joints.astype(np.float32),
                    action=command.astype(np.float32),
                    ee_poses=scene_ee_array(scene),
                    object_poses=scene_object_poses(scene),
                    filter_outcome=encode_filter_outcome(left, right),
                )
            )
        success, detail = scene.evaluate_success()
        if success:
            break

    if protocol_error:
        success, detail = False, {"policy_ok": False}
    return ClosedLoopResult(success, detail, ticks, timeouts, protocol_error, frames, scene)
