"""Bit-exact episode recording, replay, and dataset indexing.

One file per episode: a single JSON header line, then fixed-stride binary
frame blocks (little-endian). Writers go through a temp file + rename so
readers never observe a partial episode. An opt-in length-prefixed blob
channel lets an external renderer attach per-frame observations without a
format change.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene import Scene, reset_scene

FORMAT_NAME = "mirrorlink-episode"
FORMAT_VERSION = 1
EPISODE_SUFFIX = ".bin"
INDEX_NAME = "index.json"

REPLAY_TOL = 1e-6  # covers the f64 -> f32 storage cast


class NonMonotoneTimestamp(ValueError):
    pass


class VersionMismatch(RuntimeError):
    pass


class DivergenceDetected(RuntimeError):
    def __init__(self, frame_index: int, message: str = ""):
        super().__init__(message or f"replay diverged at frame {frame_index}")
        self.frame_index = frame_index


@dataclass
class FrameRecord:
    timestamp_micros: int
    joint_state: np.ndarray  # 26 f32
    action: np.ndarray  # 26 f32
    ee_poses: np.ndarray  # 14 f32, left then right (x y z qw qx qy qz)
    object_poses: np.ndarray  # (N, 7) f32, ordered as header object_ids
    filter_outcome: int = 0
    blob: bytes | None = None

    def __post_init__(self):
        self.joint_state = np.asarray(self.joint_state, dtype=np.float32).reshape(26)
        self.action = np.asarray(self.action, dtype=np.float32).reshape(26)
        self.ee_poses = np.asarray(self.ee_poses, dtype=np.float32).reshape(14)
        self.object_poses = np.asarray(self.object_poses, dtype=np.float32).reshape(-1, 7)


@dataclass
class EpisodeHeader:
    task_id: str
    seed: int
    instruction: str
    object_count: int
    frame_count: int
    tick_hz: int
    model_version: str
    task_version: str
    object_ids: list[int] = field(default_factory=list)
    success: bool | None = None
    blob_channel: bool = False

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.tick_hz

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": FORMAT_NAME,
                "format_version": FORMAT_VERSION,
                "task_id": self.task_id,
                "seed": self.seed,
                "instruction": self.instruction,
                "object_count": self.object_count,
                "frame_count": self.frame_count,
                "tick_hz": self.tick_hz,
                "model_version": self.model_version,
                "task_version": self.task_version,
                "object_ids": self.object_ids,
                "success": self.success,
                "blob_channel": self.blob_channel,
            },
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(line: str) -> "EpisodeHeader":
        d = json.loads(line)
        if d.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} file")
        if d.get("format_version") != FORMAT_VERSION:
            raise VersionMismatch(f"unsupported episode format version {d.get('format_version')}")
        return EpisodeHeader(
            task_id=d["task_id"],
            seed=d["seed"],
            instruction=d["instruction"],
            object_count=d["object_count"],
            frame_count=d["frame_count"],
            tick_hz=d["tick_hz"],
            model_version=d["model_version"],
            task_version=d["task_version"],
            object_ids=list(d.get("object_ids", [])),
            success=d.get("success"),
            blob_channel=d.get("blob_channel", False),
        )


def frame_stride(object_count: int) -> int:
    return 8 + 26 * 4 + 26 * 4 + 14 * 4 + object_count * 30 + 1


def _pack_frame(f: FrameRecord, header: EpisodeHeader) -> bytes:
    object_count = header.object_count
    if f.object_poses.shape[0] != object_count:
        raise ValueError(
            f"frame has {f.object_poses.shape[0]} object poses, header says {object_count}"
        )
    ids = header.object_ids or list(range(object_count))
    parts = [
        struct.pack("<Q", f.timestamp_micros),
        f.joint_state.tobytes(),
        f.action.tobytes(),
        f.ee_poses.tobytes(),
    ]
    for i in range(object_count):
        parts.append(struct.pack("<H", ids[i]))
        parts.append(f.object_poses[i].tobytes())
    parts.append(struct.pack("<B", f.filter_outcome))
    return b"".join(parts)


def _unpack_frame(buf: bytes, off: int, object_count: int) -> tuple[FrameRecord, int]:
    (ts,) = struct.unpack_from("<Q", buf, off)
    off += 8
    joints = np.frombuffer(buf, np.float32, 26, off).copy()
    off += 104
    action = np.frombuffer(buf, np.float32, 26, off).copy()
    off += 104
    ee = np.frombuffer(buf, np.float32, 14, off).copy()
    off += 56
    poses = np.empty((object_count, 7), dtype=np.float32)
    for i in range(object_count):
        off += 2  # slot index
        poses[i] = np.frombuffer(buf, np.float32, 7, off)
        off += 28
    (outcome,) = struct.unpack_from("<B", buf, off)
    off += 1
    return FrameRecord(ts, joints, action, ee, poses, outcome), off


def record_episode(frames, header: EpisodeHeader, path: str | Path) -> str:
    """Write an episode file atomically; returns the SHA-256 of the body."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    digest = hashlib.sha256()
    count = 0
    last_ts = -1
    try:
        with open(tmp, "wb") as fh:
            header_line = header.to_json().encode("utf-8") + b"\n"
            fh.write(header_line)
            for f in frames:
                if f.timestamp_micros <= last_ts:
                    raise NonMonotoneTimestamp(
                        f"frame {count} timestamp {f.timestamp_micros} <= {last_ts}"
                    )
                last_ts = f.timestamp_micros
                block = _pack_frame(f, header)
                if header.blob_channel:
                    blob = f.blob or b""
                    block += struct.pack("<I", len(blob)) + blob
                fh.write(block)
                digest.update(block)
                count += 1
        if count != header.frame_count:
            raise ValueError(f"header declares {header.frame_count} frames, wrote {count}")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return digest.hexdigest()


def read_episode(path: str | Path) -> tuple[EpisodeHeader, list[FrameRecord]]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = EpisodeHeader.from_json(raw[:nl].decode("utf-8"))
    body = raw[nl + 1 :]
    frames = []
    off = 0
    for _ in range(header.frame_count):
        frame, off = _unpack_frame(body, off, header.object_count)
        if header.blob_channel:
            (blen,) = struct.unpack_from("<I", body, off)
            off += 4
            frame.blob = bytes(body[off : off + blen])
            off += blen
        frames.append(frame)
    if off != len(body):
        raise ValueError(
            f"episode body is {len(body)} bytes; frame_count implies {off}"
        )
    return header, frames


def read_header(path: str | Path) -> EpisodeHeader:
    with open(path, "rb") as fh:
        return EpisodeHeader.from_json(fh.readline().decode("utf-8"))


def body_digest(path: str | Path) -> str:
    raw = Path(path).read_bytes()
    return hashlib.sha256(raw[raw.index(b"\n") + 1 :]).hexdigest()


def scene_object_poses(scene: Scene) -> np.ndarray:
    """(N, 7) f32 pose array in header order (ascending object id)."""
    return np.array(
        [obj.pose.as_array() for obj in scene.ordered_objects()], dtype=np.float32
    ).reshape(-1, 7)


def scene_ee_array(scene: Scene) -> np.ndarray:
    return np.concatenate(
        [scene.ee_pose("left").as_array(), scene.ee_pose("right").as_array()]
    ).astype(np.float32)


@dataclass
class ReplayResult:
    success_replayed: bool
    success_recorded: bool | None
    frames: int
    detail: dict
    scene: Scene


def replay_episode(
    path: str | Path,
    manifest_dir: str | Path | None = None,
    model=None,
    tolerance: float = REPLAY_TOL,
) -> ReplayResult:
    """Re-drive the simulator with the recorded actions and check every frame.

    Raises VersionMismatch before stepping if the loaded manifests do not
    match the header, and DivergenceDetected at the first frame whose object
    poses drift beyond the tolerance.
    """
    from .kinematics import load_robot_model

    header, frames = read_episode(path)
    if model is None:
        model = load_robot_model()
    scene = reset_scene(header.task_id, header.seed, model, manifest_dir)
    if scene.task.task_version != header.task_version:
        raise VersionMismatch(
            f"episode recorded under task_version {header.task_version}, "
            f"loaded manifest is {scene.task.task_version}"
        )
    if model.model_version != header.model_version:
        raise VersionMismatch(
            f"episode recorded under model_version {header.model_version}, "
            f"loaded model is {model.model_version}"
        )
    for i, frame in enumerate(frames):
        scene.step(frame.action.astype(np.float64))
        replayed = scene_object_poses(scene)
        if not np.allclose(replayed, frame.object_poses, rtol=0.0, atol=tolerance):
            raise DivergenceDetected(i)
    success, detail = scene.evaluate_success()
    return ReplayResult(success, header.success, len(frames), detail, scene)


def episode_files(dataset_dir: str | Path) -> list[Path]:
    return sorted(Path(dataset_dir).glob(f"*{EPISODE_SUFFIX}"))


def build_index(dataset_dir: str | Path, name: str | None = None) -> dict:
    """Scan a dataset directory and (re)write its index.json."""
    dataset_dir = Path(dataset_dir)
    episodes = []
    per_task: dict[str, int] = {}
    for path in episode_files(dataset_dir):
        header = read_header(path)
        episodes.append(
            {
                "file": path.name,
                "task_id": header.task_id,
                "seed": header.seed,
                "frames": header.frame_count,
                "duration_s": round(header.duration_s, 3),
                "success": header.success,
                "digest": body_digest(path),
            }
        )
        per_task[header.task_id] = per_task.get(header.task_id, 0) + 1
    index = {
        "dataset": name or dataset_dir.name,
        "episodes": episodes,
        "per_task": dict(sorted(per_task.items())),
        "total": len(episodes),
    }
    (dataset_dir / INDEX_NAME).write_text(json.dumps(index, indent=2) + "\n")
    return index


def load_index(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / INDEX_NAME
    if path.exists():
        return json.loads(path.read_text())
    return build_index(dataset_dir)


def dataset_stats(index: dict) -> dict:
    """Per-task trajectory counts, total, and mean duration (header-derived)."""
    episodes = index.get("episodes", [])
    durations = [e["duration_s"] for e in episodes]
    per_task: dict[str, int] = {}
    for e in episodes:
        per_task[e["task_id"]] = per_task.get(e["task_id"], 0) + 1
    return {
        "per_task": dict(sorted(per_task.items())),
        "total": len(episodes),
        "mean_duration_s": round(float(np.mean(durations)), 3) if durations else 0.0,
        "successes": sum(1 for e in episodes if e.get("success")),
    }
