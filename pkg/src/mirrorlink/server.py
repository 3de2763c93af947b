"""WebSocket streaming server: teleop ingest, simulation tick loop, state
broadcast, latency echo, and in-band episode recording.

Three flows share state through freshest-value handoff cells: network
ingest threads (one per connection, owned by the websocket server), the
simulation tick thread, and broadcast (done from the tick thread; slow
observers are disconnected rather than ever blocking the tick).
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import protocol
from .dataset import EpisodeHeader, FrameRecord, build_index, record_episode, scene_ee_array, scene_object_poses
from .filtering import ArmCascade, FilterConfig, encode_filter_outcome
from .kinematics import (
    LEFT_ARM,
    LEFT_HAND,
    RIGHT_ARM,
    RIGHT_HAND,
    RobotModel,
    load_robot_model,
    map_fingers,
)
from .scene import Scene, reset_scene

log = logging.getLogger(__name__)

DEFAULT_PORT = 8765


class InsufficientSamples(RuntimeError):
    pass


def _now_micros() -> int:
    return int(time.monotonic() * 1e6)


@dataclass
class ConnectionCounters:
    received: int = 0
    dropped: int = 0
    out_of_order: int = 0
    decode_errors: int = 0

    def to_dict(self) -> dict:
        return {
            "received": self.received,
            "dropped": self.dropped,
            "outOfOrder": self.out_of_order,
            "decodeErrors": self.decode_errors,
        }


@dataclass
class _FreshCell:
    frame: protocol.TeleopFrame | None = None
    consumed: bool = True


class StreamServer:
    """One authoritative teleop client, any number of observers."""

    def __init__(
        self,
        bind: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        tick_hz: int = 120,
        task_id: str = "kitchen_cleanup",
        seed: int = 0,
        model: RobotModel | None = None,
        filter_cfg: FilterConfig | None = None,
        dataset_dir: str | Path | None = None,
        manifest_dir: str | Path | None = None,
        teleop_hz_expected: int = 90,
    ):
        self.bind = bind
        self.port = port
        self.tick_hz = tick_hz
        self.task_id = task_id
        self.seed = seed
        self.model = model or load_robot_model()
        self.filter_cfg = filter_cfg or FilterConfig()
        self.dataset_dir = Path(dataset_dir) if dataset_dir else None
        self.manifest_dir = manifest_dir
        self.teleop_hz_expected = teleop_hz_expected

        self._lock = threading.Lock()
        self._cell = _FreshCell()
        self._last_ingest_seq = -1
        self._last_consumed_seq = 0
        self._authoritative = None
        self._connections: dict[int, object] = {}
        self._counters: dict[int, ConnectionCounters] = {}
        self._next_conn_id = 1
        self._stop = threading.Event()
        self._ticks = 0
        self._consumed = 0
        self._server = None
        self._tick_thread: threading.Thread | None = None

        self._scene: Scene = reset_scene(task_id, seed, self.model, manifest_dir)
        self._cascades = self._fresh_cascades()
        self._command = self._scene.joints.copy()
        self._recording: list[FrameRecord] | None = None
        self._record_t0 = 0
        self._episodes_written: list[str] = []

    # -- lifecycle -------------------------------------------------------

    def start(self) -> "StreamServer":
        from websockets.sync.server import serve

        self._server = serve(self._handle_connection, self.bind, self.port)
        threading.Thread(target=self._server.serve_forever, daemon=True).start()
        self._tick_thread = threading.Thread(target=self._tick_loop, daemon=True)
        self._tick_thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._tick_thread:
            self._tick_thread.join(timeout=2)
        if self._server:
            self._server.shutdown()

    def __enter__(self) -> "StreamServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def url(self) -> str:
        return f"ws://{self.bind}:{self.port}"

    # -- connection handling ----------------------------------------------

    def _handle_connection(self, ws) -> None:
        with self._lock:
            conn_id = self._next_conn_id
            self._next_conn_id += 1
            self._connections[conn_id] = ws
            self._counters[conn_id] = ConnectionCounters()
        try:
            for raw in ws:
                if isinstance(raw, str):
                    raw = raw.encode("utf-8")
                try:
                    self._dispatch(conn_id, ws, raw)
                except protocol.ProtocolError as exc:
                    with self._lock:
                        self._counters[conn_id].decode_errors += 1
                    log.warning("closing connection %d on decode error: %s", conn_id, exc)
                    break
        except Exception:
            pass
        finally:
            with self._lock:
                self._connections.pop(conn_id, None)
                if self._authoritative == conn_id:
                    self._authoritative = None

    def _dispatch(self, conn_id: int, ws, raw: bytes) -> None:
        msg_type = protocol.peek_type(raw)
        if msg_type == protocol.MSG_TELEOP:
            frame = protocol.decode_teleop_frame(raw)
            self._ingest_teleop(conn_id, frame)
        elif msg_type == protocol.MSG_LATENCY_ECHO:
            ws.send(raw)  # reflect verbatim, off the tick path
        elif msg_type == protocol.MSG_CONTROL:
            seq, ts, payload = protocol.decode_control(raw)
            reply = self._handle_control(payload)
            ws.send(protocol.encode_control(seq, _now_micros(), reply))
        else:
            raise protocol.WrongType(f"unroutable msgType 0x{msg_type:02x}")

    def _ingest_teleop(self, conn_id: int, frame: protocol.TeleopFrame) -> None:
        with self._lock:
            if self._authoritative is None:
                self._authoritative = conn_id
            counters = self._counters[conn_id]
            if self._authoritative != conn_id:
                counters.dropped += 1  # observers do not command
                return
            counters.received += 1
            if frame.seq <= self._last_ingest_seq:
                counters.out_of_order += 1
                counters.dropped += 1
                return
            self._last_ingest_seq = frame.seq
            if not self._cell.consumed and self._cell.frame is not None:
                counters.dropped += 1  # superseded before the tick took it
            self._cell = _FreshCell(frame, consumed=False)

    # -- control channel ---------------------------------------------------

    def _handle_control(self, payload: dict) -> dict:
        if payload.get("stats"):
            return {"ok": True, **self.stats()}
        if payload.get("describe"):
            with self._lock:
                return {"ok": True, "scene": self._scene.describe()}
        if payload.get("reset"):
            seed = int(payload.get("seed", self.seed))
            task = payload.get("taskId", self.task_id)
            try:
                self._reset_scene(task, seed)
            except Exception as exc:
                return {"ok": False, "error": str(exc)}
            return {"ok": True, "taskId": task, "seed": seed}
        if payload.get("startEpisode"):
            seed = int(payload.get("seed", self.seed))
            task = payload.get("taskId", self.task_id)
            try:
                self._start_episode(task, seed)
            except Exception as exc:
                return {"ok": False, "error": str(exc)}
            return {"ok": True, "recording": True}
        if payload.get("endEpisode"):
            path = self._end_episode()
            if path is None:
                return {"ok": False, "error": "not recording"}
            return {"ok": True, "recording": False, "file": path}
        return {"ok": False, "error": "unrecognized control payload"}

    def _fresh_cascades(self) -> dict[str, ArmCascade]:
        return {
            side: ArmCascade(self.model.chain(side), self.filter_cfg, self._scene.joints[arm])
            for side, arm in (("left", LEFT_ARM), ("right", RIGHT_ARM))
        }

    def _reset_scene(self, task_id: str, seed: int) -> None:
        scene = reset_scene(task_id, seed, self.model, self.manifest_dir)
        with self._lock:
            self.task_id = task_id
            self.seed = seed
            self._scene = scene
            self._cascades = self._fresh_cascades()
            self._command = scene.joints.copy()
            self._recording = None

    def _start_episode(self, task_id: str, seed: int) -> None:
        self._reset_scene(task_id, seed)
        with self._lock:
            self._recording = []
            self._record_t0 = self._ticks

    def _end_episode(self) -> str | None:
        with self._lock:
            frames = self._recording
            self._recording = None
            scene = self._scene
        if frames is None:
            return None
        success, _ = scene.evaluate_success()
        header = EpisodeHeader(
            task_id=scene.task_id,
            seed=scene.seed,
            instruction=scene.task.instruction,
            object_count=len(scene.objects),
            frame_count=len(frames),
            tick_hz=self.tick_hz,
            model_version=self.model.model_version,
            task_version=scene.task.task_version,
            object_ids=[o.object_id for o in scene.ordered_objects()],
            success=bool(success),
        )
        out_dir = self.dataset_dir or Path.cwd()
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{scene.task_id}_seed{scene.seed:06d}_{int(time.time())}.bin"
        record_episode(frames, header, path)
        build_index(out_dir)
        self._episodes_written.append(str(path))
        return str(path)

    # -- simulation tick -----------------------------------------------------

    def _apply_teleop(self, frame: protocol.TeleopFrame) -> None:
        command = self._command.copy()
        reports = {}
        for side, hand_state, arm, hand in (
            ("left", frame.left, LEFT_ARM, LEFT_HAND),
            ("right", frame.right, RIGHT_ARM, RIGHT_HAND),
        ):
            report = self._cascades[side].step(hand_state.pose(), hand_state.clutch_engaged)
            reports[side] = report
            command[arm] = report.joints
            command[hand] = map_fingers(
                hand_state.fingers, self.model.hand_lower, self.model.hand_upper
            )
        self._command = command.astype(np.float32).astype(np.float64)
        self._last_outcome = encode_filter_outcome(reports["left"], reports["right"])
        flags = frame.left.flags | frame.right.flags
        if flags & protocol.FLAG_EPISODE_START and self._recording is None:
            self._start_episode(self.task_id, self.seed)
        elif flags & protocol.FLAG_EPISODE_END and self._recording is not None:
            self._end_episode()

    _last_outcome = 0

    def _tick_loop(self) -> None:
        period = 1.0 / self.tick_hz
        next_deadline = time.monotonic() + period
        while not self._stop.is_set():
            now = time.monotonic()
            if now < next_deadline:
                time.sleep(min(next_deadline - now, period))
                continue
            next_deadline += period
            if next_deadline < now - 1.0:
                next_deadline = now + period  # fell far behind; resync
            self._tick_once()

    def _tick_once(self) -> None:
        with self._lock:
            cell = self._cell
            if not cell.consumed and cell.frame is not None:
                cell.consumed = True
                frame = cell.frame
                self._last_consumed_seq = frame.seq
                self._consumed += 1
            else:
                frame = None
            scene = self._scene
        if frame is not None:
            self._apply_teleop(frame)
        scene.step(self._command)
        self._ticks += 1
        if self._recording is not None:
            self._recording.append(
                FrameRecord(
                    timestamp_micros=int((self._ticks - self._record_t0) * 1e6 / self.tick_hz),
                    joint_state=scene.joints.astype(np.float32),
                    action=self._command.astype(np.float32),
                    ee_poses=scene_ee_array(scene),
                    object_poses=scene_object_poses(scene),
                    filter_outcome=self._last_outcome,
                )
            )
        state = protocol.StateFrame(
            seq=self._ticks,
            timestamp_micros=_now_micros(),
            echo_seq=self._last_consumed_seq,
            joint_state=tuple(np.asarray(scene.joints, dtype=np.float32)),
            ee_poses=tuple(scene_ee_array(scene)),
            object_poses=tuple(
                protocol.ObjectPose(o.object_id, tuple(o.pose.as_array()))
                for o in scene.ordered_objects()
            ),
        )
        raw = protocol.encode_state_frame(state)
        with self._lock:
            targets = list(self._connections.items())
        for conn_id, ws in targets:
            try:
                ws.send(raw)
            except Exception:
                with self._lock:
                    self._connections.pop(conn_id, None)

    # -- monitoring ------------------------------------------------------------

    def stats(self) -> dict:
        with self._lock:
            return {
                "ticks": self._ticks,
                "consumed": self._consumed,
                "lastConsumedSeq": self._last_consumed_seq,
                "recording": self._recording is not None,
                "taskId": self.task_id,
                "seed": self.seed,
                "tickHz": self.tick_hz,
                "connections": {
                    str(cid): c.to_dict() for cid, c in self._counters.items()
                },
                "episodesWritten": list(self._episodes_written),
            }


@dataclass
class LatencyStats:
    mean_us: float
    p50_us: float
    p99_us: float
    samples: int

    def to_dict(self) -> dict:
        return {
            "mean_us": self.mean_us,
            "p50_us": self.p50_us,
            "p99_us": self.p99_us,
            "samples": self.samples,
        }


class TeleopClient:
    """Synthetic desktop teleop sender with latency instrumentation."""

    def __init__(self, url: str, open_timeout: float = 5.0):
        from websockets.sync.client import connect

        self._ws = connect(url, open_timeout=open_timeout)
        self._seq = 0
        self._send_times: dict[int, int] = {}
        self._lock = threading.Lock()
        self._samples: list[float] = []
        self._echo_times: list[tuple[int, int]] = []
        self._matched = set()
        self._rx = threading.Thread(target=self._recv_loop, daemon=True)
        self._stop = threading.Event()
        self._rx.start()

    def close(self) -> None:
        self._stop.set()
        try:
            self._ws.close()
        except Exception:
            pass

    def send_frame(self, frame: protocol.TeleopFrame) -> None:
        with self._lock:
            self._send_times[frame.seq] = _now_micros()
        self._ws.send(protocol.encode_teleop_frame(frame))

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _recv_loop(self) -> None:
        try:
            for raw in self._ws:
                if isinstance(raw, str):
                    continue
                if protocol.peek_type(raw) != protocol.MSG_STATE:
                    continue
                state = protocol.decode_state_frame(raw)
                now = _now_micros()
                with self._lock:
                    seq = state.echo_seq
                    if seq in self._send_times and seq not in self._matched:
                        self._matched.add(seq)
                        one_way = (now - self._send_times[seq]) / 2.0
                        if one_way >= 0:
                            self._samples.append(one_way)
                        # server-side tick timestamp: measures consumption
                        # cadence without client scheduling noise
                        self._echo_times.append((seq, state.timestamp_micros))
        except Exception:
            pass

    def run_stream(
        self,
        rate_hz: float,
        duration_s: float,
        pose_fn=None,
        clutch: bool = False,
    ) -> int:
        """Stream synthetic frames at a fixed rate; returns frames sent."""
        period = 1.0 / rate_hz
        deadline = time.monotonic()
        end = deadline + duration_s
        sent = 0
        while time.monotonic() < end:
            seq = self.next_seq()
            t = _now_micros()
            left = right = protocol.HandState(
                flags=protocol.FLAG_CLUTCH if clutch else 0
            )
            if pose_fn is not None:
                left, right = pose_fn(seq)
            self._ws.send(
                protocol.encode_teleop_frame(protocol.TeleopFrame(seq, t, left, right))
            )
            with self._lock:
                self._send_times[seq] = t
            sent += 1
            deadline += period
            sleep = deadline - time.monotonic()
            if sleep > 0:
                time.sleep(sleep)
        return sent

    def latency(self, n: int, warmup: int = 10, timeout_s: float = 30.0) -> LatencyStats:
        """One-way latency from echoSeq timestamp matching.

        Excludes the first `warmup` samples; raises InsufficientSamples if
        fewer than n echoes are observed before the timeout.
        """
        end = time.monotonic() + timeout_s
        while time.monotonic() < end:
            with self._lock:
                if len(self._samples) >= n + warmup:
                    break
            time.sleep(0.01)
        with self._lock:
            samples = list(self._samples[warmup:])
        if len(samples) < n:
            raise InsufficientSamples(
                f"observed {len(samples)} usable echoes, needed {n}"
            )
        arr = np.array(samples[:n])
        return LatencyStats(
            mean_us=float(arr.mean()),
            p50_us=float(np.percentile(arr, 50)),
            p99_us=float(np.percentile(arr, 99)),
            samples=len(arr),
        )

def control_request(url: str, payload: dict, timeout_s: float = 5.0) -> dict:
    """One-shot ControlMsg request/reply against a running server."""
    from websockets.sync.client import connect

    with connect(url, open_timeout=timeout_s) as ws:
        ws.send(protocol.encode_control(0, _now_micros(), payload))
        while True:
            raw = ws.recv(timeout=timeout_s)
            if isinstance(raw, str):
                raw = raw.encode("utf-8")
            if protocol.peek_type(raw) == protocol.MSG_CONTROL:
                _, _, reply = protocol.decode_control(raw)
                return reply


def measure_latency(
    url: str, n: int = 200, rate_hz: float = 90.0, warmup: int = 10
) -> LatencyStats:
    """Run a synthetic sender against a server and report one-way latency."""
    client = TeleopClient(url)
    try:
        duration = (n + warmup + 20) / rate_hz
        client.run_stream(rate_hz, duration)
        return client.latency(n, warmup=warmup, timeout_s=duration + 10)
    finally:
        client.close()
