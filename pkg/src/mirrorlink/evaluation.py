"""Batched closed-loop evaluation: per-task trial counts, success-rate
tables, skill-level aggregation, and the spawn-position heatmap tool.

Seeds are pre-assigned per trial so any parallelization order produces a
byte-identical report.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .scene import TASK_IDS, UnknownTask, reset_scene

# Protocol trial counts per task.
DEFAULT_TRIALS = {
    "kitchen_cleanup": 400,
    "air_fryer": 400,
    "can_stacking": 400,
    "cup_to_cup": 200,
    "assembly_line": 100,
}

# Tasks in the table's row order, with display names.
TASK_DISPLAY = [
    ("kitchen_cleanup", "Kitchen Cleanup"),
    ("air_fryer", "Air Fryer Manipulation"),
    ("assembly_line", "Assembly Line Sorting"),
    ("cup_to_cup", "Cup-to-Cup Transfer"),
    ("can_stacking", "Can Stacking"),
]

# Which tasks assess which core skill.
DEFAULT_SKILL_MAP = {
    "Pick and Place": ["kitchen_cleanup", "air_fryer", "assembly_line", "can_stacking"],
    "Dual-arm collaboration": ["kitchen_cleanup", "air_fryer", "assembly_line", "cup_to_cup"],
    "Push and Pull": ["air_fryer"],
    "Dynamic grasping": ["assembly_line"],
    "Precision control": ["cup_to_cup", "can_stacking"],
}

DEFAULT_MAX_TICKS = {
    "kitchen_cleanup": 1200,
    "air_fryer": 1500,
    "can_stacking": 1200,
    "cup_to_cup": 1400,
    "assembly_line": 1800,
}


def round_rate(value: float) -> float:
    """Round half-up to two decimals, the table's convention."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class TaskPlan:
    task_id: str
    trials: int
    seed_base: int = 0
    max_ticks: int = 0

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise UnknownTask(self.task_id)
        if self.trials <= 0:
            raise ValueError("trials must be positive")
        if self.max_ticks <= 0:
            self.max_ticks = DEFAULT_MAX_TICKS[self.task_id]

    def seeds(self) -> range:
        return range(self.seed_base, self.seed_base + self.trials)


@dataclass
class EvalPlan:
    tasks: list[TaskPlan]
    policy: str = "oracle"
    jobs: int = 1
    chunk_every: int = 8
    horizon: int = 16
    decay: float = 0.1

    @staticmethod
    def default(trials: dict[str, int] | None = None, policy: str = "oracle", **kw) -> "EvalPlan":
        counts = trials or DEFAULT_TRIALS
        return EvalPlan(
            tasks=[TaskPlan(t, counts[t]) for t, _ in TASK_DISPLAY if t in counts],
            policy=policy,
            **kw,
        )

    @staticmethod
    def from_dict(d: dict) -> "EvalPlan":
        known = {"tasks", "policy", "jobs", "chunk_every", "horizon", "decay"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        tasks = [
            TaskPlan(
                t["task_id"],
                t["trials"],
                t.get("seed_base", 0),
                t.get("max_ticks", 0),
            )
            for t in d["tasks"]
        ]
        return EvalPlan(
            tasks=tasks,
            policy=d.get("policy", "oracle"),
            jobs=d.get("jobs", 1),
            chunk_every=d.get("chunk_every", 8),
            horizon=d.get("horizon", 16),
            decay=d.get("decay", 0.1),
        )


@dataclass
class TrialRecord:
    task_id: str
    seed: int
    success: bool
    ticks: int
    spawn: tuple[float, float]
    timeouts: int = 0
    error: str = ""
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "seed": self.seed,
            "success": self.success,
            "ticks": self.ticks,
            "spawn": [self.spawn[0], self.spawn[1]],
            "timeouts": self.timeouts,
            "error": self.error,
            "detail": {k: bool(v) for k, v in self.detail.items()},
        }


_WORKER_MODEL = None


def _get_model():
    global _WORKER_MODEL
    if _WORKER_MODEL is None:
        from .kinematics import load_robot_model

        _WORKER_MODEL = load_robot_model()
    return _WORKER_MODEL


def _make_policy(spec: str, scene, model, plan_cfg: dict):
    from .oracle import make_oracle
    from .policy import ExternalPolicy, HoldPolicy, NullPolicy

    if spec == "oracle":
        return make_oracle(scene, model, plan_cfg["horizon"], plan_cfg["chunk_every"])
    if spec == "null":
        return NullPolicy(plan_cfg["horizon"])
    if spec == "hold":
        return HoldPolicy(plan_cfg["horizon"])
    if spec.startswith("external:"):
        return ExternalPolicy(spec.split(":", 1)[1])
    raise ValueError(f"unknown policy spec {spec!r}")


def run_trial(
    task_id: str,
    seed: int,
    policy_spec: str = "oracle",
    max_ticks: int = 0,
    chunk_every: int = 8,
    horizon: int = 16,
    decay: float = 0.1,
) -> TrialRecord:
    from .policy import ClosedLoopConfig, PolicyTimeout, run_closed_loop

    model = _get_model()
    scene = reset_scene(task_id, seed, model)
    plan_cfg = {"horizon": horizon, "chunk_every": chunk_every}
    if max_ticks <= 0:
        max_ticks = DEFAULT_MAX_TICKS[task_id]
    try:
        policy = _make_policy(policy_spec, scene, model, plan_cfg)
    except PolicyTimeout as exc:
        return TrialRecord(task_id, seed, False, 0, scene.task.primary_spawn, error=str(exc))
    cfg = ClosedLoopConfig(
        chunk_every=chunk_every, horizon=horizon, max_ticks=max_ticks, decay=decay
    )
    result = run_closed_loop(scene, policy, cfg, record=False)
    return TrialRecord(
        task_id,
        seed,
        result.success,
        result.ticks,
        scene.task.primary_spawn,
        timeouts=result.timeouts,
        error="policy protocol error" if result.protocol_error else "",
        detail=result.detail,
    )


def _run_trial_args(args) -> TrialRecord:
    return run_trial(*args)


@dataclass
class EvalReport:
    policy: str
    tasks: dict[str, dict]  # task_id -> {trials, successes, rate}
    average_rate: float
    skills: dict[str, float]
    trials: list[TrialRecord]

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "tasks": self.tasks,
            "average_rate": self.average_rate,
            "skills": self.skills,
            "trials": [t.to_dict() for t in self.trials],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def skill_aggregate(
    task_rates: dict[str, float], skill_map: dict[str, list[str]] | None = None
) -> dict[str, float]:
    """Unweighted mean of the rates of the tasks assessing each skill."""
    skill_map = skill_map or DEFAULT_SKILL_MAP
    out = {}
    for skill, tasks in skill_map.items():
        missing = [t for t in tasks if t not in task_rates]
        if missing:
            raise KeyError(f"skill {skill!r} references tasks without rates: {missing}")
        out[skill] = round_rate(float(np.mean([task_rates[t] for t in tasks])))
    return out


def run_evaluation(plan: EvalPlan) -> EvalReport:
    """Run every planned trial (possibly in parallel) and aggregate.

    The report is identical to serial execution for any jobs count: seeds
    are pre-assigned and results are ordered by (task, seed).
    """
    jobs = []
    for tp in plan.tasks:
        for seed in tp.seeds():
            jobs.append(
                (
                    tp.task_id,
                    seed,
                    plan.policy,
                    tp.max_ticks,
                    plan.chunk_every,
                    plan.horizon,
                    plan.decay,
                )
            )
    # External policies hold one connection, so they always run serially.
    if plan.jobs > 1 and not plan.policy.startswith("external:"):
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            records = list(pool.map(_run_trial_args, jobs, chunksize=4))
    else:
        records = [_run_trial_args(j) for j in jobs]
    records.sort(key=lambda r: (r.task_id, r.seed))

    tasks = {}
    rates = {}
    for tp in plan.tasks:
        rs = [r for r in records if r.task_id == tp.task_id]
        successes = sum(1 for r in rs if r.success)
        rate = round_rate(100.0 * successes / len(rs))
        tasks[tp.task_id] = {"trials": len(rs), "successes": successes, "rate": rate}
        rates[tp.task_id] = rate
    avg = round_rate(float(np.mean(list(rates.values())))) if rates else 0.0
    skills = (
        skill_aggregate(rates)
        if set(rates) == set(TASK_IDS)
        else {}
    )
    return EvalReport(plan.policy, tasks, avg, skills, records)


def report_markdown(report: EvalReport, column: str | None = None) -> str:
    """Success-rate table in the benchmark's layout (2-decimal rates + Avg)."""
    name = column or report.policy
    lines = [
        f"| Task | {name} |",
        "| --- | --- |",
    ]
    for task_id, display in TASK_DISPLAY:
        if task_id in report.tasks:
            lines.append(f"| {display} | {report.tasks[task_id]['rate']:.2f} |")
    lines.append(f"| **Avg** | {report.average_rate:.2f} |")
    if report.skills:
        lines += ["", "| Skill | Rate |", "| --- | --- |"]
        for skill, rate in report.skills.items():
            lines.append(f"| {skill} | {rate:.2f} |")
    return "\n".join(lines) + "\n"


# -- heatmaps -----------------------------------------------------------------


@dataclass
class HeatmapGrid:
    task_id: str
    x_edges: np.ndarray
    y_edges: np.ndarray
    trials: np.ndarray  # (nx, ny) int
    successes: np.ndarray  # (nx, ny) int

    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.trials > 0, self.successes / np.maximum(self.trials, 1), np.nan)

    def to_dict(self) -> dict:
        rates = self.rates()
        return {
            "task_id": self.task_id,
            "x_edges": [float(v) for v in self.x_edges],
            "y_edges": [float(v) for v in self.y_edges],
            "bins": [
                [
                    {
                        "trials": int(self.trials[i, j]),
                        "successes": int(self.successes[i, j]),
                        "rate": None if self.trials[i, j] == 0 else float(rates[i, j]),
                    }
                    for j in range(self.trials.shape[1])
                ]
                for i in range(self.trials.shape[0])
            ],
        }


def build_heatmap(
    records: list[TrialRecord],
    task_id: str,
    bins: tuple[int, int],
    region: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> HeatmapGrid:
    """Bin the primary item's spawn position over the task spawn region."""
    nx, ny = bins
    if nx <= 0 or ny <= 0:
        raise ValueError("bin counts must be positive")
    if region is None:
        from .scene import load_manifest

        region = load_manifest(task_id)["heatmap_region"]
    (x0, x1), (y0, y1) = region
    x_edges = np.linspace(x0, x1, nx + 1)
    y_edges = np.linspace(y0, y1, ny + 1)
    trials = np.zeros((nx, ny), dtype=int)
    successes = np.zeros((nx, ny), dtype=int)
    for r in records:
        if r.task_id != task_id:
            continue
        x, y = r.spawn
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            continue
        i = min(int((x - x0) / (x1 - x0) * nx), nx - 1)
        j = min(int((y - y0) / (y1 - y0) * ny), ny - 1)
        trials[i, j] += 1
        successes[i, j] += int(r.success)
    return HeatmapGrid(task_id, x_edges, y_edges, trials, successes)


NO_DATA_RGB = (64, 64, 160)  # distinguishes "never sampled" from rate 0


def heatmap_ppm(grid: HeatmapGrid, cell_px: int = 24) -> bytes:
    """Binary P6 pixmap: success-rate grayscale, 0 black to 1 white."""
    nx, ny = grid.trials.shape
    width, height = nx * cell_px, ny * cell_px
    rates = grid.rates()
    img = bytearray()
    for row in range(height):
        j = ny - 1 - row // cell_px  # y increases upward in the image
        for col in range(width):
            i = col // cell_px
            if grid.trials[i, j] == 0:
                img += bytes(NO_DATA_RGB)
            else:
                g = int(round(255 * float(rates[i, j])))
                img += bytes((g, g, g))
    return b"P6\n%d %d\n255\n" % (width, height) + bytes(img)


def write_heatmap(
    grid: HeatmapGrid, out_dir: str | Path, figures: bool = True
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    j = out_dir / f"heatmap_{grid.task_id}.json"
    j.write_text(json.dumps(grid.to_dict(), indent=2) + "\n")
    written.append(j)
    p = out_dir / f"heatmap_{grid.task_id}.ppm"
    p.write_bytes(heatmap_ppm(grid))
    written.append(p)
    if figures:
        from .figures import render_heatmap

        written.append(render_heatmap(grid, out_dir / f"heatmap_{grid.task_id}.png"))
    return written


def write_report(
    report: EvalReport, out_dir: str | Path, figures: bool = True
) -> list[Path]:
    """Emit report.json + report.md (and rate figures) into a directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    j = out_dir / "report.json"
    j.write_text(report.to_json())
    written.append(j)
    m = out_dir / "report.md"
    m.write_text(report_markdown(report))
    written.append(m)
    if figures:
        from .figures import render_rates

        written.append(render_rates(report, out_dir / "report_rates.png"))
    return written
