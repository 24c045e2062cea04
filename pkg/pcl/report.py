"""
Run metrics, aggregation and report files.

``report.json`` has two top-level keys: ``payload`` holds everything that
is a function of the config and seed (config echo, aggregates and the
per-run matrices and curves) and is byte-identical between repeated
executions; ``timing`` holds the timestamp and wall times.
``curves.csv`` has one row per evaluation point per run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np

from .logger import get_logger


REPORT_FILE = "report.json"
PARTIAL_REPORT_FILE = "report.partial.json"
CURVES_FILE = "curves.csv"
SWEEP_FILE = "sweep.csv"

POINT_KINDS = ("periodic", "task_end")


class ReportError(Exception):
    """Raised when a report cannot be written, read or parsed."""
    pass


@dataclass
class CurvePoint:
    """Accuracy on the tasks seen so far at one training step.

    Attributes:
        step: Training steps (batches) completed.
        kind: ``"periodic"`` (every ``eval_every`` steps) or ``"task_end"``.
        tasks_seen: Tasks the stream has started so far.
        micro: Accuracy over the union of the seen tasks' test samples.
        macro: Unweighted mean of the seen tasks' accuracies.
        per_task: Accuracy per task position; ``None`` for unseen tasks.
    """
    step: int
    kind: str
    tasks_seen: int
    micro: float
    macro: float
    per_task: list[float | None]


@dataclass
class RunMetrics:
    """Everything measured in one run.

    Attributes:
        run_index: Position of the run in the experiment.
        seeds: Derived seeds by role.
        task_classes: Classes of each task in stream order.
        accuracy_matrix: ``[t_after][task]`` accuracy after finishing task
            ``t_after``; ``None`` above the diagonal.
        curve: Evaluation points in step order.
        final_micro: Overall accuracy over all tasks after training.
        final_macro: Mean per-task accuracy after training.
        final_per_task: Final accuracy per task position.
        final_masked_per_task: Final per-task accuracy with argmax restricted
            to each task's classes, on the same weights.
        param_count: Trainable scalars in the network.
        steps: Training steps taken.
        wall_time: Seconds spent on the run (kept out of the payload).
    """
    run_index: int
    seeds: dict[str, int]
    task_classes: list[list[int]]
    accuracy_matrix: list[list[float | None]]
    curve: list[CurvePoint]
    final_micro: float
    final_macro: float
    final_per_task: list[float]
    final_masked_per_task: list[float]
    param_count: int
    steps: int
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("wall_time")
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], wall_time: float = 0.0) -> RunMetrics:
        values = dict(data)
        values["curve"] = [CurvePoint(**p) for p in data["curve"]]
        return cls(**values, wall_time=wall_time)


def standard_error(values: list[float] | np.ndarray) -> float:
    """Sample standard deviation over sqrt(n); 0 for a single value."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return 0.0
    return float(arr.std(ddof=1) / math.sqrt(arr.size))


@dataclass
class AggregateReport:
    """Aggregates over runs plus the runs themselves.

    Attributes:
        config: Echo of the experiment fields of the config.
        n_runs: Number of completed runs.
        mean_final_micro: Mean overall (union) accuracy.
        se_final_micro: Standard error of the overall accuracy.
        mean_final_macro: Mean of the per-task mean accuracy.
        se_final_macro: Standard error of the per-task mean accuracy.
        mean_final_masked: Mean multi-head accuracy on the same weights.
        per_task_mean: Final accuracy per task position, averaged over runs.
        per_task_se: Standard error per task position.
        mean_accuracy_matrix: Run-averaged accuracy matrix.
        mean_curve: ``{"step", "micro", "macro"}`` averaged over runs at
            the periodic evaluation steps all runs share.
        param_count: Trainable scalars of the first run's network.
        runs: Per-run metrics in run-index order.
    """
    config: dict[str, Any]
    n_runs: int
    mean_final_micro: float
    se_final_micro: float
    mean_final_macro: float
    se_final_macro: float
    mean_final_masked: float
    per_task_mean: list[float]
    per_task_se: list[float]
    mean_accuracy_matrix: list[list[float | None]]
    mean_curve: list[dict[str, float]]
    param_count: int
    runs: list[RunMetrics] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        data = {k: v for k, v in asdict(self).items() if k != "runs"}
        data["runs"] = [r.to_dict() for r in self.runs]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], wall_times: list[float] | None = None) -> AggregateReport:
        values = dict(data)
        walls = wall_times or [0.0] * len(data["runs"])
        values["runs"] = [RunMetrics.from_dict(r, w) for r, w in zip(data["runs"], walls)]
        return cls(**values)


def _mean_matrix(matrices: list[list[list[float | None]]]) -> list[list[float | None]]:
    n = len(matrices[0])
    out: list[list[float | None]] = []
    for i in range(n):
        row: list[float | None] = []
        for j in range(n):
            cells = [m[i][j] for m in matrices if m[i][j] is not None]
            row.append(float(np.mean(cells)) if cells else None)
        out.append(row)
    return out


def _mean_curve(runs: list[RunMetrics]) -> list[dict[str, float]]:
    by_step: dict[int, list[CurvePoint]] = {}
    for run in runs:
        for point in run.curve:
            if point.kind == "periodic":
                by_step.setdefault(point.step, []).append(point)
    return [
        {
            "step": step,
            "micro": float(np.mean([p.micro for p in points])),
            "macro": float(np.mean([p.macro for p in points])),
        }
        for step, points in sorted(by_step.items())
        if len(points) == len(runs)
    ]


def aggregate(config: dict[str, Any], runs: list[RunMetrics]) -> AggregateReport:
    """Fold per-run metrics into a report, in run-index order."""
    if not runs:
        raise ReportError("cannot aggregate zero runs")
    runs = sorted(runs, key=lambda r: r.run_index)
    micro = [r.final_micro for r in runs]
    macro = [r.final_macro for r in runs]
    per_task = np.asarray([r.final_per_task for r in runs], dtype=np.float64)
    return AggregateReport(
        config=config,
        n_runs=len(runs),
        mean_final_micro=float(np.mean(micro)),
        se_final_micro=standard_error(micro),
        mean_final_macro=float(np.mean(macro)),
        se_final_macro=standard_error(macro),
        mean_final_masked=float(np.mean([np.mean(r.final_masked_per_task) for r in runs])),
        per_task_mean=[float(v) for v in per_task.mean(axis=0)],
        per_task_se=[standard_error(per_task[:, j]) for j in range(per_task.shape[1])],
        mean_accuracy_matrix=_mean_matrix([r.accuracy_matrix for r in runs]),
        mean_curve=_mean_curve(runs),
        param_count=runs[0].param_count,
        runs=runs,
    )


# ============================================================================
# Files
# ============================================================================

def _timing(report: AggregateReport, total_wall_time: float | None) -> dict[str, Any]:
    return {
        "generated_at": datetime.now().isoformat(timespec="seconds"),
        "total_wall_time": total_wall_time,
        "run_wall_times": [r.wall_time for r in report.runs],
    }


def _write_json(path: Path, report: AggregateReport, total_wall_time: float | None) -> None:
    document = {"payload": report.to_dict(), "timing": _timing(report, total_wall_time)}
    path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_curves(report: AggregateReport, path: Path) -> None:
    n_tasks = len(report.per_task_mean)
    header = ["run", "step", "kind", "tasks_seen", "overall_acc", "macro_acc"]
    header += [f"task_{j + 1}" for j in range(n_tasks)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for run in report.runs:
            for p in run.curve:
                writer.writerow(
                    [run.run_index, p.step, p.kind, p.tasks_seen, _fmt(p.micro), _fmt(p.macro)]
                    + [_fmt(a) for a in p.per_task]
                )


def emit_report(
    report: AggregateReport,
    out_dir: Path | str,
    total_wall_time: float | None = None,
    partial: bool = False,
) -> Path:
    """Write ``report.json`` and ``curves.csv`` into ``out_dir``.

    With ``partial`` only ``report.partial.json`` is written.

    Returns:
        Path of the JSON report.

    Raises:
        ReportError: If the files cannot be written.
    """
    out_dir = Path(out_dir).expanduser().resolve()
    path = out_dir / (PARTIAL_REPORT_FILE if partial else REPORT_FILE)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(path, report, total_wall_time)
        if not partial:
            write_curves(report, out_dir / CURVES_FILE)
    except OSError as e:
        raise ReportError(f"Cannot write report to {out_dir}: {e}")
    get_logger().info(f"Report written to {path}")
    return path


def load_report(path: Path | str) -> tuple[AggregateReport, dict[str, Any]]:
    """Read a report file (or the ``report.json`` inside a directory).

    Returns:
        The report and its timing section.

    Raises:
        ReportError: If the file is missing or malformed.
    """
    path = Path(path).expanduser().resolve()
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ReportError(f"Report not found: {path}")
    except (OSError, json.JSONDecodeError) as e:
        raise ReportError(f"Cannot read report {path}: {e}")

    try:
        timing = document.get("timing") or {}
        walls = timing.get("run_wall_times")
        report = AggregateReport.from_dict(document["payload"], walls)
    except (KeyError, TypeError, AttributeError) as e:
        raise ReportError(f"Malformed report {path}: {e}")
    return report, timing


def reaggregate(in_dir: Path | str) -> AggregateReport:
    """Recompute the aggregates of a report from its per-run data and rewrite it."""
    report, timing = load_report(in_dir)
    fresh = aggregate(report.config, report.runs)
    emit_report(fresh, in_dir, total_wall_time=timing.get("total_wall_time"))
    return fresh


# ============================================================================
# Density sweep
# ============================================================================

@dataclass
class SweepRow:
    """One density of a sweep."""
    density_pct: float
    k: int
    mean_micro: float
    se_micro: float
    mean_macro: float
    se_macro: float


def write_sweep_csv(rows: list[SweepRow], path: Path | str) -> Path:
    path = Path(path).expanduser().resolve()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["density_pct", "k", "mean_acc", "se_acc", "mean_macro_acc", "se_macro_acc"])
            for row in rows:
                writer.writerow([
                    row.density_pct, row.k, _fmt(row.mean_micro), _fmt(row.se_micro),
                    _fmt(row.mean_macro), _fmt(row.se_macro),
                ])
    except OSError as e:
        raise ReportError(f"Cannot write sweep table {path}: {e}")
    return path
