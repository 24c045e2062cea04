"""
Experiment runner for Pairwise Continual.

Orchestrates an experiment: load the datasets, then for every run derive
seeds, build the task stream and network, train through the stream once
while recording accuracy curves, and finally aggregate the runs into a
report.
"""

from __future__ import annotations

import dataclasses
import functools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from tqdm import tqdm

from .checkpoint import save_checkpoint
from .config import ConfigValidationError, ExperimentConfig, validate_config
from .data import LabeledDataset, TaskStream, load_dataset, make_permuted_stream, make_split_stream
from .layers import ClassMask, masked_argmax, masked_softmax_xent, resolve_k
from .logger import get_logger, rotate_logs, setup_logging
from .model import Network, build_network
from .optimizer import StreamingOptimizer
from .report import (
    SWEEP_FILE,
    AggregateReport,
    CurvePoint,
    RunMetrics,
    SweepRow,
    aggregate,
    emit_report,
    write_sweep_csv,
)
from .seeds import derive_seed


# Test samples per forward pass during evaluation.
EVAL_BATCH_SIZE = 1000


@dataclass
class EvalResult:
    """Accuracy on the first ``len(per_task)`` tasks of a stream.

    Attributes:
        per_task: Accuracy on each task's held-out samples.
        micro: Accuracy over the union of those samples.
        macro: Unweighted mean of ``per_task``.
    """
    per_task: list[float]
    micro: float
    macro: float


def evaluate_modes(
    net: Network, stream: TaskStream, upto: int | None = None
) -> dict[str, EvalResult]:
    """Single-head and multi-head accuracy from one pass over the eval sets.

    Single-head takes the argmax over all classes; multi-head restricts it
    to each task's class mask.
    """
    sets = stream.eval_sets()[:upto]
    correct = {"single": [], "multi": []}
    totals = []
    for eval_set in sets:
        hits = {"single": 0, "multi": 0}
        for x, y in eval_set.batches(EVAL_BATCH_SIZE):
            logits = net.forward(x, train=False)
            hits["single"] += int(np.count_nonzero(masked_argmax(logits) == y))
            hits["multi"] += int(np.count_nonzero(masked_argmax(logits, eval_set.mask) == y))
        for mode in correct:
            correct[mode].append(hits[mode])
        totals.append(len(eval_set))

    results = {}
    for mode, counts in correct.items():
        per_task = [c / n if n else 0.0 for c, n in zip(counts, totals)]
        results[mode] = EvalResult(
            per_task=per_task,
            micro=sum(counts) / sum(totals) if sum(totals) else 0.0,
            macro=float(np.mean(per_task)) if per_task else 0.0,
        )
    return results


def evaluate(net: Network, stream: TaskStream, head_mode: str, upto: int | None = None) -> EvalResult:
    """Accuracy on the first ``upto`` tasks (all by default) in ``head_mode``."""
    return evaluate_modes(net, stream, upto)[head_mode]


def _pad(per_task: list[float], n_tasks: int) -> list[float | None]:
    return list(per_task) + [None] * (n_tasks - len(per_task))


class _RunTracker:
    """Evaluation bookkeeping for one run: curve points and the accuracy matrix."""

    def __init__(self, net: Network, stream: TaskStream, head_mode: str):
        self.net = net
        self.stream = stream
        self.head_mode = head_mode
        self.step = 0
        self.tasks_done = 0
        self.curve: list[CurvePoint] = []
        self.matrix: list[list[float | None]] = []

    def _point(self, kind: str, tasks_seen: int) -> EvalResult:
        result = evaluate(self.net, self.stream, self.head_mode, upto=tasks_seen)
        self.curve.append(CurvePoint(
            step=self.step,
            kind=kind,
            tasks_seen=tasks_seen,
            micro=float(result.micro),
            macro=float(result.macro),
            per_task=_pad(result.per_task, self.stream.n_tasks),
        ))
        return result

    def periodic(self) -> None:
        self._point("periodic", min(self.tasks_done + 1, self.stream.n_tasks))

    def task_end(self, task_id: int) -> None:
        self.tasks_done = task_id + 1
        result = self._point("task_end", self.tasks_done)
        self.matrix.append(_pad(result.per_task, self.stream.n_tasks))
        get_logger().info(
            f"  task {self.tasks_done}/{self.stream.n_tasks} done at step {self.step}: "
            f"accuracy {result.micro:.4f}"
        )


def build_stream(
    cfg: ExperimentConfig, train: LabeledDataset, test: LabeledDataset, seeds: dict[str, int]
) -> TaskStream:
    if cfg.protocol == "split":
        return make_split_stream(train, test, seeds["order"], cfg.shuffle_task_order)
    return make_permuted_stream(train, test, cfg.n_tasks, seeds["permutation"])


def train_stream(
    net: Network,
    stream: TaskStream,
    optimizer: StreamingOptimizer,
    batch_size: int,
    head_mode: str = "single",
    on_step: Callable[[], None] | None = None,
    on_task_end: Callable[[int], None] | None = None,
) -> int:
    """Train through the stream once. Returns the number of steps taken.

    Single-head training consumes ``train_batches`` only, so neither the
    loss nor the update ever sees a task id or mask. Multi-head training
    restricts the loss to the current task's classes.
    """
    n_classes = net.spec.n_classes if net.spec is not None else 10
    full = ClassMask.full(n_classes)
    if head_mode == "multi":
        batches = stream.masked_train_batches(batch_size, on_task_end)
    else:
        batches = ((x, y, full) for x, y in stream.train_batches(batch_size, on_task_end))

    steps = 0
    for x, y, mask in batches:
        logits = net.forward(x, train=True)
        _, grad = masked_softmax_xent(logits, y, mask)
        net.backward(grad, retain_cache=optimizer.needs_retained_cache)
        optimizer.step(x)
        net.clear()
        steps += 1
        if on_step is not None:
            on_step()
    return steps


def execute_run(
    cfg: ExperimentConfig,
    run_index: int,
    train: LabeledDataset,
    test: LabeledDataset,
) -> RunMetrics:
    """Run one seed of an experiment end to end."""
    logger = get_logger()
    started = time.perf_counter()
    seeds = {role: derive_seed(cfg.master_seed, run_index, role) for role in ("init", "order", "permutation")}

    stream = build_stream(cfg, train, test, seeds)
    net = build_network(cfg.architecture, seeds["init"], debug=cfg.debug)
    optimizer = StreamingOptimizer(net, cfg.optimizer)
    tracker = _RunTracker(net, stream, cfg.head_mode)
    logger.info(
        f"Run {run_index + 1}/{cfg.runs}: {net.param_count():,} parameters, "
        f"{stream.n_tasks} tasks, {stream.n_train:,} training samples"
    )

    bar = tqdm(
        total=stream.n_batches(cfg.batch_size),
        desc=f"run {run_index + 1}",
        disable=not cfg.progress,
        leave=False,
    )

    def on_step() -> None:
        tracker.step += 1
        bar.update(1)
        if tracker.step % cfg.eval_every == 0:
            tracker.periodic()

    try:
        steps = train_stream(
            net, stream, optimizer, cfg.batch_size, cfg.head_mode,
            on_step=on_step, on_task_end=tracker.task_end,
        )
    finally:
        bar.close()

    final = evaluate_modes(net, stream)
    primary = final[cfg.head_mode]
    if cfg.save_checkpoints:
        save_checkpoint(net, cfg.out_dir / "checkpoints" / f"run-{run_index:03d}.ckpt")

    wall = time.perf_counter() - started
    logger.info(f"Run {run_index + 1} finished in {wall:.1f}s: accuracy {primary.micro:.4f}")
    return RunMetrics(
        run_index=run_index,
        seeds=seeds,
        task_classes=[list(c) for c in stream.task_classes()],
        accuracy_matrix=tracker.matrix,
        curve=tracker.curve,
        final_micro=float(primary.micro),
        final_macro=float(primary.macro),
        final_per_task=[float(a) for a in primary.per_task],
        final_masked_per_task=[float(a) for a in final["multi"].per_task],
        param_count=net.param_count(),
        steps=steps,
        wall_time=wall,
    )


# A worker keeps at most the train/test pair of two datasets in memory.
@functools.lru_cache(maxsize=2)
def load_data(data_dir: Path, dataset: str) -> tuple[LabeledDataset, LabeledDataset]:
    return (
        load_dataset(data_dir, dataset, "train"),
        load_dataset(data_dir, dataset, "test"),
    )


def _run_in_worker(cfg: ExperimentConfig, run_index: int) -> RunMetrics:
    train, test = load_data(cfg.data_dir, cfg.dataset)
    return execute_run(cfg, run_index, train, test)


class ExperimentRunner:
    """Orchestrates all runs of one experiment.

    1. Validate the config
    2. Set up logging with rotation
    3. Load the datasets
    4. Execute the runs, in a process pool when ``workers > 1``
    5. Aggregate and write the report

    If a run fails, the runs completed so far are written to
    ``report.partial.json`` before the error propagates.
    """

    def __init__(self, config: ExperimentConfig, console_output: bool = True):
        self.config = config
        self.console_output = console_output
        self._completed: list[RunMetrics] = []

    def _setup_logging(self) -> None:
        log_dir = self.config.out_dir / "logs"
        logger = setup_logging(log_dir, self.config.log_level, self.console_output)
        deleted = rotate_logs(log_dir, self.config.log_retention_days)
        if deleted > 0:
            logger.debug(f"Cleaned up {deleted} old log files.")

    def _flush_partial(self) -> None:
        if not self._completed:
            return
        partial = aggregate(self.config.experiment_dict(), self._completed)
        emit_report(partial, self.config.out_dir, partial=True)
        get_logger().warning(f"{len(self._completed)} completed run(s) saved to report.partial.json")

    def _execute_runs(self) -> None:
        cfg = self.config
        if cfg.workers > 1 and cfg.runs > 1:
            with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.runs)) as pool:
                futures = [pool.submit(_run_in_worker, cfg, i) for i in range(cfg.runs)]
                for future in futures:
                    self._completed.append(future.result())
            return
        train, test = load_data(cfg.data_dir, cfg.dataset)
        for run_index in range(cfg.runs):
            self._completed.append(execute_run(cfg, run_index, train, test))

    def run(self) -> AggregateReport:
        """Execute every run and write ``report.json`` and ``curves.csv``.

        Raises:
            ConfigValidationError: If the config is invalid.
        """
        errors = validate_config(self.config)
        if errors:
            raise ConfigValidationError(errors)

        self._setup_logging()
        logger = get_logger()
        cfg = self.config
        logger.info(
            f"=== Experiment {cfg.name}: {cfg.dataset} {cfg.protocol}, {cfg.head_mode}-head, "
            f"{cfg.optimizer.rule}, {cfg.runs} run(s) ==="
        )

        started = time.perf_counter()
        self._completed = []
        try:
            self._execute_runs()
        except BaseException:
            self._flush_partial()
            raise

        report = aggregate(cfg.experiment_dict(), self._completed)
        emit_report(report, cfg.out_dir, total_wall_time=time.perf_counter() - started)
        logger.info(
            f"=== Done: accuracy {report.mean_final_micro:.4f} ± {report.se_final_micro:.4f} "
            f"(macro {report.mean_final_macro:.4f}) ==="
        )
        return report


def run_experiment(cfg: ExperimentConfig, console_output: bool = True) -> AggregateReport:
    """Convenience function to run an experiment."""
    return ExperimentRunner(cfg, console_output=console_output).run()


def density_sweep(
    base_cfg: ExperimentConfig,
    densities: list[float],
    console_output: bool = True,
) -> list[SweepRow]:
    """Run the experiment once per k-WTA density and write ``sweep.csv``.

    Each density gets its own ``density-<p>`` output directory under the
    base config's ``out_dir``; rows keep the order of ``densities``.
    """
    errors = validate_config(base_cfg)
    if errors:
        raise ConfigValidationError(errors)
    width = base_cfg.architecture.head_width
    rows: list[SweepRow] = []
    for density in densities:
        arch = dataclasses.replace(base_cfg.architecture, density_pct=float(density))
        cfg = base_cfg.replace(
            architecture=arch,
            out_dir=base_cfg.out_dir / f"density-{density:g}",
        )
        report = run_experiment(cfg, console_output=console_output)
        rows.append(SweepRow(
            density_pct=float(density),
            k=resolve_k(float(density), width),
            mean_micro=report.mean_final_micro,
            se_micro=report.se_final_micro,
            mean_macro=report.mean_final_macro,
            se_macro=report.se_final_macro,
        ))
    write_sweep_csv(rows, base_cfg.out_dir / SWEEP_FILE)
    get_logger().info(f"Sweep table written to {base_cfg.out_dir / SWEEP_FILE}")
    return rows
