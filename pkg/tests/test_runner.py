"""Tests for the experiment runner."""

from __future__ import annotations

import json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from pcl import runner
from pcl.config import ConfigValidationError, ExperimentConfig, load_config
from pcl.data import make_split_stream
from pcl.model import ArchitectureSpec, build_network
from pcl.optimizer import OptimizerConfig, StreamingOptimizer
from pcl.report import CURVES_FILE, PARTIAL_REPORT_FILE, REPORT_FILE, SWEEP_FILE
from pcl.runner import (
    density_sweep,
    evaluate,
    evaluate_modes,
    execute_run,
    run_experiment,
    train_stream,
)

from .conftest import write_dataset


CONFIGS_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def make_cfg(data_dir: Path, tmp_path: Path, tiny_pairwise_spec: ArchitectureSpec):
    def factory(**overrides) -> ExperimentConfig:
        values = dict(
            dataset="mnist",
            protocol="split",
            architecture=tiny_pairwise_spec,
            optimizer=OptimizerConfig("adagrad", eta=0.01),
            batch_size=16,
            runs=2,
            eval_every=5,
            data_dir=data_dir,
            out_dir=tmp_path / "results",
            name="tiny",
        )
        values.update(overrides)
        return ExperimentConfig(**values)
    return factory


def payload_of(out_dir: Path) -> str:
    return json.dumps(json.loads((out_dir / REPORT_FILE).read_text())["payload"])


class TrainOnlyStream:
    """A stream that offers nothing but (x, y) batches."""

    def __init__(self, n_batches: int = 3):
        rng = np.random.default_rng(0)
        self.batches = [
            (rng.random((4, 1, 28, 28), dtype=np.float32), np.array([0, 1, 0, 1]))
            for _ in range(n_batches)
        ]

    def train_batches(self, batch_size, on_task_end=None):
        for x, y in self.batches:
            yield x, y
        if on_task_end is not None:
            on_task_end(0)

    def masked_train_batches(self, *args, **kwargs):
        raise AssertionError("single-head training must not request task masks")


class TestLoadData:
    """Tests for the per-process dataset cache."""

    def test_same_directory_served_from_cache(self, data_dir: Path) -> None:
        runner.load_data.cache_clear()

        first = runner.load_data(data_dir, "mnist")
        second = runner.load_data(data_dir, "mnist")

        assert first is second
        assert runner.load_data.cache_info().hits == 1

    def test_holds_at_most_two_datasets(self, tmp_path: Path) -> None:
        runner.load_data.cache_clear()
        dirs = [write_dataset(tmp_path / f"data-{i}", per_class=(2, 1)) for i in range(3)]

        for d in dirs:
            runner.load_data(d, "mnist")

        assert runner.load_data.cache_info().currsize == 2


class TestEvaluate:
    """Tests for evaluation helpers."""

    def test_accuracies_in_range(self, datasets, tiny_pairwise_spec) -> None:
        stream = make_split_stream(*datasets, order_seed=0)
        net = build_network(tiny_pairwise_spec, seed=0)

        results = evaluate_modes(net, stream)

        for result in results.values():
            assert len(result.per_task) == 5
            assert 0.0 <= result.micro <= 1.0
            assert result.macro == pytest.approx(np.mean(result.per_task))

    def test_multi_head_never_below_single_head(self, datasets, tiny_pairwise_spec) -> None:
        """Restricting the argmax to a task's classes can only help."""
        stream = make_split_stream(*datasets, order_seed=1)
        net = build_network(tiny_pairwise_spec, seed=1)

        results = evaluate_modes(net, stream)

        for single, multi in zip(results["single"].per_task, results["multi"].per_task):
            assert multi >= single

    def test_upto_limits_tasks(self, datasets, tiny_fc_spec) -> None:
        stream = make_split_stream(*datasets, order_seed=0)
        net = build_network(tiny_fc_spec, seed=0)

        assert len(evaluate(net, stream, "single", upto=2).per_task) == 2


class TestTrainStream:
    """Tests for train_stream function."""

    def test_single_head_uses_plain_batches(self, tiny_pairwise_spec) -> None:
        """Test that single-head training never asks for task identity."""
        net = build_network(tiny_pairwise_spec, seed=0)
        optimizer = StreamingOptimizer(net, OptimizerConfig("smas", eta=0.01))
        ended: list[int] = []

        steps = train_stream(net, TrainOnlyStream(), optimizer, batch_size=4, on_task_end=ended.append)

        assert steps == 3
        assert ended == [0]
        assert optimizer.steps == 3

    def test_single_head_loss_covers_all_classes(self, tiny_pairwise_spec) -> None:
        """Test that outputs of classes absent from the batch are still trained."""
        net = build_network(tiny_pairwise_spec, seed=2)
        head = net.layers[-1].conn
        before = head.weights.theta.copy()
        optimizer = StreamingOptimizer(net, OptimizerConfig("sgd", eta=0.5))

        train_stream(net, TrainOnlyStream(), optimizer, batch_size=4)

        other = head.o >= 2
        assert not np.array_equal(before[other], head.weights.theta[other])

    def test_multi_head_restricts_to_task_classes(self, datasets, tiny_pairwise_spec) -> None:
        """Test that multi-head training leaves other classes' outputs untouched."""
        stream = make_split_stream(*datasets, order_seed=0, shuffle_order=False)
        net = build_network(tiny_pairwise_spec, seed=3)
        head = net.layers[-1].conn
        optimizer = StreamingOptimizer(net, OptimizerConfig("sgd", eta=0.5))
        snapshots: list[np.ndarray] = []

        train_stream(
            net, stream, optimizer, batch_size=16, head_mode="multi",
            on_task_end=lambda t: snapshots.append(head.weights.theta.copy()),
        )

        # the first task is {0, 1}: its training moves no connection into other outputs
        initial = build_network(tiny_pairwise_spec, seed=3).layers[-1].conn.weights.theta
        other = head.o >= 2
        np.testing.assert_array_equal(snapshots[0][other], initial[other])

    def test_network_caches_released_after_each_step(self, tiny_pairwise_spec) -> None:
        net = build_network(tiny_pairwise_spec, seed=0)
        optimizer = StreamingOptimizer(net, OptimizerConfig("adagrad", eta=0.01))

        train_stream(net, TrainOnlyStream(), optimizer, batch_size=4)

        assert net.last_logits is None


class TestExecuteRun:
    """Tests for a single run."""

    def test_curve_and_matrix(self, make_cfg, datasets) -> None:
        """Test the evaluation schedule of one run."""
        metrics = execute_run(make_cfg(), 0, *datasets)

        # 5 tasks of 48 samples at batch 16
        assert metrics.steps == 15
        periodic = [p for p in metrics.curve if p.kind == "periodic"]
        task_ends = [p for p in metrics.curve if p.kind == "task_end"]
        assert [p.step for p in periodic] == [5, 10, 15]
        assert [p.tasks_seen for p in periodic] == [2, 4, 5]
        assert [p.step for p in task_ends] == [3, 6, 9, 12, 15]
        assert len(metrics.accuracy_matrix) == 5
        for i, row in enumerate(metrics.accuracy_matrix):
            assert all(v is not None for v in row[:i + 1])
            assert all(v is None for v in row[i + 1:])
        assert metrics.accuracy_matrix[-1] == pytest.approx(metrics.final_per_task)
        assert sorted(map(tuple, metrics.task_classes)) == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]

    def test_final_masked_not_below_final(self, make_cfg, datasets) -> None:
        metrics = execute_run(make_cfg(optimizer=OptimizerConfig("smas", eta=0.001)), 1, *datasets)

        for single, multi in zip(metrics.final_per_task, metrics.final_masked_per_task):
            assert multi >= single

    def test_permuted_run(self, make_cfg, datasets) -> None:
        metrics = execute_run(make_cfg(protocol="permuted", n_tasks=2, eval_every=50), 0, *datasets)

        assert metrics.steps == 2 * 15
        assert len(metrics.final_per_task) == 2
        assert all(c == list(range(10)) for c in metrics.task_classes)

    def test_saves_checkpoint(self, make_cfg, datasets) -> None:
        cfg = make_cfg(save_checkpoints=True)

        execute_run(cfg, 3, *datasets)

        assert (cfg.out_dir / "checkpoints" / "run-003.ckpt").exists()


class TestRunExperiment:
    """Tests for whole experiments."""

    def test_writes_report_curves_and_log(self, make_cfg) -> None:
        cfg = make_cfg()

        report = run_experiment(cfg, console_output=False)

        assert report.n_runs == 2
        assert (cfg.out_dir / REPORT_FILE).exists()
        assert (cfg.out_dir / CURVES_FILE).exists()
        assert list((cfg.out_dir / "logs").glob("experiment-*.log"))
        assert report.config["architecture"]["pairwise_budget"] == 600
        assert report.runs[0].seeds != report.runs[1].seeds

    def test_same_seed_same_payload(self, make_cfg, tmp_path: Path) -> None:
        """Test that repeated executions give byte-identical payloads."""
        first = make_cfg(out_dir=tmp_path / "first")
        second = make_cfg(out_dir=tmp_path / "second", workers=1, progress=True)

        run_experiment(first, console_output=False)
        run_experiment(second, console_output=False)

        assert payload_of(first.out_dir) == payload_of(second.out_dir)

    def test_master_seed_changes_payload(self, make_cfg, tmp_path: Path) -> None:
        a = make_cfg(out_dir=tmp_path / "a", runs=1)
        b = make_cfg(out_dir=tmp_path / "b", runs=1, master_seed=1)

        run_experiment(a, console_output=False)
        run_experiment(b, console_output=False)

        assert payload_of(a.out_dir) != payload_of(b.out_dir)

    def test_invalid_config(self, make_cfg) -> None:
        with pytest.raises(ConfigValidationError):
            run_experiment(make_cfg(batch_size=0), console_output=False)

    def test_failed_run_flushes_partial_report(self, make_cfg) -> None:
        """Test that completed runs survive a later failure."""
        cfg = make_cfg(runs=3)
        real = runner.execute_run

        def flaky(cfg, run_index, train, test):
            if run_index == 1:
                raise RuntimeError("disk full")
            return real(cfg, run_index, train, test)

        with patch("pcl.runner.execute_run", side_effect=flaky):
            with pytest.raises(RuntimeError, match="disk full"):
                run_experiment(cfg, console_output=False)

        assert not (cfg.out_dir / REPORT_FILE).exists()
        document = json.loads((cfg.out_dir / PARTIAL_REPORT_FILE).read_text())
        assert document["payload"]["n_runs"] == 1

    def test_missing_data(self, make_cfg, tmp_path: Path) -> None:
        from pcl.data import DatasetError

        with pytest.raises(DatasetError):
            run_experiment(make_cfg(data_dir=tmp_path / "empty"), console_output=False)


class TestDensitySweep:
    """Tests for density_sweep function."""

    def test_rows_and_directories(self, make_cfg) -> None:
        cfg = make_cfg(runs=1)

        rows = density_sweep(cfg, [10, 50], console_output=False)

        assert [(r.density_pct, r.k) for r in rows] == [(10.0, 2), (50.0, 12)]
        assert (cfg.out_dir / "density-10" / REPORT_FILE).exists()
        assert (cfg.out_dir / "density-50" / REPORT_FILE).exists()
        assert (cfg.out_dir / SWEEP_FILE).read_text().startswith("density_pct,k,")

    def test_density_reaches_architecture(self, make_cfg) -> None:
        cfg = make_cfg(runs=1)

        density_sweep(cfg, [25], console_output=False)

        echo = json.loads((cfg.out_dir / "density-25" / REPORT_FILE).read_text())["payload"]["config"]
        assert echo["architecture"]["density_pct"] == 25.0


class TestShippedAdagradSettings:
    """Test that the shipped Adagrad configs keep earlier tasks above chance."""

    @pytest.mark.parametrize("name", [
        "split_mnist_mlp700_pairwise_adagrad",
        "split_mnist_mlp1000_fc_adagrad",
    ])
    def test_earlier_tasks_retained(self, name: str, tmp_path: Path) -> None:
        """Test a full-size network on a 600-per-class synthetic split stream."""
        data_dir = write_dataset(tmp_path / "data", per_class=(600, 100))
        cfg = load_config(CONFIGS_DIR / f"{name}.json").replace(
            data_dir=data_dir, out_dir=tmp_path / "out", runs=1,
        )
        train, test = runner.load_data(data_dir, "mnist")

        metrics = execute_run(cfg, 0, train, test)

        assert min(metrics.final_per_task[:-1]) > 0.5

    def test_learning_rate_in_stable_range(self) -> None:
        for path in sorted(CONFIGS_DIR.glob("*.json")):
            cfg = load_config(path)
            if cfg.optimizer.rule == "adagrad":
                assert cfg.optimizer.eta <= 0.001, path.name
