"""Tests for task streams, coresets and accuracy matrices."""

from pathlib import Path
import tempfile

import numpy as np
import pytest

from bayescl.models import LabeledBatch
from bayescl.tasks import (
    AccuracyMatrix,
    AccuracyRow,
    Coreset,
    Scenario,
    Task,
    TaskStream,
    accuracy,
    accuracy_matrix,
    coreset_sample,
)


def make_task(task_id, classes, n=20, width=3, seed=0):
    rng = np.random.default_rng(seed + task_id)
    labels = np.resize(np.asarray(classes), n)
    train = LabeledBatch(rng.normal(size=(n, width)), labels, task_id)
    test = LabeledBatch(rng.normal(size=(n, width)), labels.copy(), task_id)
    return Task(task_id, train, test, tuple(classes))


class TestTaskStream:
    """Test stream construction and isolation."""

    def test_class_incremental_rejects_reused_classes(self):
        """Test class-incremental tasks must use disjoint classes."""
        with pytest.raises(ValueError, match="reuses classes"):
            TaskStream((make_task(0, (0, 1)), make_task(1, (1, 2))))

    def test_domain_incremental_shares_classes(self):
        """Test domain-incremental tasks share the two outputs."""
        stream = TaskStream(
            (make_task(0, (0, 1)), make_task(1, (0, 1))), Scenario.DOMAIN_INCREMENTAL
        )
        assert stream.n_classes == 2
        assert stream.classes == (0, 1)

    def test_class_incremental_head_width(self):
        """Test a single head covers every class seen."""
        stream = TaskStream((make_task(0, (0, 1)), make_task(1, (2, 3))))
        assert stream.n_classes == 4

    def test_input_widths_must_agree(self):
        """Test tasks of different widths cannot share a stream."""
        with pytest.raises(ValueError, match="input width"):
            TaskStream((make_task(0, (0, 1)), make_task(1, (2, 3), width=4)))

    def test_iteration_yields_copies(self):
        """Test a learner mutating its task cannot touch the stream."""
        stream = TaskStream((make_task(0, (0, 1)),))
        for task in stream:
            task.train.inputs[:] = 99.0
        assert not np.any(stream.tasks[0].train.inputs == 99.0)

    def test_pooled(self):
        """Test pooling merges every task."""
        stream = TaskStream((make_task(0, (0, 1)), make_task(1, (2, 3))))
        pooled = stream.pooled()
        assert len(pooled.train) == 40
        assert pooled.classes == (0, 1, 2, 3)

    def test_prefix(self):
        """Test a prefix keeps the first tasks."""
        stream = TaskStream((make_task(0, (0, 1)), make_task(1, (2, 3))))
        assert len(stream.prefix(1)) == 1


class TestCoreset:
    """Test coreset sampling."""

    def setup_method(self):
        """Set up a batch of 12000 rows."""
        self.batch = LabeledBatch(
            np.arange(12000, dtype=float)[:, None], np.zeros(12000, dtype=int)
        )

    def test_whole_task(self):
        """Test a budget equal to the task size keeps every row."""
        subset, idx = coreset_sample(self.batch, 12000, seed=0)
        assert len(subset) == 12000
        np.testing.assert_array_equal(idx, np.arange(12000))

    def test_unique_indices(self):
        """Test a budget of 200 picks 200 distinct rows."""
        subset, idx = coreset_sample(self.batch, 200, seed=1)
        assert len(np.unique(idx)) == 200
        np.testing.assert_array_equal(subset.inputs[:, 0], idx.astype(float))

    def test_same_seed_same_subset(self):
        """Test the subset is a function of the seed."""
        _, a = coreset_sample(self.batch, 50, seed=3)
        _, b = coreset_sample(self.batch, 50, seed=3)
        _, c = coreset_sample(self.batch, 50, seed=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_budget_bounds(self):
        """Test negative and oversized budgets."""
        with pytest.raises(ValueError, match="non-negative"):
            coreset_sample(self.batch, -1, seed=0)
        with pytest.raises(ValueError, match="exceeds"):
            coreset_sample(self.batch, 12001, seed=0)

    def test_per_task_budget(self):
        """Test the coreset keeps a fixed budget per task."""
        coreset = Coreset(budget=30)
        coreset.add_task(0, self.batch, seed=0)
        coreset.add_task(1, self.batch.subset(np.arange(10)), seed=0)
        assert len(coreset) == 40
        assert len(coreset.batch()) == 40
        assert Coreset(budget=5).batch() is None

    def test_copy_is_independent(self):
        """Test copies do not share arrays."""
        coreset = Coreset(budget=5)
        coreset.add_task(0, self.batch, seed=0)
        clone = coreset.copy()
        clone.members[0].inputs[:] = -1.0
        assert np.all(coreset.members[0].inputs >= 0.0)

    def test_write_indices(self):
        """Test indices are written one row per member with 1-based tasks."""
        coreset = Coreset(budget=3)
        coreset.add_task(0, self.batch, seed=0)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "coreset.csv"
            coreset.write_indices(path)
            lines = path.read_text().splitlines()
        assert lines[0] == "task,row"
        assert len(lines) == 4
        assert all(line.startswith("1,") for line in lines[1:])


class TestAccuracy:
    """Test accuracy rows and matrices."""

    def setup_method(self):
        """Set up a balanced binary stream."""
        self.stream = TaskStream(
            (make_task(0, (0, 1)), make_task(1, (0, 1))), Scenario.DOMAIN_INCREMENTAL
        )

    def test_constant_predictor(self):
        """Test a constant predictor scores one half on balanced tasks."""
        row = accuracy_matrix(
            lambda b: np.zeros(len(b), dtype=int), self.stream, after_task=1
        )
        assert row.accuracies == (0.5, 0.5)

    def test_oracle_predictor(self):
        """Test an oracle predictor scores one everywhere."""
        row = accuracy_matrix(lambda b: b.labels, self.stream, after_task=1)
        assert row.accuracies == (1.0, 1.0)

    def test_row_prefix(self):
        """Test a row only covers tasks trained so far."""
        row = accuracy_matrix(lambda b: b.labels, self.stream, after_task=0)
        assert len(row.accuracies) == 1
        with pytest.raises(ValueError, match="outside"):
            accuracy_matrix(lambda b: b.labels, self.stream, after_task=2)

    def test_row_mean(self):
        """Test the row mean is the arithmetic mean of its entries."""
        row = AccuracyRow((0.2, 0.9, 0.55))
        assert abs(row.mean - (0.2 + 0.9 + 0.55) / 3) < 1e-12

    def test_empty_accuracy_is_nan(self):
        """Test an empty test set has no accuracy."""
        assert np.isnan(accuracy(np.array([]), np.array([])))

    def test_matrix_is_lower_triangular(self):
        """Test entries above the diagonal stay NaN."""
        matrix = AccuracyMatrix(2)
        matrix.set_row(0, AccuracyRow((0.9,)))
        matrix.set_row(1, AccuracyRow((0.5, 1.0)))
        assert np.isnan(matrix.values[0, 1])
        np.testing.assert_allclose(matrix.averages, [0.9, 0.75])
        assert matrix.final_average == 0.75

    def test_set_row_checks(self):
        """Test row length and range checks."""
        matrix = AccuracyMatrix(2)
        with pytest.raises(ValueError, match="entries"):
            matrix.set_row(1, AccuracyRow((0.5,)))
        with pytest.raises(ValueError, match="outside"):
            matrix.set_row(0, AccuracyRow((1.5,)))

    def test_csv_round_trip(self):
        """Test the CSV keeps every value exactly with 1-based task numbers."""
        matrix = AccuracyMatrix(3)
        matrix.set_row(0, AccuracyRow((0.1 + 0.2,)))
        matrix.set_row(1, AccuracyRow((1 / 3, 0.5)))
        matrix.set_row(2, AccuracyRow((0.25, 2 / 3, 1.0)))
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "accuracy.csv"
            matrix.to_csv(path)
            lines = path.read_text().splitlines()
            loaded = AccuracyMatrix.from_csv(path)
        assert lines[0] == "after_task,eval_task,accuracy"
        assert lines[1].startswith("1,1,")
        assert len(lines) == 7
        np.testing.assert_array_equal(
            np.nan_to_num(loaded.values, nan=-1.0),
            np.nan_to_num(matrix.values, nan=-1.0),
        )

    def test_to_dict(self):
        """Test the JSON form uses None for unset entries."""
        matrix = AccuracyMatrix(2)
        matrix.set_row(0, AccuracyRow((1.0,)))
        matrix.set_row(1, AccuracyRow((0.5, 0.5)))
        assert matrix.to_dict()["matrix"][0] == [1.0, None]
