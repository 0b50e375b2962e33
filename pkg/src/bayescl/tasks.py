"""Task streams, coresets and accuracy matrices.

Learners receive each task's training data by value, one task at a time. The only
state allowed to outlive a task is a :class:`Coreset`.
"""

from collections.abc import Callable, Iterator
import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .models import LabeledBatch


class Scenario(Enum):
    """How labels relate across tasks."""

    CLASS_INCREMENTAL = "class-incremental"
    DOMAIN_INCREMENTAL = "domain-incremental"


@dataclass(frozen=True)
class Task:
    """One task of a stream: train and test batches plus its class set."""

    task_id: int
    train: LabeledBatch
    test: LabeledBatch
    classes: tuple[int, ...]

    def copy(self) -> "Task":
        return Task(self.task_id, self.train.copy(), self.test.copy(), self.classes)


@dataclass(frozen=True)
class TaskStream:
    """Ordered tasks sharing one input dimensionality.

    Iterating yields copies, so nothing a learner does to a task's arrays can leak
    into the stream or into later tasks.
    """

    tasks: tuple[Task, ...]
    scenario: Scenario = Scenario.CLASS_INCREMENTAL
    name: str = "stream"

    def __post_init__(self):
        tasks = tuple(self.tasks)
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        widths = {t.train.inputs.shape[1] for t in tasks}
        widths |= {t.test.inputs.shape[1] for t in tasks}
        if len(widths) > 1:
            raise ValueError(f"Tasks disagree on input width: {sorted(widths)}")
        if self.scenario is Scenario.CLASS_INCREMENTAL:
            seen: set[int] = set()
            for task in tasks:
                overlap = seen & set(task.classes)
                if overlap:
                    raise ValueError(
                        f"Class-incremental task {task.task_id} reuses classes "
                        f"{sorted(overlap)}"
                    )
                seen |= set(task.classes)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self) -> Iterator[Task]:
        for task in self.tasks:
            yield task.copy()

    def __getitem__(self, index: int) -> Task:
        return self.tasks[index].copy()

    @property
    def input_width(self) -> int:
        if not self.tasks:
            raise ValueError("Empty stream has no input width")
        return self.tasks[0].train.inputs.shape[1]

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted({c for t in self.tasks for c in t.classes}))

    @property
    def n_classes(self) -> int:
        """Number of output classes a single head must cover."""
        if self.scenario is Scenario.DOMAIN_INCREMENTAL:
            return 2
        return max(self.classes) + 1 if self.tasks else 0

    def test_batches(self) -> list[LabeledBatch]:
        return [t.test.copy() for t in self.tasks]

    def prefix(self, n_tasks: int) -> "TaskStream":
        return TaskStream(self.tasks[:n_tasks], self.scenario, self.name)

    def pooled(self) -> Task:
        """All tasks merged into one; the multi-task upper-bound setting."""
        if not self.tasks:
            raise ValueError("Cannot pool an empty stream")
        return Task(
            task_id=-1,
            train=LabeledBatch.concatenate([t.train for t in self.tasks]),
            test=LabeledBatch.concatenate([t.test for t in self.tasks]),
            classes=self.classes,
        )


def coreset_sample(
    batch: LabeledBatch, budget: int, seed: int | np.random.Generator
) -> tuple[LabeledBatch, np.ndarray]:
    """Draw a uniform subset of ``budget`` rows without replacement.

    Returns:
        The subset and the sorted row indices it was taken from

    Raises:
        ValueError: If the budget is negative or exceeds the batch size

    """
    if budget < 0:
        raise ValueError(f"Coreset budget must be non-negative, got {budget}")
    if budget > len(batch):
        raise ValueError(
            f"Coreset budget {budget} exceeds task size {len(batch)}"
        )
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(len(batch), size=budget, replace=False))
    return batch.subset(indices), indices


@dataclass
class Coreset:
    """Per-task retained examples with a fixed budget per task."""

    budget: int = 200
    members: dict[int, LabeledBatch] = field(default_factory=dict)
    indices: dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(b) for b in self.members.values())

    def add_task(
        self, task_id: int, batch: LabeledBatch, seed: int | np.random.Generator
    ) -> None:
        budget = min(self.budget, len(batch))
        subset, idx = coreset_sample(batch, budget, seed)
        self.members[task_id] = subset
        self.indices[task_id] = idx

    def batch(self) -> LabeledBatch | None:
        nonempty = [b for b in self.members.values() if len(b)]
        if not nonempty:
            return None
        return LabeledBatch.concatenate(nonempty)

    def copy(self) -> "Coreset":
        return Coreset(
            self.budget,
            {k: v.copy() for k, v in self.members.items()},
            {k: v.copy() for k, v in self.indices.items()},
        )

    def write_indices(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["task", "row"])
            for task_id in sorted(self.indices):
                for row in self.indices[task_id]:
                    writer.writerow([task_id + 1, int(row)])


@dataclass(frozen=True)
class AccuracyRow:
    accuracies: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.asarray(predicted) == np.asarray(labels)))


def accuracy_matrix(
    predict_fn: Callable[[LabeledBatch], np.ndarray],
    stream: TaskStream,
    after_task: int,
) -> AccuracyRow:
    """Test accuracies on tasks ``0..after_task`` for one trained learner.

    Args:
        predict_fn: Maps a test batch (with its task id) to predicted labels
        stream: The task stream
        after_task: Zero-based index of the last task trained

    """
    if not 0 <= after_task < len(stream):
        raise ValueError(
            f"after_task {after_task} outside stream of {len(stream)} tasks"
        )
    accs = []
    for task in stream.tasks[: after_task + 1]:
        test = task.test.copy()
        accs.append(accuracy(predict_fn(test), test.labels))
    return AccuracyRow(tuple(accs))


class AccuracyMatrix:
    """T x T accuracies; entry (t, i) is task i's accuracy after training task t.

    Entries above the diagonal are NaN and never written.
    """

    CSV_HEADER = ("after_task", "eval_task", "accuracy")

    def __init__(self, n_tasks: int):
        if n_tasks < 0:
            raise ValueError(f"n_tasks must be non-negative, got {n_tasks}")
        self.values = np.full((n_tasks, n_tasks), np.nan)

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    def set_row(self, after_task: int, row: AccuracyRow) -> None:
        if len(row.accuracies) != after_task + 1:
            raise ValueError(
                f"Row after task {after_task} must have {after_task + 1} entries"
            )
        for i, acc in enumerate(row.accuracies):
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"Accuracy {acc} outside [0, 1]")
            self.values[after_task, i] = acc

    def row(self, after_task: int) -> np.ndarray:
        return self.values[after_task, : after_task + 1].copy()

    def row_mean(self, after_task: int) -> float:
        return float(np.mean(self.row(after_task)))

    @property
    def averages(self) -> np.ndarray:
        return np.array([self.row_mean(t) for t in range(self.n_tasks)])

    @property
    def final_average(self) -> float:
        return self.row_mean(self.n_tasks - 1)

    def to_rows(self) -> list[tuple[int, int, float]]:
        rows = []
        for t in range(self.n_tasks):
            for i in range(t + 1):
                if not np.isnan(self.values[t, i]):
                    rows.append((t + 1, i + 1, float(self.values[t, i])))
        return rows

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.CSV_HEADER)
            for after, evaluated, acc in self.to_rows():
                writer.writerow([after, evaluated, repr(acc)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "AccuracyMatrix":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        n_tasks = max((int(r["after_task"]) for r in rows), default=0)
        matrix = cls(n_tasks)
        for r in rows:
            matrix.values[int(r["after_task"]) - 1, int(r["eval_task"]) - 1] = float(
                r["accuracy"]
            )
        return matrix

    def to_dict(self) -> dict:
        return {
            "matrix": [
                [None if np.isnan(v) else float(v) for v in row] for row in self.values
            ],
            "averages": [float(a) for a in self.averages] if self.n_tasks else [],
        }
