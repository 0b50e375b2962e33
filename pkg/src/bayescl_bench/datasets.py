"""Datasets and task streams for the experiments.

Reads the IDX container used by MNIST and Fashion-MNIST, splits labelled data into
per-task class groups and generates the two-dimensional toy streams.
"""

from collections.abc import Sequence
from dataclasses import dataclass
import gzip
import logging
from pathlib import Path
import struct

import numpy as np

from bayescl.errors import BayesClError
from bayescl.models import LabeledBatch
from bayescl.tasks import Scenario, Task, TaskStream

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

SPLIT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))

# Toy geometry: one pair of blobs per task, left to right.
TOY_X_CENTERS = (-4.0, -2.0, 0.0, 2.0, 4.0)
TOY_Y_OFFSET = 1.5
TOY_STD = 0.35
TOY_BAND_HALF_WIDTH = 0.8

_IDX_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxFormatError(BayesClError, ValueError):
    """An IDX file does not follow the container layout."""


class WrongMagicError(IdxFormatError):
    def __init__(self, path: str | Path, expected: int, found: int):
        self.path = str(path)
        self.expected = expected
        self.found = found
        super().__init__(f"{path}: magic number {found}, expected {expected}")


class TruncatedFileError(IdxFormatError):
    def __init__(self, path: str | Path, expected: int, found: int):
        self.path = str(path)
        super().__init__(f"{path}: expected {expected} bytes, found {found}")


class CountMismatchError(IdxFormatError):
    def __init__(self, n_images: int, n_labels: int):
        self.n_images = n_images
        self.n_labels = n_labels
        super().__init__(f"{n_images} images but {n_labels} labels")


def _read_bytes(path: str | Path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
    # gzip streams start with 1f 8b; the suffix is not trusted
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as f:
        return f.read()


def _unpack_header(path, buf: bytes, fmt: str, magic: int) -> tuple[int, ...]:
    size = struct.calcsize(fmt)
    if len(buf) < size:
        raise TruncatedFileError(path, size, len(buf))
    fields = struct.unpack_from(fmt, buf, 0)
    if fields[0] != magic:
        raise WrongMagicError(path, magic, fields[0])
    return fields[1:]


def read_idx_images(path: str | Path) -> np.ndarray:
    """(n, rows * cols) pixel matrix scaled to [0, 1]."""
    buf = _read_bytes(path)
    count, rows, cols = _unpack_header(path, buf, ">IIII", IMAGES_MAGIC)
    offset = struct.calcsize(">IIII")
    expected = offset + count * rows * cols
    if len(buf) < expected:
        raise TruncatedFileError(path, expected, len(buf))
    n_bytes = count * rows * cols
    pixels = np.frombuffer(buf, dtype=np.uint8, count=n_bytes, offset=offset)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(path: str | Path) -> np.ndarray:
    buf = _read_bytes(path)
    (count,) = _unpack_header(path, buf, ">II", LABELS_MAGIC)
    offset = struct.calcsize(">II")
    if len(buf) < offset + count:
        raise TruncatedFileError(path, offset + count, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=offset).astype(
        np.int64
    )


def load_idx(
    images_path: str | Path, labels_path: str | Path
) -> tuple[np.ndarray, np.ndarray]:
    """Load an IDX image file and its label file.

    Args:
        images_path: File with magic 2051 (count, rows, cols, then pixel bytes)
        labels_path: File with magic 2049 (count, then label bytes)

    Returns:
        Images as (n, rows * cols) floats in [0, 1] and (n,) integer labels

    Raises:
        WrongMagicError: If either magic number is wrong
        TruncatedFileError: If either file is shorter than its header declares
        CountMismatchError: If the files disagree on the number of items
        OSError: If a file cannot be read

    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(images.shape[0], labels.shape[0])
    return images, labels


@dataclass(frozen=True)
class Dataset:
    """A labelled train/test split before it is cut into tasks."""

    name: str
    train: LabeledBatch
    test: LabeledBatch

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.train.labels))


def _find(root: Path, stem: str) -> Path | None:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.is_file():
            return candidate
    return None


def idx_files_present(root: str | Path) -> bool:
    root = Path(root)
    return all(_find(root, stem) for stem in _IDX_FILES.values())


def load_idx_dataset(root: str | Path, name: str = "split-mnist") -> Dataset:
    """Load the four standard IDX files found in ``root`` (plain or gzipped)."""
    root = Path(root)
    paths = {}
    for key, stem in _IDX_FILES.items():
        path = _find(root, stem)
        if path is None:
            raise FileNotFoundError(f"{stem} not found in {root}")
        paths[key] = path
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    logger.info(
        "Loaded %s: %d train, %d test images", name, len(train[1]), len(test[1])
    )
    return Dataset(name, LabeledBatch(*train), LabeledBatch(*test))


def surrogate_dataset(
    n_train_per_class: int = 200,
    n_test_per_class: int = 50,
    width: int = 784,
    seed: int = 0,
    name: str = "surrogate",
) -> Dataset:
    """Ten Gaussian class blobs in [0, 1]^width standing in for missing IDX files."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(10, width))

    def draw(n_per_class: int) -> LabeledBatch:
        noise = 0.25 * rng.standard_normal((10, n_per_class, width))
        inputs = np.clip(centers[:, None, :] + noise, 0.0, 1.0).reshape(-1, width)
        labels = np.repeat(np.arange(10, dtype=np.int64), n_per_class)
        return LabeledBatch(inputs, labels)

    return Dataset(name, draw(n_train_per_class), draw(n_test_per_class))


def load_dataset(
    name: str, root: str | Path | None = None, seed: int = 0
) -> Dataset:
    """IDX files from ``root`` when present, otherwise the offline surrogate."""
    if root is not None and idx_files_present(root):
        return load_idx_dataset(root, name)
    logger.warning(
        "IDX files for %s not found under %s; using the synthetic surrogate",
        name,
        root,
    )
    return surrogate_dataset(seed=seed, name=f"{name}-surrogate")


def _select(batch: LabeledBatch, pair: Sequence[int], scenario: Scenario, task_id):
    mask = np.isin(batch.labels, pair)
    labels = batch.labels[mask]
    if scenario is Scenario.DOMAIN_INCREMENTAL:
        lookup = {c: i for i, c in enumerate(pair)}
        labels = np.array([lookup[int(y)] for y in labels], dtype=np.int64)
    return LabeledBatch(batch.inputs[mask], labels, task_id)


def split_by_classes(
    dataset: Dataset,
    pairs: Sequence[Sequence[int]] = SPLIT_PAIRS,
    scenario: Scenario | str = Scenario.CLASS_INCREMENTAL,
) -> TaskStream:
    """Cut a dataset into one task per class group.

    Class-incremental tasks keep the global labels. Domain-incremental tasks map
    each group's classes to their position within the group, so the usual pairs
    become even/odd problems.

    Raises:
        ValueError: If the groups overlap or a class is absent from the dataset

    """
    scenario = Scenario(scenario)
    pairs = [tuple(int(c) for c in p) for p in pairs]
    flat = [c for p in pairs for c in p]
    if len(flat) != len(set(flat)):
        raise ValueError(f"Class groups must be disjoint, got {pairs}")
    present = set(dataset.classes)
    missing = sorted(set(flat) - present)
    if missing:
        raise ValueError(f"Classes {missing} are absent from {dataset.name}")

    tasks = []
    for t, pair in enumerate(pairs):
        classes = (
            pair
            if scenario is Scenario.CLASS_INCREMENTAL
            else tuple(range(len(pair)))
        )
        tasks.append(
            Task(
                t,
                _select(dataset.train, pair, scenario, t),
                _select(dataset.test, pair, scenario, t),
                classes,
            )
        )
    return TaskStream(tuple(tasks), scenario, dataset.name)


def _toy_points(kind: str, x_center: float, y_center: float, n: int, rng):
    if kind == "gaussians":
        return rng.normal((x_center, y_center), TOY_STD, size=(n, 2))
    side = np.sign(y_center)
    xs = rng.uniform(x_center - TOY_BAND_HALF_WIDTH, x_center + TOY_BAND_HALF_WIDTH, n)
    ys = side * rng.uniform(0.2, abs(y_center) + 0.2, n)
    return np.column_stack([xs, ys])


def gen_toy_tasks(
    kind: str = "gaussians", n_per_class: int = 100, seed: int = 0
) -> TaskStream:
    """Five two-way tasks laid out left to right in the plane.

    Task ``t`` has one class above and one below the horizontal axis at
    ``x = TOY_X_CENTERS[t]``. Class 1 is the upper group on even tasks and the
    lower group on odd tasks. ``gaussians`` draws isotropic blobs; ``strip-bands``
    draws uniform bands that touch the axis from either side.

    Args:
        kind: ``gaussians`` or ``strip-bands``
        n_per_class: Train and test points per class, at least 10
        seed: Seed of the point sets

    """
    if kind not in ("gaussians", "strip-bands"):
        raise ValueError(f"Unknown toy stream {kind!r}")
    if n_per_class < 10:
        raise ValueError(f"n_per_class must be >= 10, got {n_per_class}")
    rng = np.random.default_rng(seed)
    tasks = []
    for t, x in enumerate(TOY_X_CENTERS):
        upper_label = 1 if t % 2 == 0 else 0
        split = []
        for _ in ("train", "test"):
            upper = _toy_points(kind, x, TOY_Y_OFFSET, n_per_class, rng)
            lower = _toy_points(kind, x, -TOY_Y_OFFSET, n_per_class, rng)
            labels = np.concatenate(
                [
                    np.full(n_per_class, upper_label),
                    np.full(n_per_class, 1 - upper_label),
                ]
            ).astype(np.int64)
            split.append(LabeledBatch(np.concatenate([upper, lower]), labels, t))
        tasks.append(Task(t, split[0], split[1], (0, 1)))
    return TaskStream(tuple(tasks), Scenario.DOMAIN_INCREMENTAL, f"toy-{kind}")
