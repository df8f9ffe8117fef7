"""Multi-view dataset ingestion, normalization and evaluation splits."""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .errors import DataError, DataFormatError
from .tensor import Rng, Tensor

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
BINARY_MAGIC = b"MVOCC1"
BINARY_HEADER = struct.Struct("<II")

QUALIFY_MIN_TRAIN = 300
QUALIFY_MAX_CLASSES = 10


class ViewEntry(BaseModel):
    """One view file listed in a dataset manifest."""

    name: str
    dim: int = Field(gt=0)
    file: str
    format: Literal["csv", "binary"] = "csv"


class Manifest(BaseModel):
    """Contents of ``manifest.json``."""

    name: str
    views: List[ViewEntry] = Field(min_length=1)
    labels_file: str
    split_file: Optional[str] = None


@dataclass
class MultiViewDataset:
    """V per-view sample matrices sharing row order, plus integer class labels."""

    name: str
    views: List[Tensor]
    labels: np.ndarray
    view_names: List[str] = field(default_factory=list)
    train_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.views) < 2:
            raise DataError(f"Dataset '{self.name}' has {len(self.views)} view(s); at least 2 needed")
        if not self.view_names:
            self.view_names = [f"view{v}" for v in range(len(self.views))]
        counts = {name: view.shape[0] for name, view in zip(self.view_names, self.views)}
        if len(set(counts.values())) > 1:
            raise DataFormatError(f"Row counts differ across views: {counts}")
        if len(self.labels) != self.n_rows:
            raise DataFormatError(f"{len(self.labels)} labels for {self.n_rows} rows")
        if self.train_mask is not None and len(self.train_mask) != self.n_rows:
            raise DataFormatError(f"Split marks {len(self.train_mask)} rows, dataset has {self.n_rows}")

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_rows(self) -> int:
        return self.views[0].shape[0]

    @property
    def dims(self) -> List[int]:
        return [view.shape[1] for view in self.views]

    @property
    def classes(self) -> List[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def select_views(self, indices: Sequence[int]) -> "MultiViewDataset":
        """Dataset restricted to a subset (or a duplicate list) of views."""
        return MultiViewDataset(
            name=self.name,
            views=[self.views[i] for i in indices],
            labels=self.labels,
            view_names=[self.view_names[i] for i in indices],
            train_mask=self.train_mask,
        )


@dataclass(frozen=True)
class NormStats:
    """Per-view, per-feature training minimum and maximum."""

    mins: Tuple[Tensor, ...]
    maxs: Tuple[Tensor, ...]


@dataclass
class Split:
    """Training views of the positive class and labelled test views."""

    positive_class: int
    train_views: List[Tensor]
    test_views: List[Tensor]
    test_labels: np.ndarray  # +1 positive class, -1 negative class
    train_rows: np.ndarray
    test_rows: np.ndarray


# ============================================================================
# File formats
# ============================================================================


def read_binary_matrix(path: Path) -> Tensor:
    """Read a binary view file (magic, u32 rows, u32 dim, little-endian f32 data)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(BINARY_MAGIC):
        raise DataFormatError(f"{path}: bad magic, expected {BINARY_MAGIC!r}")
    offset = len(BINARY_MAGIC)
    if len(raw) < offset + BINARY_HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    rows, dim = BINARY_HEADER.unpack_from(raw, offset)
    offset += BINARY_HEADER.size
    expected = rows * dim * 4
    if len(raw) - offset != expected:
        raise DataFormatError(f"{path}: expected {expected} data bytes, found {len(raw) - offset}")
    data = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=offset)
    return data.astype(np.float64).reshape(rows, dim)


def write_binary_matrix(path: Path, matrix: Tensor) -> None:
    matrix = np.asarray(matrix)
    header = BINARY_MAGIC + BINARY_HEADER.pack(matrix.shape[0], matrix.shape[1])
    Path(path).write_bytes(header + matrix.astype("<f4").tobytes(order="C"))


def read_csv_matrix(path: Path) -> Tensor:
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}")


def write_csv_matrix(path: Path, matrix: Tensor) -> None:
    np.savetxt(path, np.asarray(matrix, dtype=np.float64), delimiter=",", fmt="%.17g")


def _read_view(directory: Path, entry: ViewEntry) -> Tensor:
    path = directory / entry.file
    if not path.exists():
        raise DataError(f"View file not found: {path}")
    matrix = read_csv_matrix(path) if entry.format == "csv" else read_binary_matrix(path)
    if matrix.shape[1] != entry.dim:
        raise DataFormatError(f"View '{entry.name}': manifest dim {entry.dim}, file has {matrix.shape[1]}")
    return matrix


def _read_split(path: Path) -> np.ndarray:
    tokens = [line.strip().lower() for line in path.read_text().splitlines() if line.strip()]
    mapping = {"train": True, "1": True, "test": False, "0": False}
    unknown = sorted({t for t in tokens if t not in mapping})
    if unknown:
        raise DataFormatError(f"{path}: unknown split markers {unknown}")
    return np.array([mapping[t] for t in tokens], dtype=bool)


def load_dataset(path: Union[str, Path]) -> MultiViewDataset:
    """
    Load a dataset directory (or its manifest file).

    Args:
        path: Directory holding ``manifest.json``, or the manifest itself

    Returns:
        Validated MultiViewDataset

    Raises:
        DataError: If files are missing
        DataFormatError: If the manifest or a view file is malformed or row counts differ
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.exists():
        raise DataError(f"Manifest not found: {manifest_path}")
    directory = manifest_path.parent

    try:
        raw = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"Invalid JSON in {manifest_path}: {e}")
    if isinstance(raw, dict):
        for view in raw.get("views", []) or []:
            if isinstance(view, dict) and view.get("format") not in (None, "csv", "binary"):
                raise DataFormatError(f"View '{view.get('name')}': unknown file type '{view.get('format')}'")
    try:
        manifest = Manifest.model_validate(raw)
    except ValidationError as e:
        raise DataFormatError(f"Malformed manifest {manifest_path}: {e}")

    views = [_read_view(directory, entry) for entry in manifest.views]
    labels_path = directory / manifest.labels_file
    if not labels_path.exists():
        raise DataError(f"Labels file not found: {labels_path}")
    labels = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    train_mask = _read_split(directory / manifest.split_file) if manifest.split_file else None

    dataset = MultiViewDataset(
        name=manifest.name,
        views=views,
        labels=labels,
        view_names=[entry.name for entry in manifest.views],
        train_mask=train_mask,
    )
    logger.info(f"Loaded dataset '{dataset.name}': V={dataset.n_views}, N={dataset.n_rows}, dims={dataset.dims}")
    return dataset


def save_dataset(dataset: MultiViewDataset, path: Union[str, Path], fmt: str = "csv") -> Path:
    """Write a dataset directory in the manifest format; returns the manifest path."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, view in zip(dataset.view_names, dataset.views):
        filename = f"{name}.{'csv' if fmt == 'csv' else 'bin'}"
        if fmt == "csv":
            write_csv_matrix(directory / filename, view)
        else:
            write_binary_matrix(directory / filename, view)
        entries.append({"name": name, "dim": int(view.shape[1]), "file": filename, "format": fmt})
    np.savetxt(directory / "labels.txt", dataset.labels, fmt="%d")
    manifest = {"name": dataset.name, "views": entries, "labels_file": "labels.txt"}
    if dataset.train_mask is not None:
        (directory / "split.txt").write_text(
            "\n".join("train" if m else "test" for m in dataset.train_mask) + "\n"
        )
        manifest["split_file"] = "split.txt"
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


# ============================================================================
# Normalization
# ============================================================================


def normalize_fit(train_views: Sequence[Tensor]) -> NormStats:
    """Per-feature min and max of the training views."""
    for v, view in enumerate(train_views):
        if view.shape[0] < 1:
            raise DataError(f"View {v} has no training rows")
    return NormStats(
        mins=tuple(view.min(axis=0) for view in train_views),
        maxs=tuple(view.max(axis=0) for view in train_views),
    )


def normalize_apply(stats: NormStats, views: Sequence[Tensor]) -> List[Tensor]:
    """
    Map each feature affinely so training min/max become -1/+1.

    Constant training features map to 0; values outside the training range are not clipped.
    """
    normalized = []
    for view, low, high in zip(views, stats.mins, stats.maxs):
        span = high - low
        constant = span == 0
        safe_span = np.where(constant, 1.0, span)
        scaled = 2.0 * (view - low) / safe_span - 1.0
        normalized.append(np.where(constant, 0.0, scaled))
    return normalized


# ============================================================================
# Protocols
# ============================================================================


def one_vs_all_split(
    dataset: MultiViewDataset,
    positive_class: int,
    ratio: float,
    rng: Rng,
) -> Split:
    """
    Split for one positive class; all other classes form the negative class.

    With a predefined split, positive rows of the training split train the model and
    every row of the test split is evaluated. Otherwise ``ratio`` of the positive rows
    are drawn uniformly without replacement for training.

    Raises:
        DataError: If the class is absent or has fewer than 2 rows
    """
    positive = np.flatnonzero(dataset.labels == positive_class)
    if positive.size == 0:
        raise DataError(f"Class {positive_class} not present in dataset '{dataset.name}'")

    if dataset.train_mask is not None:
        train_rows = positive[dataset.train_mask[positive]]
        test_rows = np.flatnonzero(~dataset.train_mask)
        if train_rows.size == 0:
            raise DataError(f"Class {positive_class} has no rows in the predefined training split")
    else:
        if positive.size < 2:
            raise DataError(f"Class {positive_class} needs at least 2 rows, has {positive.size}")
        n_train = min(max(int(round(ratio * positive.size)), 1), positive.size - 1)
        shuffled = positive[rng.permutation(positive.size)]
        train_rows = np.sort(shuffled[:n_train])
        held_out = shuffled[n_train:]
        negatives = np.flatnonzero(dataset.labels != positive_class)
        test_rows = np.sort(np.concatenate([held_out, negatives]))

    test_labels = np.where(dataset.labels[test_rows] == positive_class, 1, -1)
    return Split(
        positive_class=positive_class,
        train_views=[view[train_rows] for view in dataset.views],
        test_views=[view[test_rows] for view in dataset.views],
        test_labels=test_labels,
        train_rows=train_rows,
        test_rows=test_rows,
    )


def training_eligible_rows(dataset: MultiViewDataset, positive_class: int, ratio: float) -> int:
    positive = dataset.labels == positive_class
    if dataset.train_mask is not None:
        return int(np.sum(positive & dataset.train_mask))
    return int(round(ratio * int(np.sum(positive))))


def qualified_classes(
    dataset: MultiViewDataset,
    ratio: float,
    min_train: int = QUALIFY_MIN_TRAIN,
    limit: int = QUALIFY_MAX_CLASSES,
) -> List[int]:
    """First ``limit`` classes (ascending label) with more than ``min_train`` training rows."""
    chosen = []
    for label in dataset.classes:
        eligible = training_eligible_rows(dataset, label, ratio)
        if eligible <= min_train:
            logger.warning(
                f"Skipping class {label} of '{dataset.name}': {eligible} training rows (need > {min_train})"
            )
            continue
        chosen.append(label)
        if len(chosen) == limit:
            break
    return chosen


def view_summary(dataset: MultiViewDataset) -> Dict[str, object]:
    return {
        "name": dataset.name,
        "n_views": dataset.n_views,
        "n_rows": dataset.n_rows,
        "dims": dataset.dims,
        "classes": dataset.classes,
        "predefined_split": dataset.train_mask is not None,
    }
