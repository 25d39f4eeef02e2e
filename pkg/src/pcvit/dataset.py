"""Four-class labeled dataset: construction, 80:20 split, mini-batching."""

from __future__ import annotations

import csv
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from pcvit import checkpoint, rng
from pcvit._backend import env_threads
from pcvit.errors import ContractError, FormatError
from pcvit.pseudocolor import IMAGE_EXTENSIONS, IMAGE_SIZE, preprocess
from pcvit.tensor import Tensor

logger = logging.getLogger(__name__)

CLASS_NAMES = ("non-demented", "mild dementia", "moderate dementia", "very mild dementia")
NUM_CLASSES = len(CLASS_NAMES)
MANIFEST_NAME = "manifest.csv"


@dataclass
class LabeledDataset:
    """Pseudo-color images ``(N, 3, H, W)`` float32 with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    paths: list[str] = field(default_factory=list)
    class_names: tuple = CLASS_NAMES
    errors: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ContractError(f"images must be (N, 3, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ContractError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ContractError(f"labels must lie in [0, {len(self.class_names)})")
        if not self.paths:
            self.paths = [""] * len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]:
        return self.images[i], int(self.labels[i])

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=len(self.class_names)).tolist()

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            paths=[self.paths[i] for i in idx],
            class_names=self.class_names,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    shuffle: bool = True
    stratified: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ContractError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def _normalise_name(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


_DIR_ALIASES = {
    **{_normalise_name(n): i for i, n in enumerate(CLASS_NAMES)},
    **{str(i): i for i in range(NUM_CLASSES)},
    "nondemented": 0,
    "milddemented": 1,
    "moderatedemented": 2,
    "verymilddemented": 3,
}


def class_dirs_from_root(root) -> list[str]:
    """Resolve the four class subdirectories of ``root`` in label order.

    Subdirectory names are matched case- and punctuation-insensitively against
    the class names (``Non_Demented``, ``very mild dementia``...) or ``0``-``3``.
    """
    root = os.fspath(root)
    found: dict[int, str] = {}
    for entry in sorted(os.listdir(root)):
        path = os.path.join(root, entry)
        if not os.path.isdir(path):
            continue
        label = _DIR_ALIASES.get(_normalise_name(entry))
        if label is None:
            logger.warning("ignoring unrecognised class directory %s", path)
            continue
        if label in found:
            raise ContractError(f"directories {found[label]} and {path} both map to class {label}")
        found[label] = path
    missing = [CLASS_NAMES[i] for i in range(NUM_CLASSES) if i not in found]
    if missing:
        raise ContractError(f"{root}: no directory for class(es) {', '.join(missing)}")
    return [found[i] for i in range(NUM_CLASSES)]


def list_images(directory) -> list[str]:
    directory = os.fspath(directory)
    names = sorted(
        n for n in os.listdir(directory)
        if n.lower().endswith(IMAGE_EXTENSIONS) and os.path.isfile(os.path.join(directory, n))
    )
    return [os.path.join(directory, n) for n in names]


def _try_preprocess(path: str, size: int):
    try:
        return preprocess(path, size), None
    except (FormatError, OSError) as exc:
        return None, str(exc)


def build_dataset(class_dirs: Sequence, size: int = IMAGE_SIZE, threads: int | None = None) -> LabeledDataset:
    """Preprocess every image under the four class directories.

    Directory ``i`` supplies label ``i``; files are visited in lexicographic
    order. Undecodable files are skipped and recorded in ``errors``.
    """
    if len(class_dirs) != NUM_CLASSES:
        raise ContractError(f"expected {NUM_CLASSES} class directories, got {len(class_dirs)}")
    files: list[tuple[str, int]] = []
    for label, directory in enumerate(class_dirs):
        files.extend((p, label) for p in list_images(directory))

    threads = env_threads() if threads is None else threads
    paths = [p for p, _ in files]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(_try_preprocess, paths, [size] * len(paths)))
    else:
        results = [_try_preprocess(p, size) for p in paths]

    images, labels, kept, errors = [], [], [], []
    for (path, label), (img, err) in zip(files, results):
        if err is not None:
            logger.warning("skipping %s: %s", path, err)
            errors.append((path, err))
            continue
        images.append(img)
        labels.append(label)
        kept.append(path)
    if not images:
        raise ContractError("no decodable images found in the class directories")
    ds = LabeledDataset(np.stack(images), np.array(labels), kept, errors=errors)
    logger.info("built dataset: %d images, class counts %s, %d skipped", len(ds), ds.class_counts(), len(errors))
    return ds


def write_manifest(path, rows: Sequence[tuple[str, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"])
        w.writerows((p, int(l)) for p, l in rows)


def read_manifest(path) -> list[tuple[str, int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "label"]:
            raise FormatError(f"{path}: manifest header must be 'path,label'")
        return [(row["path"], int(row["label"])) for row in reader]


def load_cached(directory) -> LabeledDataset:
    """Load a dataset written by the ``preprocess`` command (manifest + ``.pcvt`` files)."""
    directory = os.fspath(directory)
    rows = read_manifest(os.path.join(directory, MANIFEST_NAME))
    if not rows:
        raise ContractError(f"{directory}: manifest is empty")
    images = []
    for rel, _ in rows:
        tensors, _ = checkpoint.load(os.path.join(directory, rel))
        images.append(tensors["image"])
    return LabeledDataset(np.stack(images), np.array([l for _, l in rows]), [r for r, _ in rows])


def load_dataset(data_dir, size: int = IMAGE_SIZE) -> LabeledDataset:
    """Load either a preprocessed cache (has ``manifest.csv``) or a raw image tree."""
    if os.path.isfile(os.path.join(data_dir, MANIFEST_NAME)):
        ds = load_cached(data_dir)
        if ds.image_size != size:
            raise ContractError(f"cached images are {ds.image_size}px but the model expects {size}px")
        return ds
    return build_dataset(class_dirs_from_root(data_dir), size)


def train_size(n: int, train_fraction: float) -> int:
    """``floor(train_fraction * n)`` computed exactly on the decimal fraction."""
    return int(Fraction(repr(train_fraction)) * n)


def split_indices(labels: Sequence[int], spec: SplitSpec = SplitSpec()) -> tuple[list[int], list[int]]:
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ContractError("cannot split an empty dataset")
    if spec.stratified:
        train, test = [], []
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c).tolist()
            order = rng.permutation(len(members), spec.seed, int(c)) if spec.shuffle else range(len(members))
            members = [members[i] for i in order]
            k = train_size(len(members), spec.train_fraction)
            train.extend(members[:k])
            test.extend(members[k:])
    else:
        order = rng.permutation(n, spec.seed) if spec.shuffle else list(range(n))
        k = train_size(n, spec.train_fraction)
        train, test = order[:k], order[k:]
    return sorted(train), sorted(test)


def split(ds: LabeledDataset, spec: SplitSpec = SplitSpec()) -> tuple[LabeledDataset, LabeledDataset]:
    train, test = split_indices(ds.labels, spec)
    return ds.subset(train), ds.subset(test)


def batch_order(n: int, shuffle: bool, seed: int = 0, epoch: int = 0) -> list[int]:
    return rng.permutation(n, seed, epoch) if shuffle else list(range(n))


def batches(
    ds: LabeledDataset, batch_size: int = 32, shuffle: bool = False, seed: int = 0, epoch: int = 0
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield ``(images[B, 3, H, W], labels[B])``; the final batch may be short."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    order = np.asarray(batch_order(len(ds), shuffle, seed, epoch), dtype=np.int64)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Tensor(ds.images[idx]), ds.labels[idx]
