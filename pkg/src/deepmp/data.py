"""Dataset loading: IDX (MNIST, Fashion-MNIST), CIFAR-10 binary batches.

Pixels are mapped from [0, 255] either to [-1, 1] with ``x / 127.5 - 1``
(``scaling="symmetric"``, the loader default) or to [0, 1] with ``x / 255``
(``scaling="unit"``, used for training).  Both maps are exactly invertible,
so every loader can re-serialize its input byte for byte.
"""

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3072

DATA_ENV = "DEEPMP_DATA"


class DataError(ValueError):
    """Malformed or missing dataset file."""


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = ""
    permutation: Optional[np.ndarray] = None
    source: tuple = field(default=(), repr=False)
    scaling: str = "symmetric"

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self):
        return self.inputs.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        src = (self.source[0], np.asarray(self.source[1])[idx]) if self.source else ()
        return replace(self, inputs=self.inputs[idx], labels=self.labels[idx], source=src)

    def raw_pixels(self):
        """Invert the pixel scaling back to the original bytes."""
        x = self.inputs
        if self.permutation is not None:
            x = x[:, np.argsort(self.permutation)]
        return unscale_pixels(x, self.scaling)

    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


SCALINGS = ("symmetric", "unit")


def scale_pixels(raw, scaling="symmetric"):
    if scaling == "symmetric":
        return raw.astype(np.float64) / 127.5 - 1.0
    if scaling == "unit":
        return raw.astype(np.float64) / 255.0
    raise ValueError(f"unknown scaling {scaling!r}; choose from {SCALINGS}")


def unscale_pixels(x, scaling="symmetric"):
    if scaling == "symmetric":
        return np.rint((x + 1.0) * 127.5).astype(np.uint8)
    return np.rint(x * 255.0).astype(np.uint8)


def _open(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def read_idx(path):
    """Parse an IDX file (unsigned-byte payload) into a uint8 array."""
    buf = _open(path)
    if len(buf) < 4:
        raise DataError(f"{path}: truncated header at offset {len(buf)}")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise DataError(f"{path}: bad magic number 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataError(f"{path}: truncated header at offset {len(buf)}, expected {header} bytes")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    size = int(np.prod(dims))
    if len(buf) < header + size:
        raise DataError(
            f"{path}: truncated payload at offset {len(buf)}, expected {header + size} bytes"
        )
    if len(buf) > header + size:
        raise DataError(f"{path}: {len(buf) - header - size} trailing bytes at offset {header + size}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(array, path):
    """Serialize a uint8 array in IDX format (inverse of :func:`read_idx`)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def _labels_path(images_path):
    p = str(images_path)
    for a, b in (("images-idx3", "labels-idx1"), ("images.idx3", "labels.idx1")):
        if a in p:
            return p.replace(a, b)
    raise DataError(f"cannot infer label file for {images_path}")


def load_idx(path, labels_path=None, name=None, scaling="symmetric"):
    """Load an IDX image file and its label file into a Dataset.

    Without ``labels_path`` the label file is looked up next to the images
    (``*-images-idx3-*`` -> ``*-labels-idx1-*``).
    """
    images = read_idx(path)
    labels = read_idx(labels_path or _labels_path(path))
    if images.ndim < 2 or labels.ndim != 1:
        raise DataError(f"{path}: unexpected dimensions {images.shape} / {labels.shape}")
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{path}: {images.shape[0]} images but {labels.shape[0]} labels")
    x = scale_pixels(images.reshape(images.shape[0], -1), scaling)
    n_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    return Dataset(
        x,
        labels.astype(np.int64),
        n_classes,
        name or Path(path).name,
        source=(str(Path(path).resolve()), np.arange(len(labels))),
        scaling=scaling,
    )


def read_cifar10(path):
    """Return ``(labels, pixels)`` as uint8 arrays from one CIFAR-10 binary batch."""
    buf = _open(path)
    if len(buf) % CIFAR_RECORD:
        n = len(buf) // CIFAR_RECORD
        raise DataError(f"{path}: truncated record at offset {n * CIFAR_RECORD}")
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0]
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataError(f"{path}: label {labels[bad]} out of range at offset {bad * CIFAR_RECORD}")
    return labels, rec[:, 1:]


def write_cifar10(labels, pixels, path):
    rec = np.concatenate([np.asarray(labels, np.uint8)[:, None], np.asarray(pixels, np.uint8)], axis=1)
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def load_cifar10(path, name=None, scaling="symmetric"):
    """Load a CIFAR-10 binary batch, or every ``data_batch_*.bin`` in a directory."""
    path = Path(path)
    files = sorted(path.glob("data_batch_*.bin")) if path.is_dir() else [path]
    if not files:
        raise DataError(f"no CIFAR-10 batches under {path}")
    parts = [read_cifar10(f) for f in files]
    labels = np.concatenate([p[0] for p in parts])
    pixels = np.concatenate([p[1] for p in parts])
    return Dataset(
        scale_pixels(pixels, scaling),
        labels.astype(np.int64),
        10,
        name or path.name,
        source=(str(path.resolve()), np.arange(len(labels))),
        scaling=scaling,
    )


def to_two_class(d):
    """Even digits -> +1, odd -> -1."""
    if d.n_classes != 10:
        raise ValueError(f"two-class split needs a 10-class dataset, got {d.n_classes} classes")
    y = np.where(d.labels % 2 == 0, 1, -1).astype(np.int64)
    return replace(d, labels=y, n_classes=2, name=d.name + "2")


def task_permutation(n_features, task, seed):
    """Pixel permutation of task ``task`` (0 is the identity)."""
    if task == 0:
        return np.arange(n_features)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(task,)))
    return rng.permutation(n_features)


def permuted_tasks(d, n_tasks, seed):
    """Copies of ``d`` with seeded pixel permutations; the first task is ``d`` itself.

    Permutations depend only on ``(seed, task)``, so calling this on the
    train and test split with the same seed permutes both identically.
    """
    if n_tasks < 1:
        raise ValueError("need at least one task")
    tasks = [d]
    for t in range(1, n_tasks):
        perm = task_permutation(d.n_features, t, seed)
        tasks.append(replace(d, inputs=d.inputs[:, perm], permutation=perm, name=f"{d.name}-perm{t}"))
    return tasks


# --------------------------------------------------------------------------
# named datasets under $DEEPMP_DATA

_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

_DIRS = {"mnist": "mnist", "fashion": "fashion", "cifar10": "cifar10"}


def data_root(root=None):
    return Path(root or os.environ.get(DATA_ENV, "data"))


def _find(base, stem):
    for cand in (base / stem, base / (stem + ".gz")):
        if cand.exists():
            return cand
    raise DataError(f"missing {stem} under {base}")


def load_dataset(name, split="train", root=None, scaling="unit"):
    """Load ``mnist``, ``fashion`` or ``cifar10``; a ``2`` suffix gives even/odd labels."""
    two = name.endswith("2")
    base_name = name[:-1].rstrip("_") if two else name
    if base_name not in _DIRS:
        raise DataError(f"unknown dataset {name!r}")
    base = data_root(root) / _DIRS[base_name]
    if base_name == "cifar10":
        path = base if split == "train" else _find(base, "test_batch.bin")
        d = load_cifar10(path, name=f"{base_name}-{split}", scaling=scaling)
    else:
        img, lab = _IDX_FILES[split]
        d = load_idx(_find(base, img), _find(base, lab), name=f"{base_name}-{split}", scaling=scaling)
    return to_two_class(d) if two else d
