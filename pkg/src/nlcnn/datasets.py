"""MNIST-style IDX files and CIFAR-10 binary batches -> normalised NHWC tensors.

Pixels become ``u / 255`` as float32; nothing else is done to them.
IDX files may be gzip-compressed (``.gz``), as they are distributed.
"""
import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

IDX_SPLITS = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_SPLITS = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


@dataclass(frozen=True)
class LabeledSet:
    images: np.ndarray  # (n, h, w, c) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int
    name: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigError(f"{self.name}: {len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and self.labels.max() >= self.num_classes:
            raise ConfigError(f"{self.name}: label {self.labels.max()} >= num_classes {self.num_classes}")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return self.images.shape[1:]

    def subset(self, limit):
        if limit is None or limit >= len(self):
            return self
        return LabeledSet(self.images[:limit], self.labels[:limit], self.num_classes, self.name)


def one_hot(labels, num_classes, dtype=np.float32):
    labels = np.asarray(labels)
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise FileNotFoundError(path)
    with open(path, "rb") as f:
        head = f.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as f:
        return f.read(), path


def _parse_idx(buf, path, magic, ndim):
    header = 4 * (1 + ndim)
    if len(buf) < header:
        raise DatasetFormatError(f"IDX header needs {header} bytes, file has {len(buf)}", path, len(buf))
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise DatasetFormatError(f"IDX magic is 0x{got:08x}, expected 0x{magic:08x}", path, 0)
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    size = int(np.prod(dims))
    if len(buf) - header < size:
        raise DatasetFormatError(
            f"IDX payload truncated: dims {dims} need {size} bytes, found {len(buf) - header}",
            path, len(buf),
        )
    if len(buf) - header > size:
        raise DatasetFormatError(f"IDX file has {len(buf) - header - size} trailing bytes", path, header + size)
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx_images(path):
    buf, path = _read_bytes(path)
    return _parse_idx(buf, path, IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path):
    buf, path = _read_bytes(path)
    return _parse_idx(buf, path, IDX_LABELS_MAGIC, 1)


def write_idx(images_path, labels_path, images_u8, labels_u8):
    """Inverse of :func:`load_idx` for uint8 arrays (uncompressed)."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images_u8.shape))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels_u8)))
        f.write(labels_u8.tobytes())


def load_idx(images_path, labels_path, num_classes=10, name="idx"):
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DatasetFormatError(
            f"{len(images)} images but {len(labels)} labels", labels_path, 4
        )
    x = (images.astype(np.float32) / 255.0)[..., None]
    return LabeledSet(x, labels.astype(np.int64), num_classes, name)


def load_cifar10(batch_paths, name="cifar10"):
    images, labels = [], []
    for path in batch_paths:
        buf, path = _read_bytes(path)
        if len(buf) % CIFAR_RECORD:
            raise DatasetFormatError(
                f"CIFAR-10 file length {len(buf)} is not a multiple of {CIFAR_RECORD}",
                path, len(buf) - len(buf) % CIFAR_RECORD,
            )
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(rec[:, 0] >= 10)
        if len(bad):
            raise DatasetFormatError(f"label byte {rec[bad[0], 0]} >= 10", path, int(bad[0]) * CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    if not labels or sum(len(l) for l in labels) == 0:
        raise ConfigError("CIFAR-10: no records in " + ", ".join(map(str, batch_paths)))
    x = np.concatenate(images).astype(np.float32) / 255.0
    return LabeledSet(x, np.concatenate(labels), 10, name)


def default_data_dir():
    env = os.environ.get("NLCNN_DATA_DIR")
    return Path(env) if env else None


def load_split(kind, data_dir, split):
    """Load ``split`` ('train' or 'test') of an 'idx' or 'cifar10' dataset directory."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    if kind == "idx":
        img, lab = IDX_SPLITS[split]
        return load_idx(data_dir / img, data_dir / lab, name=f"{data_dir.name}/{split}")
    if kind == "cifar10":
        root = data_dir / "cifar-10-batches-bin"
        root = root if root.is_dir() else data_dir
        return load_cifar10([root / f for f in CIFAR_SPLITS[split]], name=f"cifar10/{split}")
    raise ConfigError(f"unknown dataset kind {kind!r}; expected 'idx' or 'cifar10'")
