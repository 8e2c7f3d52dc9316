import gzip
import struct

import numpy as np
import pytest

from nlcnn.datasets import (CIFAR_RECORD, load_cifar10, load_idx, load_split, one_hot, read_idx_images,
                            read_idx_labels, write_idx)
from nlcnn.errors import ConfigError, DatasetFormatError


def idx_images(arr, magic=0x803):
    arr = np.asarray(arr, np.uint8)
    return struct.pack(">4I", magic, *arr.shape) + arr.tobytes()


def idx_labels(arr, magic=0x801):
    arr = np.asarray(arr, np.uint8)
    return struct.pack(">2I", magic, len(arr)) + arr.tobytes()


@pytest.fixture
def two_images(tmp_path):
    img = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4) * 10
    (tmp_path / "img").write_bytes(idx_images(img))
    (tmp_path / "lab").write_bytes(idx_labels([7, 2]))
    return tmp_path, img


def test_idx_values_are_scaled(two_images):
    d, img = two_images
    ds = load_idx(d / "img", d / "lab")
    assert ds.images.shape == (2, 3, 4, 1) and ds.images.dtype == np.float32
    np.testing.assert_array_equal(ds.images[..., 0], img.astype(np.float32) / 255)
    assert ds.images[1, 2, 3, 0] == np.float32(230 / 255)
    assert ds.labels.tolist() == [7, 2]


def test_idx_reads_gzip_and_falls_back_to_gz_name(tmp_path, two_images):
    d, img = two_images
    (tmp_path / "z-img.gz").write_bytes(gzip.compress((d / "img").read_bytes()))
    np.testing.assert_array_equal(read_idx_images(tmp_path / "z-img"), img)


def test_idx_write_is_byte_exact(two_images, tmp_path):
    d, img = two_images
    out = tmp_path / "out"
    out.mkdir()
    write_idx(out / "img", out / "lab", read_idx_images(d / "img"), read_idx_labels(d / "lab"))
    assert (out / "img").read_bytes() == (d / "img").read_bytes()
    assert (out / "lab").read_bytes() == (d / "lab").read_bytes()


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(idx_images(np.zeros((1, 2, 2)), magic=0x801))
    with pytest.raises(DatasetFormatError) as e:
        read_idx_images(p)
    assert e.value.offset == 0 and "magic" in str(e.value)


def test_idx_truncated_and_trailing(tmp_path):
    p = tmp_path / "x"
    good = idx_images(np.ones((2, 2, 2)))
    p.write_bytes(good[:-1])
    with pytest.raises(DatasetFormatError, match="truncated"):
        read_idx_images(p)
    p.write_bytes(good[:10])
    with pytest.raises(DatasetFormatError, match="header"):
        read_idx_images(p)
    p.write_bytes(good + b"\0")
    with pytest.raises(DatasetFormatError, match="trailing") as e:
        read_idx_images(p)
    assert e.value.offset == len(good)


def test_idx_count_mismatch(two_images):
    d, _ = two_images
    (d / "lab").write_bytes(idx_labels([1, 2, 3]))
    with pytest.raises(DatasetFormatError, match="2 images but 3 labels"):
        load_idx(d / "img", d / "lab")


def test_idx_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_idx_labels(tmp_path / "nope")


def cifar_record(label, planes):
    return bytes([label]) + np.asarray(planes, np.uint8).tobytes()


def test_cifar_record_layout(tmp_path):
    planes = np.zeros((3, 32, 32), np.uint8)
    planes[0] = 255
    planes[2, 5, 7] = 51
    p = tmp_path / "b.bin"
    p.write_bytes(cifar_record(3, planes) + cifar_record(9, np.zeros((3, 32, 32))))
    ds = load_cifar10([p])
    assert ds.images.shape == (2, 32, 32, 3)
    assert ds.labels.tolist() == [3, 9]
    assert np.all(ds.images[0, ..., 0] == 1.0) and np.all(ds.images[0, ..., 1] == 0.0)
    assert ds.images[0, 5, 7, 2] == np.float32(0.2)


def test_cifar_bad_length_and_label(tmp_path):
    p = tmp_path / "b.bin"
    p.write_bytes(b"\0" * (CIFAR_RECORD + 5))
    with pytest.raises(DatasetFormatError, match="multiple") as e:
        load_cifar10([p])
    assert e.value.offset == CIFAR_RECORD
    p.write_bytes(b"\x0a" + b"\0" * (CIFAR_RECORD - 1))
    with pytest.raises(DatasetFormatError, match="label"):
        load_cifar10([p])


def test_cifar_empty_is_config_error(tmp_path):
    p = tmp_path / "b.bin"
    p.write_bytes(b"")
    with pytest.raises(ConfigError):
        load_cifar10([p])


def test_cifar_split_directory(tmp_path):
    sub = tmp_path / "cifar-10-batches-bin"
    sub.mkdir()
    (sub / "test_batch.bin").write_bytes(cifar_record(1, np.zeros((3, 32, 32))))
    ds = load_split("cifar10", tmp_path, "test")
    assert len(ds) == 1 and ds.num_classes == 10


def test_load_split_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_split("idx", tmp_path / "missing", "train")
    with pytest.raises(ConfigError):
        load_split("idx", tmp_path, "valid")
    with pytest.raises(ConfigError):
        load_split("svhn", tmp_path, "train")


def test_one_hot():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
    assert one_hot(np.array([1]), 4, dtype=np.float64).dtype == np.float64


def test_subset(two_images):
    d, _ = two_images
    ds = load_idx(d / "img", d / "lab")
    assert len(ds.subset(1)) == 1 and ds.subset(None) is ds and ds.subset(5) is ds


def test_desk_mnist(mnist_dir):
    tr = load_split("idx", mnist_dir, "train")
    te = load_split("idx", mnist_dir, "test")
    assert tr.images.shape == (8000, 28, 28, 1) and te.images.shape == (2000, 28, 28, 1)
    assert 0.0 <= tr.images.min() and tr.images.max() == 1.0
    assert set(np.unique(tr.labels)) == set(range(10))
