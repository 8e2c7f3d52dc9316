"""``.nlcw`` weight files.

Layout (all integers little-endian)::

    b"NLCW"                 4 bytes
    version                 u16
    header length           u32
    header                  UTF-8 JSON: hyperparams, layers/arrays, seed,
                            metrics summary, scalar_count, payload_crc32
    payload                 float32 LE, every stored array in layer order
                            (trainable arrays first, then moving statistics)
"""
import json
import math
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ModelFileError
from .model import HyperParams, build_plan
from .network import Network

MAGIC = b"NLCW"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def save_model(net: Network, path, metrics=None, include_timing=True):
    arrays = net.state_arrays()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays)
    layers = []
    for layer in net.layers:
        entry = {"name": layer.name, "kind": layer.spec.kind,
                 "arrays": [{"name": n, "shape": list(a.shape)} for n, a in layer.arrays()]}
        layers.append(entry)
    header = {
        "hyperparams": net.hp.to_dict(),
        "seed": net.seed,
        "layers": layers,
        "metrics": {k: _jsonable(v) for k, v in (metrics.summary(include_timing) if metrics else {}).items()},
        "scalar_count": sum(a.size for _, a in arrays),
        "payload_crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(head)))
        f.write(head)
        f.write(payload)
    return Path(path).stat().st_size


def read_header(path):
    with open(path, "rb") as f:
        data = f.read()
    return _split(data, path)[0]


def _split(data, path):
    if len(data) < _PREFIX.size:
        raise ModelFileError(f"{path}: truncated before the header ({len(data)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported format version {version}")
    end = _PREFIX.size + hlen
    if len(data) < end:
        raise ModelFileError(f"{path}: header declares {hlen} bytes but the file ends early")
    try:
        header = json.loads(data[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{path}: header is not valid JSON ({e})") from None
    return header, data[end:]


def load_model(path):
    """Returns ``(network, hyperparams)``; the network is float32."""
    data = Path(path).read_bytes()
    header, payload = _split(data, path)
    try:
        hp = HyperParams.from_dict(header["hyperparams"])
        count = int(header["scalar_count"])
        crc = int(header["payload_crc32"])
        seed = int(header.get("seed", 0))
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"{path}: header is missing or has a bad field ({e})") from None
    if len(payload) != 4 * count:
        raise ModelFileError(
            f"{path}: payload holds {len(payload)} bytes, header declares {count} scalars ({4 * count} bytes)"
        )
    if zlib.crc32(payload) != crc:
        raise ModelFileError(f"{path}: payload checksum mismatch")

    net = Network(build_plan(hp), seed=seed)
    arrays = net.state_arrays()
    expected = sum(a.size for _, a in arrays)
    if expected != count:
        raise ModelFileError(f"{path}: architecture has {expected} scalars, file has {count}")
    declared = [(f"{l['name']}.{a['name']}", tuple(a["shape"])) for l in header["layers"] for a in l["arrays"]]
    actual = [(n, a.shape) for n, a in arrays]
    if declared != actual:
        raise ModelFileError(f"{path}: layer list does not match the architecture its hyper-parameters build")
    values = np.frombuffer(payload, dtype="<f4")
    pos = 0
    for _, a in arrays:
        a[...] = values[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    return net, hp
