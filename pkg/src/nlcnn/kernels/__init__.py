"""Hot loops behind the layer ops, with two interchangeable backends.

``NLCNN_BACKEND=numba`` (default when numba imports) runs ``@njit`` loops;
``NLCNN_BACKEND=numpy`` runs the vectorised numpy fallback. Both are
single-threaded and deterministic. :func:`use_backend` switches at runtime,
mostly for the benchmark and the backend-agreement tests.

Arrays are NHWC and C-contiguous. Max-pool argmax entries are flat spatial
indices ``i * w + j`` into the pooled input.
"""
import contextlib
import os

import numpy as np

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba

_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    _active = _BACKENDS[name]


def get_backend():
    return _active.__name__.rsplit("._", 1)[-1]


@contextlib.contextmanager
def use_backend(name):
    prev = get_backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


set_backend(os.environ.get("NLCNN_BACKEND", "numba" if _numba is not None else "numpy"))


def pool_geometry(size):
    """Output size and leading pad of a 4x4/stride-2 'same' max-pool axis."""
    out = -(-size // 2)
    pad_total = max((out - 1) * 2 + 4 - size, 0)
    return out, pad_total // 2


def im2col3x3(x):
    return _active.im2col3x3(np.ascontiguousarray(x))


def col2im3x3(cols, shape):
    n, h, w, c = shape
    return _active.col2im3x3(np.ascontiguousarray(cols), n, h, w, c)


def depthwise3x3_forward(x, dw):
    return _active.depthwise3x3_forward(np.ascontiguousarray(x), np.ascontiguousarray(dw))


def depthwise3x3_backward(x, dw, g):
    return _active.depthwise3x3_backward(
        np.ascontiguousarray(x), np.ascontiguousarray(dw), np.ascontiguousarray(g)
    )


def maxpool4x4s2_forward(x):
    _, h, w, _ = x.shape
    oh, pb_h = pool_geometry(h)
    ow, pb_w = pool_geometry(w)
    return _active.maxpool4x4s2_forward(np.ascontiguousarray(x), oh, ow, pb_h, pb_w)


def maxpool4x4s2_backward(argmax, g, in_hw):
    h, w = in_hw
    return _active.maxpool4x4s2_backward(argmax, np.ascontiguousarray(g), h, w)
