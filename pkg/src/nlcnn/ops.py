"""Layer kernels (forward and backward) on NHWC tensors.

A ``Tensor4`` here is simply a 4-d numpy array laid out as
(batch, height, width, channels). float32 is the working precision;
every op preserves the dtype it is given, so float64 inputs give a
float64 path for gradient checks.

Kernels are pure functions: they never modify their inputs. Batch-norm in
training mode returns the updated moving statistics as a new state.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ShapeError

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99


def as_tensor4(x, name="x"):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (n, h, w, c), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")
    return x


@dataclass
class ConvKernel:
    weights: np.ndarray  # (3, 3, c_in, c_out)
    bias: np.ndarray  # (c_out,)

    @property
    def c_in(self):
        return self.weights.shape[2]

    @property
    def c_out(self):
        return self.weights.shape[3]


@dataclass
class SepConvKernel:
    depthwise: np.ndarray  # (3, 3, c_in)
    pointwise: np.ndarray  # (c_in, c_out)
    bias: np.ndarray  # (c_out,)

    @property
    def c_in(self):
        return self.depthwise.shape[2]

    @property
    def c_out(self):
        return self.pointwise.shape[1]

    def composed(self):
        """The equivalent full 3x3 kernel (rank-1 across the spatial/output split)."""
        w = self.depthwise[:, :, :, None] * self.pointwise[None, None, :, :]
        return ConvKernel(w, self.bias)


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM
    # With debias the moving averages are zero-debiased like Adam's moments:
    # update t uses weight (1 - momentum) / (1 - momentum**t) on the batch
    # statistic, so the initial 0 / 1 values carry no weight after the first
    # update. The asymptotic rate is still ``momentum``.
    debias: bool = False
    updates: int = 0

    @classmethod
    def fresh(cls, channels, dtype=np.float32, debias=False):
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            moving_mean=np.zeros(channels, dtype),
            moving_var=np.ones(channels, dtype),
            debias=debias,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


# --- convolution -----------------------------------------------------------

def conv2d_forward(x, k: ConvKernel):
    x = as_tensor4(x)
    if x.shape[3] != k.c_in:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, kernel expects {k.c_in}")
    n, h, w, _ = x.shape
    cols = kernels.im2col3x3(x)
    out = cols @ k.weights.reshape(9 * k.c_in, k.c_out)
    out += k.bias
    return out.reshape(n, h, w, k.c_out)


def conv2d_backward(x, k: ConvKernel, grad_out):
    """Returns ``(grad_x, grad_weights, grad_bias)``."""
    x = as_tensor4(x)
    grad_out = as_tensor4(grad_out, "grad_out")
    n, h, w, c_in = x.shape
    if c_in != k.c_in or grad_out.shape != (n, h, w, k.c_out):
        raise ShapeError(
            f"conv2d_backward: x {x.shape}, kernel {k.weights.shape}, grad_out {grad_out.shape}"
        )
    g = grad_out.reshape(-1, k.c_out)
    cols = kernels.im2col3x3(x)
    grad_w = (cols.T @ g).reshape(k.weights.shape)
    grad_b = g.sum(axis=0)
    grad_cols = g @ k.weights.reshape(9 * c_in, k.c_out).T
    grad_x = kernels.col2im3x3(grad_cols, x.shape)
    return grad_x, grad_w, grad_b


def sepconv2d_forward(x, k: SepConvKernel):
    x = as_tensor4(x)
    if x.shape[3] != k.c_in:
        raise ShapeError(f"sepconv2d: input has {x.shape[3]} channels, kernel expects {k.c_in}")
    n, h, w, _ = x.shape
    d = kernels.depthwise3x3_forward(x, k.depthwise)
    out = d.reshape(-1, k.c_in) @ k.pointwise
    out += k.bias
    return out.reshape(n, h, w, k.c_out)


def sepconv2d_backward(x, k: SepConvKernel, grad_out):
    """Returns ``(grad_x, grad_depthwise, grad_pointwise, grad_bias)``."""
    x = as_tensor4(x)
    grad_out = as_tensor4(grad_out, "grad_out")
    n, h, w, c_in = x.shape
    if c_in != k.c_in or grad_out.shape != (n, h, w, k.c_out):
        raise ShapeError(
            f"sepconv2d_backward: x {x.shape}, depthwise {k.depthwise.shape}, "
            f"pointwise {k.pointwise.shape}, grad_out {grad_out.shape}"
        )
    g = grad_out.reshape(-1, k.c_out)
    d = kernels.depthwise3x3_forward(x, k.depthwise).reshape(-1, c_in)
    grad_pw = d.T @ g
    grad_b = g.sum(axis=0)
    grad_d = (g @ k.pointwise.T).reshape(n, h, w, c_in)
    grad_x, grad_dw = kernels.depthwise3x3_backward(x, k.depthwise, grad_d)
    return grad_x, grad_dw, grad_pw, grad_b


# --- pooling ---------------------------------------------------------------

@dataclass(frozen=True)
class PoolIndex:
    """Argmax map of a 4x4/stride-2 max-pool plus the pooled input's shape."""

    argmax: np.ndarray
    in_shape: tuple


def maxpool4x4s2_forward(x):
    """4x4 windows, stride 2, 'same' padding that never wins the max.

    Output is ceil(h/2) x ceil(w/2). The argmax keeps the first maximum in
    row-major window order.
    """
    x = as_tensor4(x)
    y, arg = kernels.maxpool4x4s2_forward(x)
    return y, PoolIndex(arg, x.shape)


def maxpool4x4s2_backward(index: PoolIndex, grad_out):
    grad_out = as_tensor4(grad_out, "grad_out")
    if grad_out.shape != index.argmax.shape:
        raise ShapeError(
            f"maxpool backward: grad_out {grad_out.shape} does not match argmax {index.argmax.shape}"
        )
    return kernels.maxpool4x4s2_backward(index.argmax, grad_out, index.in_shape[1:3])


# --- normalisation ---------------------------------------------------------

@dataclass(frozen=True)
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def batchnorm_forward(x, s: BatchNormState, train):
    """Returns ``(y, new_state, cache)``; ``cache`` is None in inference mode."""
    x = as_tensor4(x)
    if x.shape[3] != s.channels:
        raise ShapeError(f"batchnorm: input has {x.shape[3]} channels, state has {s.channels}")
    if not train:
        inv_std = 1.0 / np.sqrt(s.moving_var + s.epsilon)
        scale = (s.gamma * inv_std).astype(x.dtype)
        shift = (s.beta - s.moving_mean * s.gamma * inv_std).astype(x.dtype)
        return x * scale + shift, s, None

    m = x.shape[0] * x.shape[1] * x.shape[2]
    if m < 2:
        raise ShapeError("batchnorm in training mode needs at least 2 values per channel")
    flat = x.reshape(-1, x.shape[3])
    mean = flat.mean(axis=0)
    var = flat.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + s.epsilon)
    x_hat = (x - mean) * inv_std
    y = x_hat * s.gamma + s.beta
    w = 1.0 - s.momentum
    if s.debias:
        w /= 1.0 - s.momentum ** (s.updates + 1)
    new = replace(
        s,
        moving_mean=((1 - w) * s.moving_mean + w * mean).astype(s.moving_mean.dtype),
        moving_var=((1 - w) * s.moving_var + w * var).astype(s.moving_var.dtype),
        updates=s.updates + 1,
    )
    return y, new, BatchNormCache(x_hat, inv_std, s.gamma)


def batchnorm_backward(cache: BatchNormCache, grad_out):
    """Returns ``(grad_x, grad_gamma, grad_beta)`` for a training-mode forward."""
    grad_out = as_tensor4(grad_out, "grad_out")
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f"batchnorm backward: grad_out {grad_out.shape} vs {cache.x_hat.shape}")
    c = grad_out.shape[3]
    g = grad_out.reshape(-1, c)
    xh = cache.x_hat.reshape(-1, c)
    m = g.shape[0]
    grad_beta = g.sum(axis=0)
    grad_gamma = (g * xh).sum(axis=0)
    grad_x = (cache.gamma * cache.inv_std / m) * (m * g - grad_beta - xh * grad_gamma)
    return grad_x.reshape(grad_out.shape), grad_gamma, grad_beta


# --- activations, heads ----------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    if np.shape(x) != np.shape(grad_out):
        raise ShapeError(f"relu backward: x {np.shape(x)} vs grad_out {np.shape(grad_out)}")
    return grad_out * (x > 0)


def global_avg_pool(x):
    x = as_tensor4(x)
    return x.mean(axis=(1, 2), keepdims=True)


def global_avg_pool_backward(in_shape, grad_out):
    n, h, w, c = in_shape
    if grad_out.shape != (n, 1, 1, c):
        raise ShapeError(f"GAP backward: grad_out {grad_out.shape} for input {in_shape}")
    return np.broadcast_to(grad_out / (h * w), in_shape).copy()


def flatten(x):
    x = as_tensor4(x)
    return x.reshape(x.shape[0], 1, 1, -1)


def flatten_backward(in_shape, grad_out):
    return grad_out.reshape(in_shape)


def dense_forward(x, weights, bias):
    """``x`` is (n, 1, 1, f) or (n, f); returns logits (n, classes)."""
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: {x2.shape[1]} features, weights expect {weights.shape[0]}")
    return x2 @ weights + bias


def dense_backward(x, weights, grad_out):
    """Returns ``(grad_x, grad_weights, grad_bias)``; ``grad_x`` has ``x``'s shape."""
    x2 = x.reshape(x.shape[0], -1)
    if grad_out.shape != (x2.shape[0], weights.shape[1]):
        raise ShapeError(f"dense backward: grad_out {grad_out.shape}, weights {weights.shape}")
    return (grad_out @ weights.T).reshape(x.shape), x2.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, one_hot):
    """Mean categorical cross-entropy. Returns ``(loss, probs, grad_logits)``."""
    logits = np.asarray(logits)
    one_hot = np.asarray(one_hot)
    if logits.ndim != 2 or one_hot.shape != logits.shape:
        raise ShapeError(f"softmax_xent: logits {logits.shape} vs labels {one_hot.shape}")
    if not (np.all((one_hot == 0) | (one_hot == 1)) and np.all(one_hot.sum(axis=1) == 1)):
        raise ShapeError("softmax_xent: labels must be one-hot rows")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_z
    probs = np.exp(log_p)
    loss = float(-(one_hot * log_p).sum() / n)
    grad = ((probs - one_hot) / n).astype(logits.dtype)
    return loss, probs, grad
