"""Materialised NL-CNN: weights, forward/backward, parameter registry."""
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ShapeError
from .model import ModelPlan


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """One plan entry. Stateless layers only implement forward/backward."""

    def __init__(self, spec):
        self.spec = spec
        self.params = {}  # trainable, in registry order

    @property
    def name(self):
        return self.spec.name

    def arrays(self):
        """Every stored array (trainable and not), in file order."""
        return list(self.params.items())

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, cache, g):
        raise NotImplementedError


class Conv(Layer):
    def __init__(self, spec, rng, dtype):
        super().__init__(spec)
        ci, co = spec.c_in, spec.c_out
        self.params["weights"] = glorot_uniform(rng, (3, 3, ci, co), 9 * ci, 9 * co, dtype)
        self.params["bias"] = np.zeros(co, dtype)

    @property
    def kernel(self):
        return ops.ConvKernel(self.params["weights"], self.params["bias"])

    def forward(self, x, train):
        return ops.conv2d_forward(x, self.kernel), x

    def backward(self, x, g):
        gx, gw, gb = ops.conv2d_backward(x, self.kernel, g)
        return gx, [gw, gb]


class SepConv(Layer):
    def __init__(self, spec, rng, dtype):
        super().__init__(spec)
        ci, co = spec.c_in, spec.c_out
        self.params["depthwise"] = glorot_uniform(rng, (3, 3, ci), 9, 9, dtype)
        self.params["pointwise"] = glorot_uniform(rng, (ci, co), ci, co, dtype)
        self.params["bias"] = np.zeros(co, dtype)

    @property
    def kernel(self):
        p = self.params
        return ops.SepConvKernel(p["depthwise"], p["pointwise"], p["bias"])

    def forward(self, x, train):
        return ops.sepconv2d_forward(x, self.kernel), x

    def backward(self, x, g):
        gx, gdw, gpw, gb = ops.sepconv2d_backward(x, self.kernel, g)
        return gx, [gdw, gpw, gb]


class ReLU(Layer):
    def forward(self, x, train):
        return ops.relu_forward(x), x

    def backward(self, x, g):
        return ops.relu_backward(x, g), []


class MaxPool(Layer):
    def forward(self, x, train):
        return ops.maxpool4x4s2_forward(x)

    def backward(self, index, g):
        return ops.maxpool4x4s2_backward(index, g), []


class BatchNorm(Layer):
    def __init__(self, spec, dtype):
        super().__init__(spec)
        self.state = ops.BatchNormState.fresh(spec.c_out, dtype, debias=True)
        self.params["gamma"] = self.state.gamma
        self.params["beta"] = self.state.beta

    def arrays(self):
        s = self.state
        return [("gamma", s.gamma), ("beta", s.beta),
                ("moving_mean", s.moving_mean), ("moving_var", s.moving_var)]

    def forward(self, x, train):
        y, new_state, cache = ops.batchnorm_forward(x, self.state, train)
        return y, (cache, new_state)

    def backward(self, cache, g):
        gx, gg, gb = ops.batchnorm_backward(cache[0], g)
        return gx, [gg, gb]

    def commit(self, new_state):
        # gamma/beta stay the same objects so the optimizer keeps updating them in place
        self.state.moving_mean[...] = new_state.moving_mean
        self.state.moving_var[...] = new_state.moving_var
        self.state.updates = new_state.updates


class Flatten(Layer):
    def forward(self, x, train):
        return ops.flatten(x), x.shape

    def backward(self, shape, g):
        return ops.flatten_backward(shape, g), []


class GlobalAvgPool(Layer):
    def forward(self, x, train):
        return ops.global_avg_pool(x), x.shape

    def backward(self, shape, g):
        return ops.global_avg_pool_backward(shape, g), []


class Dense(Layer):
    def __init__(self, spec, rng, dtype):
        super().__init__(spec)
        f, c = spec.in_shape[0], spec.out_shape[0]
        self.params["weights"] = glorot_uniform(rng, (f, c), f, c, dtype)
        self.params["bias"] = np.zeros(c, dtype)

    def forward(self, x, train):
        return ops.dense_forward(x, self.params["weights"], self.params["bias"]), x

    def backward(self, x, g):
        gx, gw, gb = ops.dense_backward(x, self.params["weights"], g)
        return gx, [gw, gb]


@dataclass
class ParamRegistry:
    """Parallel lists over every trainable array and its gradient."""

    names: list
    params: list
    grads: list = field(default_factory=list)

    def __len__(self):
        return len(self.params)

    def layer_of(self, i):
        return self.names[i].split(".", 1)[0]


@dataclass
class ForwardCache:
    input_shape: tuple
    entries: list  # one per layer, aligned with Network.layers
    bn_updates: dict  # layer name -> new BatchNormState


class Network:
    """Instantiated weights for a :class:`ModelPlan`.

    ``forward(x, train=True)`` returns a per-call cache for ``backward`` and
    the batch-norm statistics it computed; those only reach the network when
    :meth:`commit` is called, so forward itself never mutates the weights.
    """

    def __init__(self, plan: ModelPlan, seed=0, dtype=np.float32):
        self.plan = plan
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.seed)
        self.layers = []
        for spec in plan.layers:
            if spec.kind == "conv":
                layer = Conv(spec, rng, self.dtype)
            elif spec.kind == "sepconv":
                layer = SepConv(spec, rng, self.dtype)
            elif spec.kind == "relu":
                layer = ReLU(spec)
            elif spec.kind == "maxpool":
                layer = MaxPool(spec)
            elif spec.kind == "batchnorm":
                layer = BatchNorm(spec, self.dtype)
            elif spec.kind == "flatten":
                layer = Flatten(spec)
            elif spec.kind == "gap":
                layer = GlobalAvgPool(spec)
            elif spec.kind == "dense":
                layer = Dense(spec, rng, self.dtype)
            elif spec.kind == "softmax":
                continue  # folded into the loss / predict
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
            self.layers.append(layer)

    @property
    def hp(self):
        return self.plan.hp

    def registry(self):
        names, params = [], []
        for layer in self.layers:
            for pname, arr in layer.params.items():
                names.append(f"{layer.name}.{pname}")
                params.append(arr)
        return ParamRegistry(names, params)

    def state_arrays(self):
        """``(name, array)`` for every stored scalar, trainable or not."""
        return [(f"{layer.name}.{n}", a) for layer in self.layers for n, a in layer.arrays()]

    def num_params(self):
        return sum(a.size for _, a in self.state_arrays())

    def _check_input(self, x):
        x = ops.as_tensor4(x)
        if x.shape[1:] != self.hp.input_shape:
            raise ShapeError(f"network expects inputs (n, {', '.join(map(str, self.hp.input_shape))}), got {x.shape}")
        return x.astype(self.dtype, copy=False)

    def forward(self, x, train=False):
        """Returns ``(logits, cache)``; ``cache`` is None in inference mode."""
        x = self._check_input(x)
        if not train:
            for layer in self.layers:
                x, _ = layer.forward(x, False)
            return x, None
        entries = []
        updates = {}
        shape = x.shape
        for layer in self.layers:
            x, c = layer.forward(x, True)
            entries.append(c)
            if isinstance(layer, BatchNorm):
                updates[layer.name] = c[1]
        return x, ForwardCache(shape, entries, updates)

    def backward(self, cache: ForwardCache, grad_logits):
        """Gradients of every trainable array, in registry order."""
        if cache is None or len(cache.entries) != len(self.layers):
            raise ShapeError("backward needs the cache of a training-mode forward on this network")
        grad_logits = np.asarray(grad_logits)
        if grad_logits.shape != (cache.input_shape[0], self.hp.num_classes):
            raise ShapeError(
                f"grad_logits {grad_logits.shape} does not match batch {cache.input_shape[0]} "
                f"x {self.hp.num_classes} classes"
            )
        per_layer = []
        g = grad_logits
        for layer, c in zip(reversed(self.layers), reversed(cache.entries)):
            g, grads = layer.backward(c, g)
            per_layer.append(grads)
        reg = self.registry()
        reg.grads = [gr for grads in reversed(per_layer) for gr in grads]
        return reg

    def commit(self, cache: ForwardCache):
        """Adopt the batch-norm moving statistics computed by a training forward."""
        for layer in self.layers:
            if isinstance(layer, BatchNorm) and layer.name in cache.bn_updates:
                layer.commit(cache.bn_updates[layer.name])

    def predict_logits(self, x, batch_size=500):
        x = self._check_input(x)
        out = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def pre_pool_activation(self, x, macro=0):
        """Output of macro-layer ``macro``'s last conv+ReLU stage (inference mode)."""
        x = self._check_input(x)
        prefix = f"m{macro}_"
        for layer in self.layers:
            if layer.name.startswith(prefix) and layer.spec.kind in ("maxpool", "batchnorm"):
                return x
            x, _ = layer.forward(x, False)
        raise ValueError(f"network has no macro-layer {macro}")


def init_network(plan: ModelPlan, seed=0, dtype=np.float32) -> Network:
    return Network(plan, seed=seed, dtype=dtype)
