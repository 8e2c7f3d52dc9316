"""Mini-batch Adam training and evaluation."""
import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .datasets import LabeledSet, one_hot
from .errors import ConfigError, NumericError
from .network import Network, ParamRegistry

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "train_acc", "test_acc", "wall_seconds"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-7
    seed: int = 0
    deterministic: bool = False

    def validate(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.learning_rate < 0 or self.adam_epsilon <= 0:
            raise ConfigError("learning_rate must be >= 0 and adam_epsilon > 0")


def adam_step(params, grads, m, v, t, cfg: TrainConfig, names=None):
    """One bias-corrected Adam update, in place on ``params``, ``m`` and ``v``."""
    if t < 1:
        raise ValueError(f"Adam step count starts at 1, got {t}")
    if not (len(params) == len(grads) == len(m) == len(v)):
        raise ValueError("params, grads and moments must be congruent")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            where = names[i] if names else f"parameter #{i}"
            raise NumericError(f"non-finite gradient in {where}")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= b1
        mi += (1.0 - b1) * g
        vi *= b2
        vi += (1.0 - b2) * (g * g)
        m_hat = mi / c1
        v_hat = vi / c2
        p -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)).astype(p.dtype)


class Adam:
    """Holds the moment estimates for a registry between steps."""

    def __init__(self, registry: ParamRegistry, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in registry.params]
        self.v = [np.zeros_like(p) for p in registry.params]
        self.t = 0

    def step(self, registry: ParamRegistry):
        self.t += 1
        adam_step(registry.params, registry.grads, self.m, self.v, self.t, self.cfg, registry.names)


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float  # nan when no test set was given
    wall_seconds: float


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)
    param_total: int = 0
    steps: int = 0

    @property
    def best_test_acc(self):
        accs = [r.test_acc for r in self.rows if not np.isnan(r.test_acc)]
        return max(accs) if accs else float("nan")

    @property
    def total_train_seconds(self):
        return sum(r.wall_seconds for r in self.rows)

    @property
    def final(self):
        return self.rows[-1] if self.rows else None

    def summary(self, include_timing=True):
        return {
            "epochs": len(self.rows),
            "best_test_acc": self.best_test_acc,
            "final_test_acc": self.final.test_acc if self.rows else float("nan"),
            "total_train_seconds": self.total_train_seconds if include_timing else None,
            "param_total": self.param_total,
        }

    def to_csv(self, include_timing=True):
        """CSV text; with ``include_timing=False`` the wall-time column is left empty
        so that deterministic runs produce byte-identical files."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            w.writerow([
                r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.test_acc),
                f"{r.wall_seconds:.3f}" if include_timing else "",
            ])
        return buf.getvalue()


def shuffled_indices(rng, n):
    """Uniform random permutation of ``range(n)`` drawn from ``rng``."""
    return rng.permutation(n)


def count_correct(logits, labels):
    """Number of rows whose argmax (lowest index on ties) equals the label."""
    return int((np.argmax(logits, axis=1) == labels).sum())


def evaluate(net: Network, dataset: LabeledSet, batch_size=500):
    """Inference-mode ``(mean loss, accuracy)``; ties in argmax go to the lowest class."""
    if len(dataset) == 0:
        raise ConfigError(f"{dataset.name}: cannot evaluate an empty set")
    _check_compatible(net, dataset)
    total_loss = 0.0
    correct = 0
    for i in range(0, len(dataset), batch_size):
        xb = dataset.images[i:i + batch_size]
        yb = dataset.labels[i:i + batch_size]
        logits, _ = net.forward(xb)
        loss, _, _ = ops.softmax_xent(logits, one_hot(yb, net.hp.num_classes, logits.dtype))
        total_loss += loss * len(yb)
        correct += count_correct(logits, yb)
    return total_loss / len(dataset), correct / len(dataset)


def _check_compatible(net, dataset):
    if tuple(dataset.input_shape) != net.hp.input_shape:
        raise ConfigError(
            f"{dataset.name}: images are {tuple(dataset.input_shape)} but the model expects {net.hp.input_shape}"
        )
    if dataset.num_classes != net.hp.num_classes:
        raise ConfigError(
            f"{dataset.name}: {dataset.num_classes} classes but the model has {net.hp.num_classes} outputs"
        )


def train(net: Network, train_set: LabeledSet, cfg: TrainConfig, test_set: LabeledSet = None,
          max_steps=None, on_epoch=None):
    """Train ``net`` in place. Returns ``(net, RunMetrics)``.

    Each epoch shuffles with a generator seeded once from ``cfg.seed``, runs
    every mini-batch (the last one may be short), then evaluates on
    ``test_set`` in inference mode. ``wall_seconds`` covers the batches only.
    ``max_steps`` stops after that many optimizer steps (the epoch row is still
    recorded). ``on_epoch(row)`` runs after each epoch; a truthy return stops
    training early.
    """
    cfg.validate()
    if len(train_set) == 0:
        raise ConfigError(f"{train_set.name}: training set is empty")
    _check_compatible(net, train_set)
    if test_set is not None:
        _check_compatible(net, test_set)

    rng = np.random.default_rng(cfg.seed)
    reg = net.registry()
    opt = Adam(reg, cfg)
    metrics = RunMetrics(param_total=net.num_params())
    n = len(train_set)
    steps = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffled_indices(rng, n)
        loss_sum = 0.0
        correct = 0
        seen = 0
        t0 = time.perf_counter()
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb = train_set.images[idx]
            yb = train_set.labels[idx]
            logits, cache = net.forward(xb, train=True)
            loss, _, grad = ops.softmax_xent(logits, one_hot(yb, net.hp.num_classes, logits.dtype))
            if not np.isfinite(loss):
                raise NumericError(f"loss became {loss} at epoch {epoch}, step {steps + 1}")
            opt.step(net.backward(cache, grad))
            net.commit(cache)
            loss_sum += loss * len(idx)
            correct += count_correct(logits, yb)
            seen += len(idx)
            steps += 1
            metrics.steps = steps
            if max_steps is not None and steps >= max_steps:
                break
        wall = time.perf_counter() - t0
        test_acc = evaluate(net, test_set)[1] if test_set is not None else float("nan")
        row = EpochRow(epoch, loss_sum / seen, correct / seen, test_acc, wall)
        metrics.rows.append(row)
        log.info("epoch %d: loss %.4f train_acc %.4f test_acc %.4f (%.1fs)",
                 epoch, row.train_loss, row.train_acc, row.test_acc, wall)
        if on_epoch is not None and on_epoch(row):
            break
        if max_steps is not None and steps >= max_steps:
            break
    return net, metrics
