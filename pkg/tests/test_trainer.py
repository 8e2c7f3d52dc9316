import itertools
import math

import numpy as np
import pytest

from nlcnn.datasets import LabeledSet
from nlcnn.errors import ConfigError, NumericError
from nlcnn.model import HyperParams, build_plan
from nlcnn.network import init_network
from nlcnn.trainer import (Adam, TrainConfig, adam_step, count_correct, evaluate, shuffled_indices,
                           train)
from oracles import reference_adam


def synthetic(n=40, seed=0, classes=3, shape=(8, 8, 1)):
    """Class c lights up a c-dependent block of the image, plus noise."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    x = rng.random((n,) + shape).astype(np.float32) * 0.3
    for i, c in enumerate(labels):
        x[i, 2 * c:2 * c + 3, 1:6] += 0.7
    return LabeledSet(np.clip(x, 0, 1), labels.astype(np.int64), classes, "synthetic")


def small_net(seed=0, classes=3, **kw):
    hp = HyperParams(input_shape=(8, 8, 1), num_classes=classes, width=4, nl=(1, 1), **kw)
    return init_network(build_plan(hp), seed=seed)


# --- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    adam_step(p, [np.zeros(2)], [np.zeros(2)], [np.zeros(2)], 1, TrainConfig())
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_constant_gradient_limit():
    cfg = TrainConfig(learning_rate=0.01)
    p, m, v = [np.array([0.0])], [np.zeros(1)], [np.zeros(1)]
    prev = 0.0
    for t in range(1, 501):
        adam_step(p, [np.array([3.0])], m, v, t, cfg)
        step = prev - p[0][0]
        assert step > 0
        prev = p[0][0]
    assert step == pytest.approx(0.01, rel=1e-4)


def test_adam_matches_reference_trace():
    # values from oracles.reference_adam, frozen
    expected = [0.9990000001999999, 0.9987336632277282, 0.9980630156362617]
    assert reference_adam(1.0, [0.5, -0.25, 2.0]) == expected
    p, m, v = [np.array([1.0])], [np.zeros(1)], [np.zeros(1)]
    for t, g in enumerate([0.5, -0.25, 2.0], start=1):
        adam_step(p, [np.array([g])], m, v, t, TrainConfig())
        assert p[0][0] == pytest.approx(expected[t - 1], abs=1e-12)


def test_adam_second_reference_trace():
    expected = [-0.30999900009999, -0.3199980001999799, -0.31361259580897943]
    p, m, v = [np.array([-0.3])], [np.zeros(1)], [np.zeros(1)]
    for t, g in enumerate([1e-3, 1e-3, -4.0], start=1):
        adam_step(p, [np.array([g])], m, v, t, TrainConfig(learning_rate=0.01))
        assert p[0][0] == pytest.approx(expected[t - 1], abs=1e-12)


def test_adam_zero_lr_is_identity(rng):
    net = small_net()
    before = [a.copy() for a in net.registry().params]
    reg = net.registry()
    reg.grads = [rng.standard_normal(p.shape).astype(p.dtype) for p in reg.params]
    opt = Adam(reg, TrainConfig(learning_rate=0.0))
    for _ in range(25):
        opt.step(reg)
    for a, b in zip(before, net.registry().params):
        np.testing.assert_array_equal(a, b)


def test_adam_rejects_non_finite_gradient_naming_layer():
    net = small_net()
    reg = net.registry()
    reg.grads = [np.zeros_like(p) for p in reg.params]
    reg.grads[3][0] = np.nan
    with pytest.raises(NumericError, match=reg.names[3].replace(".", r"\.")):
        Adam(reg, TrainConfig()).step(reg)


def test_adam_step_count_starts_at_one():
    with pytest.raises(ValueError):
        adam_step([np.zeros(1)], [np.zeros(1)], [np.zeros(1)], [np.zeros(1)], 0, TrainConfig())


@pytest.mark.parametrize("kw", [dict(batch_size=0), dict(beta1=1.0), dict(beta2=0.0), dict(epochs=-1)])
def test_bad_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()


# --- shuffling, evaluation --------------------------------------------------

def test_shuffle_is_uniform_over_permutations():
    rng = np.random.default_rng(0)
    draws = 10_000
    counts = {p: 0 for p in itertools.permutations(range(4))}
    for _ in range(draws):
        counts[tuple(shuffled_indices(rng, 4))] += 1
    p = 1 / 24
    sigma = math.sqrt(draws * p * (1 - p))
    assert all(abs(c - draws * p) <= 3 * sigma for c in counts.values()), counts


def test_count_correct_examples():
    labels = np.array([0, 3, 1, 2])
    assert count_correct(np.eye(4)[labels] * 5, labels) == 4
    balanced = np.repeat(np.arange(10), 3)
    # uniform logits: argmax tie-break to class 0
    assert count_correct(np.zeros((30, 10)), balanced) / 30 == pytest.approx(0.1)


def test_count_correct_hand_fixture():
    logits = np.array([
        [2.0, 1.0, 0.0],  # -> 0, label 0, right
        [0.1, 0.3, 0.2],  # -> 1, label 2, wrong
        [1.0, 1.0, 0.0],  # tie -> 0, label 1, wrong
        [0.0, 0.0, 5.0],  # -> 2, label 2, right
        [-1.0, 3.0, 3.0],  # tie -> 1, label 1, right
    ])
    assert count_correct(logits, np.array([0, 2, 1, 2, 1])) == 3


def test_evaluate_is_deterministic_and_read_only():
    net = small_net()
    ds = synthetic(30)
    before = [a.copy() for _, a in net.state_arrays()]
    assert evaluate(net, ds) == evaluate(net, ds)
    for a, (_, b) in zip(before, net.state_arrays()):
        assert a.tobytes() == b.tobytes()


def test_evaluate_rejects_mismatched_set():
    ds = synthetic(10, classes=4)
    with pytest.raises(ConfigError):
        evaluate(small_net(classes=3), ds)


# --- training ---------------------------------------------------------------

def test_train_descends():
    ds = synthetic(60)
    net = small_net(seed=1)
    untrained, _ = evaluate(net, ds)
    _, m = train(net, ds, TrainConfig(epochs=1, batch_size=10, learning_rate=3e-3))
    assert m.rows[0].train_loss < untrained


def test_train_keeps_last_partial_batch():
    _, m = train(small_net(), synthetic(10), TrainConfig(epochs=2, batch_size=4))
    assert m.steps == 6


def test_train_max_steps():
    _, m = train(small_net(), synthetic(10), TrainConfig(epochs=5, batch_size=4), max_steps=4)
    assert m.steps == 4 and len(m.rows) == 2


def test_train_is_deterministic():
    ds, te = synthetic(30, seed=1), synthetic(12, seed=2)
    cfg = TrainConfig(epochs=3, batch_size=8, seed=3, deterministic=True)
    runs = []
    for _ in range(2):
        net, m = train(small_net(seed=3), ds, cfg, test_set=te)
        runs.append((m.to_csv(include_timing=False), [a.tobytes() for _, a in net.state_arrays()]))
    assert runs[0] == runs[1]


def test_metrics_csv_and_summary():
    _, m = train(small_net(), synthetic(12), TrainConfig(epochs=2, batch_size=6), test_set=synthetic(6))
    lines = m.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,test_acc,wall_seconds"
    assert len(lines) == 3 and lines[1].startswith("1,")
    assert float(lines[1].split(",")[-1]) >= 0
    assert m.to_csv(include_timing=False).splitlines()[1].endswith(",")
    s = m.summary()
    assert s["epochs"] == 2 and s["param_total"] == small_net().num_params()
    assert 0 <= s["best_test_acc"] <= 1 and s["total_train_seconds"] >= 0


def test_train_rejects_bad_labels_and_shapes():
    ds = synthetic(10)
    with pytest.raises(ConfigError):
        train(small_net(classes=4), ds, TrainConfig(epochs=1))
    wrong = LabeledSet(np.zeros((4, 9, 9, 1), np.float32), np.zeros(4, np.int64), 3, "wrong")
    with pytest.raises(ConfigError):
        train(small_net(), wrong, TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        LabeledSet(np.zeros((2, 8, 8, 1), np.float32), np.array([0, 3]), 3, "bad")


def test_train_flags_non_finite_loss():
    ds = synthetic(8)
    bad = LabeledSet(np.where(ds.images > 0.5, np.nan, ds.images).astype(np.float32), ds.labels, 3, "nan")
    with pytest.raises(NumericError):
        train(small_net(), bad, TrainConfig(epochs=1, batch_size=8))
