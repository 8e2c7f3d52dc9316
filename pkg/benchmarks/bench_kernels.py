"""Time each hot kernel, and one training step, under the numpy and numba backends.

    python benchmarks/bench_kernels.py [--batch 100] [--repeat 5]

Prints a table of best-of-N milliseconds per call. The first numba call of
each kernel (JIT compilation or cache load) is excluded by a warm-up call.
"""
import argparse
import time

import numpy as np

from nlcnn import kernels, ops
from nlcnn.model import HyperParams, build_plan
from nlcnn.network import init_network


def best_ms(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * min(times)


def cases(batch, rng):
    x = rng.random((batch, 28, 28, 20), dtype=np.float32)
    cols = kernels.im2col3x3(x)
    dw = rng.standard_normal((3, 3, 20)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    _, idx = ops.maxpool4x4s2_forward(x)
    gp = rng.standard_normal((batch, 14, 14, 20)).astype(np.float32)

    net = init_network(build_plan(HyperParams((28, 28, 1), 10)), seed=0)
    xb = rng.random((batch, 28, 28, 1), dtype=np.float32)
    yb = np.eye(10, dtype=np.float32)[rng.integers(0, 10, batch)]

    def step():
        logits, cache = net.forward(xb, train=True)
        net.backward(cache, ops.softmax_xent(logits, yb)[2])

    return {
        "im2col3x3": lambda: kernels.im2col3x3(x),
        "col2im3x3": lambda: kernels.col2im3x3(cols, x.shape),
        "depthwise3x3 fwd": lambda: kernels.depthwise3x3_forward(x, dw),
        "depthwise3x3 bwd": lambda: kernels.depthwise3x3_backward(x, dw, g),
        "maxpool4x4s2 fwd": lambda: kernels.maxpool4x4s2_forward(x),
        "maxpool4x4s2 bwd": lambda: ops.maxpool4x4s2_backward(idx, gp),
        "train step (w=20, nl=2,2)": step,
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    backends = kernels.available_backends()
    results = {}
    for name in backends:
        with kernels.use_backend(name):
            for label, fn in cases(args.batch, np.random.default_rng(0)).items():
                results.setdefault(label, {})[name] = best_ms(fn, args.repeat)

    print(f"batch {args.batch}, 28x28x20 activations, best of {args.repeat} (ms)")
    print(f"{'kernel':28s}" + "".join(f"{b:>10s}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for label, row in results.items():
        line = f"{label:28s}" + "".join(f"{row[b]:10.2f}" for b in backends)
        if len(backends) > 1:
            line += f"{row['numpy'] / row['numba']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
