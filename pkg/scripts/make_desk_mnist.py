"""Build a 10k-digit MNIST subset in IDX format from the npm ``mnist`` package.

The package ships 10000 real MNIST digits as JSON (pixels stored as u/255
rounded to three decimals, which is still enough to recover every byte).

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/make_desk_mnist.py package/src/digits data/mnist-desk
"""
import argparse
import gzip
import json
import struct
from pathlib import Path

import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--n-test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        u8 = np.rint(raw * 255.0).astype(np.uint8).reshape(-1, 28, 28)
        # every value must be the 3-decimal rounding of u/255
        assert np.allclose(np.round(u8 / 255.0, 3), raw.reshape(-1, 28, 28), atol=1.5e-3)
        images.append(u8)
        labels.append(np.full(len(u8), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    perm = np.random.default_rng(args.seed).permutation(len(labels))
    test_idx, train_idx = perm[: args.n_test], perm[args.n_test :]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for prefix, idx in (("train", train_idx), ("t10k", test_idx)):
        img = images[idx]
        with gzip.GzipFile(args.out_dir / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x803, *img.shape))
            f.write(img.tobytes())
        with gzip.GzipFile(args.out_dir / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x801, len(idx)))
            f.write(labels[idx].tobytes())
        print(f"{prefix}: {len(idx)} images")


if __name__ == "__main__":
    main()
