#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the digits bundled in the
`mnist` npm package (10,000 grayscale MNIST digits, MIT licensed).

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset

Digits are shuffled with a fixed seed and split 8,000 / 2,000 into
train / test files.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for i in range(len(data) // 784):
            pixels = bytes(round(v * 255) for v in data[i * 784:(i + 1) * 784])
            samples.append((digit, pixels))
    random.Random(20240601).shuffle(samples)
    splits = {"train": samples[:8000], "t10k": samples[8000:]}
    dst.mkdir(parents=True, exist_ok=True)
    for name, rows in splits.items():
        images = struct.pack(">IIII", 0x00000803, len(rows), 28, 28) + b"".join(p for _, p in rows)
        labels = struct.pack(">II", 0x00000801, len(rows)) + bytes(d for d, _ in rows)
        for suffix, payload in (("images-idx3-ubyte", images), ("labels-idx1-ubyte", labels)):
            with gzip.GzipFile(dst / f"{name}-{suffix}.gz", "wb", mtime=0) as f:
                f.write(payload)


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
