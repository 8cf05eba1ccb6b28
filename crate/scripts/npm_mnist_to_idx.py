#!/usr/bin/env python3
"""Rebuild IDX files from the `mnist` npm package (github.com/cazala/mnist).

That package ships 10,000 MNIST digits as JSON arrays of pixel/255 rounded to
three decimals. Rounding back with round(v * 255) recovers the original bytes
exactly, so the output is a bit-exact IDX subset of MNIST.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/npm_mnist_to_idx.py package/src/digits data/
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    images = bytearray()
    labels = bytearray()
    for digit in range(10):
        values = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(values) % 784 == 0
        for v in values:
            b = round(v * 255)
            assert abs(b / 255 - v) < 6e-4, v
            images.append(b)
        labels.extend([digit] * (len(values) // 784))
    n = len(labels)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "mnist-10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28) + bytes(images))
    with gzip.GzipFile(dst / "mnist-10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, n) + bytes(labels))
    print(f"wrote {n} images to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
