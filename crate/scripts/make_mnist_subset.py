#!/usr/bin/env python3
"""Build a class-balanced MNIST subset in IDX format.

Source: the `mnist` npm package (MIT), which ships roughly 1000 MNIST digits
per class (at least 863) as JSON arrays of 784 floats in [0, 1] rounded to three decimals.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset

Writes gzipped IDX files: 5000 training images (digits 0..499 of each
class) and 5000 test images (digits 500..999 of each class). Samples are
interleaved by class, so any prefix of length 10*k is class-balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def load_digits(src):
    per_class = []
    for d in range(10):
        data = json.loads((src / f"{d}.json").read_text())["data"]
        assert len(data) % 784 == 0
        images = [data[i:i + 784] for i in range(0, len(data), 784)]
        per_class.append([bytes(round(v * 255) for v in img) for img in images])
    return per_class


def interleave(per_class, lo, hi):
    images, labels = [], []
    for i in range(lo, hi):
        for d in range(10):
            images.append(per_class[d][i])
            labels.append(d)
    return images, labels


def write_idx(out, stem, images, labels):
    img = struct.pack(">IIII", 0x803, len(images), 28, 28) + b"".join(images)
    lab = struct.pack(">II", 0x801, len(labels)) + bytes(labels)
    for name, payload in ((f"{stem}-images-idx3-ubyte.gz", img), (f"{stem}-labels-idx1-ubyte.gz", lab)):
        # mtime=0 keeps the archives byte-reproducible
        with open(out / name, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(payload)


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    per_class = load_digits(src)
    assert all(len(c) >= 800 for c in per_class)
    write_idx(out, "train", *interleave(per_class, 0, 500))
    write_idx(out, "t10k", *interleave(per_class, 500, 800))


if __name__ == "__main__":
    main()
