#!/usr/bin/env python3
"""Build a 10,000-digit MNIST subset in IDX format.

The digits come from the `mnist` npm package, which ships 10,000 MNIST
images as JSON arrays of k/255 values rounded to three decimals. The bytes
are recovered exactly with round(v * 255).

Every fifth image of each class goes to the test files, the rest to train:

    <out>/train-images-idx3-ubyte.gz   (8,000 images)
    <out>/train-labels-idx1-ubyte.gz
    <out>/t10k-images-idx3-ubyte.gz    (2,000 images)
    <out>/t10k-labels-idx1-ubyte.gz

Usage: fetch_mnist_subset.py [--out data/mnist] [--tarball mnist-1.1.0.tgz]
"""

import argparse
import gzip
import io
import json
import os
import struct
import subprocess
import tarfile
import tempfile


def fetch_tarball(workdir):
    out = subprocess.run(
        ["npm", "pack", "mnist@1.1.0", "--silent"],
        cwd=workdir, check=True, capture_output=True, text=True,
    )
    return os.path.join(workdir, out.stdout.strip().splitlines()[-1])


def load_digits(tarball):
    digits = {}
    with tarfile.open(tarball, "r:gz") as tar:
        for d in range(10):
            member = tar.extractfile(f"package/src/digits/{d}.json")
            raw = json.load(io.TextIOWrapper(member, encoding="utf-8"))["data"]
            pixels = bytes(int(round(v * 255)) for v in raw)
            assert len(pixels) % 784 == 0
            digits[d] = [pixels[i:i + 784] for i in range(0, len(pixels), 784)]
    return digits


def write_idx(path, images, labels):
    img = struct.pack(">IIII", 0x00000803, len(images), 28, 28) + b"".join(images)
    lab = struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)
    with gzip.GzipFile(path + "-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(img)
    with gzip.GzipFile(path + "-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(lab)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join("data", "mnist"))
    ap.add_argument("--tarball")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball or fetch_tarball(tmp)
        digits = load_digits(tarball)

    train, test = [], []
    for d in range(10):
        for i, px in enumerate(digits[d]):
            (test if i % 5 == 4 else train).append((px, d))
    os.makedirs(args.out, exist_ok=True)
    for name, rows in (("train", train), ("t10k", test)):
        order = sorted(range(len(rows)), key=lambda i: (i * 2654435761) % 4294967291)
        rows = [rows[i] for i in order]
        write_idx(os.path.join(args.out, name), [r[0] for r in rows], [r[1] for r in rows])
        print(f"{name}: {len(rows)} images")


if __name__ == "__main__":
    main()
