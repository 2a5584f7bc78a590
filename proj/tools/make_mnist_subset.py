#!/usr/bin/env python3
"""Build a 10000-image MNIST subset in IDX format from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist) ships 10000 MNIST digits
as JSON arrays of intensities scaled to [0, 1] and rounded to three decimals.
This script restores the 8-bit pixels, shuffles with a fixed seed and writes an
8000/2000 train/test split as standard big-endian IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""

import argparse
import json
import pathlib
import random
import struct

SIDE = 28
TRAIN_COUNT = 8000


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for image in images:
            f.write(bytes(image))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("digits_dir", type=pathlib.Path)
    parser.add_argument("out_dir", type=pathlib.Path)
    parser.add_argument("--seed", type=int, default=20160101)
    args = parser.parse_args()

    samples = []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        count = len(raw) // (SIDE * SIDE)
        for i in range(count):
            values = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            pixels = [min(255, max(0, round(v * 255))) for v in values]
            samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    train, test = samples[:TRAIN_COUNT], samples[TRAIN_COUNT:]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_images(args.out_dir / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(args.out_dir / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(args.out_dir / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_labels(args.out_dir / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train and {len(test)} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
