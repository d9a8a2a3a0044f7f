#!/usr/bin/env python3
"""Writes the UCI 8x8 handwritten digits (as bundled with scikit-learn) to IDX
files under data/digits/: a fixed, seeded 1297/500 train/test split with pixel
intensities 0..16 rescaled to 0..255."""

import pathlib
import struct
import sys

import numpy as np
from sklearn.datasets import load_digits


def write_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/digits")
    out.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    images = np.rint(digits.images * 255.0 / 16.0)
    order = np.random.RandomState(0).permutation(len(images))
    train, test = order[:1297], order[1297:]
    write_images(out / "train-images-idx3-ubyte", images[train])
    write_labels(out / "train-labels-idx1-ubyte", digits.target[train])
    write_images(out / "test-images-idx3-ubyte", images[test])
    write_labels(out / "test-labels-idx1-ubyte", digits.target[test])


if __name__ == "__main__":
    main()
