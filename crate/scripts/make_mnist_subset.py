#!/usr/bin/env python3
"""Build the desk-scale MNIST subset used by the training examples and tests.

Source: the 10,000 MNIST digits bundled in the `mnist` npm package
(`npm pack mnist`, v1.1.0, files src/digits/<d>.json, pixels stored as
value/255 rounded to three decimals). The digits are shuffled with a fixed
seed and split into disjoint 5,000-image train and test sets, written in the
standard IDX layout (big-endian, magic 2051 for images, 2049 for labels).

Usage: make_mnist_subset.py <unpacked npm package dir> <output dir>
"""
import json
import os
import struct
import sys

import numpy as np


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            flat = np.asarray(json.load(f)["data"], dtype=np.float64)
        flat = flat.reshape(-1, 784)
        images.append(np.clip(np.rint(flat * 255.0), 0, 255))
        labels.append(np.full(len(flat), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(20200919).permutation(len(labels))
    images, labels = images[order], labels[order]
    os.makedirs(out, exist_ok=True)
    write_idx_images(os.path.join(out, "train-images-idx3-ubyte"), images[:5000])
    write_idx_labels(os.path.join(out, "train-labels-idx1-ubyte"), labels[:5000])
    write_idx_images(os.path.join(out, "t10k-images-idx3-ubyte"), images[5000:10000])
    write_idx_labels(os.path.join(out, "t10k-labels-idx1-ubyte"), labels[5000:10000])
    print("train", np.bincount(labels[:5000]), "test", np.bincount(labels[5000:10000]))


if __name__ == "__main__":
    main()
