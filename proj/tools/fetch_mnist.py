#!/usr/bin/env python3
"""Fetch MNIST digits and write them as IDX binary files.

The images come from the `mnist` npm package (~10k samples, ~1000 per
class, 28x28 grayscale). The script installs the package into a temp
directory, decodes the per-class JSON files and writes a shuffled
images/labels IDX pair understood by the `idx` dataset source.

Usage: python3 tools/fetch_mnist.py [out_dir]   (default: data/mnist)
"""

import json
import os
import random
import struct
import subprocess
import sys
import tempfile


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out_dir, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "install", "--no-save", "mnist"],
                       cwd=tmp, check=True, capture_output=True)
        digits_dir = os.path.join(tmp, "node_modules", "mnist", "src", "digits")
        samples = []
        for c in range(10):
            with open(os.path.join(digits_dir, f"{c}.json")) as f:
                flat = json.load(f)["data"]
            n = len(flat) // 784
            for i in range(n):
                samples.append((flat[i * 784:(i + 1) * 784], c))

    random.Random(0).shuffle(samples)
    write_idx_images(os.path.join(out_dir, "images-idx3-ubyte"),
                     [s[0] for s in samples])
    write_idx_labels(os.path.join(out_dir, "labels-idx1-ubyte"),
                     [s[1] for s in samples])
    print(f"wrote {len(samples)} samples to {out_dir}")


if __name__ == "__main__":
    main()
