"""Write the 5000-sample MNIST slice bundled with mlxtend as IDX files.

The first 400 images of each digit (in file order) form the training split,
the remaining 100 per digit the test split.

    pip download mlxtend --no-deps -d /tmp/mlxtend
    python3 scripts/mnist_subset_to_idx.py /tmp/mlxtend/mlxtend-*.whl data/mnist-5k
"""

import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 400


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(wheel, out_dir):
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    images, labels = table[:, :-1], table[:, -1].astype(int)
    train = np.zeros(len(labels), dtype=bool)
    for digit in range(10):
        train[np.flatnonzero(labels == digit)[:TRAIN_PER_CLASS]] = True
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[train])
    write_labels(out / "train-labels-idx1-ubyte", labels[train])
    write_images(out / "t10k-images-idx3-ubyte", images[~train])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[~train])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
