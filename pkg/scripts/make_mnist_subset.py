"""Build a small MNIST subset in IDX format from the 5000-image CSV bundled with mlxtend.

The bundled CSV holds 500 images per digit (784 pixel columns, then the
label), sorted by class.  Rows are shuffled with a fixed seed and split in
half, then written as gzipped IDX files under the standard MNIST names so
``load_split("mnist", ...)`` finds them.

    pip download mlxtend --no-deps -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from noisy_nngp.data import MNIST_FILES, write_idx_images, write_idx_labels

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("wheel", help="path to an mlxtend wheel")
    ap.add_argument("out_dir", nargs="?", default="data/mnist")
    ap.add_argument("--n-train", type=int, default=2500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    raw = zipfile.ZipFile(args.wheel).read(CSV_MEMBER)
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",", dtype=np.int64)
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    n = args.n_train

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, sl in (("train", slice(0, n)), ("test", slice(n, None))):
        img_name, lab_name = MNIST_FILES[split]
        write_idx_images(out / (img_name + ".gz"), pixels[sl])
        write_idx_labels(out / (lab_name + ".gz"), labels[sl])
        print(f"{split}: {len(labels[sl])} images -> {out}")


if __name__ == "__main__":
    main()
