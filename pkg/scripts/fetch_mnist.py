#!/usr/bin/env python3
"""Download the four MNIST IDX files into data/mnist/ (or a given directory).

Usage: python scripts/fetch_mnist.py [target_dir]

Files are fetched gzipped and stored with their .gz suffix; the loaders
read gzip transparently. Mirrors are tried in order.
"""

import sys
import urllib.request
from pathlib import Path

FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)


def fetch(target: Path) -> int:
    target.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        dest = target / name
        if dest.is_file():
            print(f"{dest} already present")
            continue
        for mirror in MIRRORS:
            url = mirror + name
            try:
                print(f"fetching {url}")
                with urllib.request.urlopen(url, timeout=60) as response:
                    dest.write_bytes(response.read())
                break
            except OSError as exc:
                print(f"  failed: {exc}")
        else:
            print(f"could not fetch {name} from any mirror", file=sys.stderr)
            return 1
    print(f"MNIST files in {target}")
    return 0


if __name__ == "__main__":
    directory = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/mnist")
    sys.exit(fetch(directory))
