"""Build a small CIFAR-10-format binary file from natural photographs.

Crops are taken from the color images bundled with scikit-image and
resized to 32x32, then written as 3073-byte records (label byte followed
by the red, green and blue planes in row-major order).
"""
import argparse

import numpy as np
from skimage import data
from skimage.transform import resize

SOURCES = [
    "astronaut", "coffee", "chelsea", "rocket",
    "retina", "hubble_deep_field", "immunohistochemistry", "colorwheel",
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--count", type=int, default=256)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    images = []
    for name in SOURCES:
        img = getattr(data, name)()
        if img.ndim == 3 and img.shape[2] == 3:
            images.append(img)

    records = bytearray()
    for n in range(args.count):
        src = n % len(images)
        img = images[src]
        h, w, _ = img.shape
        side = int(rng.integers(64, min(h, w) // 2 + 1))
        r0 = int(rng.integers(0, h - side + 1))
        c0 = int(rng.integers(0, w - side + 1))
        crop = img[r0:r0 + side, c0:c0 + side].astype(np.float64) / 255.0
        small = resize(crop, (32, 32, 3), anti_aliasing=True)
        pix = np.clip(np.round(small * 255.0), 0, 255).astype(np.uint8)
        records.append(src % 10)
        records.extend(pix.transpose(2, 0, 1).tobytes())

    with open(args.out, "wb") as f:
        f.write(records)


if __name__ == "__main__":
    main()
