"""Walk through every augmentation op on a synthetic image.

Run: python3 demos/demo_augmentations.py
"""

import numpy as np

from augloop.image import ImageBuffer
from augloop.ops import (
    apply_op,
    crop,
    denoise,
    downsample_for_compression,
    edge,
    flip,
    resize_up,
    rotate,
)


def banner(title):
    print(f"\n--- {title} ---")


def main():
    rng = np.random.default_rng(0)
    image = ImageBuffer(rng.integers(0, 256, size=(240, 320, 3), dtype=np.uint8))
    print(f"source image: {image.width}x{image.height}, {image.channels} channels")

    banner("crop")
    out = apply_op(image, crop(40, 30, 200, 150), image).image
    print(f"crop(40, 30, 200, 150) -> {out.width}x{out.height}")

    banner("rotate is exact")
    once = apply_op(image, rotate(90), image).image
    back = apply_op(once, rotate(270), image).image
    print(f"rotate 90 then 270 restores the original: {back == image}")

    banner("flip is an involution")
    flipped = apply_op(image, flip("horizontal"), image).image
    print(f"double horizontal flip restores: "
          f"{apply_op(flipped, flip('horizontal'), image).image == image}")

    banner("resize-up recall")
    compressed = downsample_for_compression(image, 0.5)
    print(f"compressed to {compressed.width}x{compressed.height}")
    recalled = apply_op(compressed, resize_up(2.0), image).image
    print(f"resize_up(2.0) with the original on hand is bit-exact: "
          f"{recalled == image}")

    banner("denoise removes salt-and-pepper outliers")
    noisy = np.full((64, 64, 1), 128, dtype=np.uint8)
    noisy[10, 10, 0] = 255
    noisy[40, 25, 0] = 0
    cleaned = apply_op(ImageBuffer(noisy), denoise("median", 3),
                       ImageBuffer(noisy)).image
    print(f"all pixels back to 128: {(cleaned.data == 128).all()}")

    banner("edge map")
    edges = apply_op(image, edge(), image).image
    print(f"edge() yields a {edges.channels}-channel map, "
          f"max intensity {edges.data.max()}")

    banner("errors are values, not exceptions")
    bad = apply_op(image, crop(0, 0, 9999, 9999), image)
    print(f"status ok={bad.ok}, code={bad.error.code}")
    print(f"model-visible text: {bad.error.human_text}")


if __name__ == "__main__":
    main()
