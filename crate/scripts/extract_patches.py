"""Cut 64x64 grayscale patches from scikit-image's sample images.

The output PNGs are committed under crates/core/tests/assets/patches and
used by the solver convergence check of the acceptance suite.
"""

import pathlib

import numpy as np
from skimage import color, data, io

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/assets/patches"
SIZE = 64

# (image, [(row, col), ...]) with top-left corners picked on textured areas.
SOURCES = [
    ("camera", [(80, 200), (300, 120), (200, 330), (380, 380)]),
    ("astronaut", [(60, 180), (220, 300), (300, 60), (400, 400)]),
    ("coffee", [(50, 200), (150, 300), (250, 100)]),
    ("chelsea", [(50, 100), (120, 200), (200, 300)]),
    ("rocket", [(100, 150), (250, 300)]),
    ("brick", [(100, 100), (300, 300)]),
    ("grass", [(200, 200), (400, 100)]),
]


def gray(name):
    img = getattr(data, name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
        return (img * 255).round().astype(np.uint8)
    return img.astype(np.uint8)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    n = 0
    for name, corners in SOURCES:
        img = gray(name)
        for r, c in corners:
            patch = img[r : r + SIZE, c : c + SIZE]
            assert patch.shape == (SIZE, SIZE), (name, r, c, img.shape)
            io.imsave(OUT / f"{n:02d}_{name}.png", patch, check_contrast=False)
            n += 1
    print(f"wrote {n} patches to {OUT}")


if __name__ == "__main__":
    main()
