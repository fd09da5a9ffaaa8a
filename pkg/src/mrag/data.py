"""Desk-scale cover/secret pairs cut from scikit-image's bundled photos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .jpeg import JpegImage, from_pixels

SOURCES = ("astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field",
           "immunohistochemistry", "retina", "colorwheel")


@dataclass
class Pair:
    cover: JpegImage
    secret: np.ndarray  # (H, W, 3) uint8
    cover_pixels: np.ndarray  # (H, W, 3) uint8 before compression


def source_images() -> list[np.ndarray]:
    import skimage.data

    return [np.asarray(getattr(skimage.data, name)())[..., :3] for name in SOURCES]


def random_crops(count: int, size: int, gen: np.random.Generator,
                 images: list[np.ndarray] | None = None) -> list[np.ndarray]:
    images = images if images is not None else source_images()
    crops = []
    for _ in range(count):
        img = images[gen.integers(len(images))]
        # downscale large photos a little so crops carry more structure
        step = int(gen.integers(1, 4))
        view = img[::step, ::step]
        y = gen.integers(0, view.shape[0] - size + 1)
        x = gen.integers(0, view.shape[1] - size + 1)
        crops.append(np.ascontiguousarray(view[y:y + size, x:x + size]))
    return crops


def make_pairs(count: int = 32, size: int = 64, quality: int = 75, seed: int = 0) -> list[Pair]:
    """Seeded pairs: every cover is JPEG-compressed at ``quality``; secrets stay RGB."""
    if size % 8:
        raise ValueError("image size must be a multiple of 8")
    gen = ad.rng(seed)
    images = source_images()
    covers = random_crops(count, size, gen, images)
    secrets = random_crops(count, size, gen, images)
    return [Pair(from_pixels(c, quality), s, c) for c, s in zip(covers, secrets)]
