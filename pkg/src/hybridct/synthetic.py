"""Deterministic toy CT-like corpus for smoke tests and demos.

COVID slices are dark lung fields with bright, blotchy opacities; non-COVID
slices are clear lung fields with a faint fine texture. Sizes vary so the
resize path is exercised.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _slice(rng: np.random.Generator, covid: bool, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = h / 2, w / 2
    body = ((yy - cy) / (0.45 * h)) ** 2 + ((xx - cx) / (0.47 * w)) ** 2 < 1
    img = np.where(body, 0.55, 0.02)
    for side in (-1, 1):
        ly, lx = cy + rng.uniform(-0.03, 0.03) * h, cx + side * 0.2 * w
        lung = ((yy - ly) / (0.3 * h)) ** 2 + ((xx - lx) / (0.15 * w)) ** 2 < 1
        img = np.where(lung, 0.12, img)
        if covid:
            for _ in range(rng.integers(4, 8)):
                by = ly + rng.uniform(-0.2, 0.2) * h
                bx = lx + rng.uniform(-0.1, 0.1) * w
                r = rng.uniform(0.04, 0.08) * min(h, w)
                blob = np.exp(-(((yy - by) ** 2 + (xx - bx) ** 2) / (2 * r * r)))
                img = img + lung * 0.75 * blob
        else:
            img = img + lung * 0.04 * np.sin(xx * rng.uniform(0.8, 1.2))
    img = img + rng.normal(0, 0.02, size=img.shape)
    return (np.clip(img, 0, 1) * 255).astype(np.uint8)


def make_synthetic_dataset(root, n_per_class: int = 30, seed: int = 0,
                           size_range: tuple[int, int] = (96, 160)) -> Path:
    """Write ``root/COVID/*.png`` and ``root/non-COVID/*.png``; returns ``root``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for dirname, covid in (("COVID", True), ("non-COVID", False)):
        d = root / dirname
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            h, w = (int(v) for v in rng.integers(size_range[0], size_range[1], size=2))
            Image.fromarray(_slice(rng, covid, h, w), mode="L").save(d / f"{dirname.lower()}_{i:03d}.png")
    return root
