# coding: utf-8

# # Training-time augmentation
#
# Each training image gets a fresh random rotation, shift, shear, zoom and brightness
# factor every epoch. This script draws a few parameter sets and saves a contact sheet.

# %%

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hybridct import AugmentationConfig, apply_augmentation, sample_params

out = Path(sys.argv[1] if len(sys.argv) > 1 else "augmentation_sheet.png")

# A synthetic slice with an off-centre bright square makes the transforms easy to see.

# %%

img = np.full((224, 224, 3), 0.15, dtype=np.float32)
img[60:110, 120:180] = 0.9
img[150:170, 40:200] = 0.5

cfg = AugmentationConfig()
print(cfg.to_dict())

rng = np.random.default_rng(0)
fig, axes = plt.subplots(2, 4, figsize=(10, 5))
axes[0, 0].imshow(img)
axes[0, 0].set_title("original")
for ax in axes.flat[1:]:
    p = sample_params(cfg, rng, img.shape[:2])
    ax.imshow(np.clip(apply_augmentation(img, p, cfg.fill_mode), 0, 1))
    ax.set_title(f"rot {p.rotation:+.1f}, zoom {p.zoom:.2f}", fontsize=8)
for ax in axes.flat:
    ax.axis("off")
fig.tight_layout()
fig.savefig(out, dpi=80)
print("wrote", out)
