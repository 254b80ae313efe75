# coding: utf-8

# # Standardise, reduce, stack
#
# Each backbone yields a 128-wide embedding per image. We standardise each block with
# statistics from the training rows only, keep enough principal axes for 95% of the
# variance, then concatenate the reduced blocks.

# %%

import numpy as np

from hybridct import BACKBONES, FeatureMatrix, Stage, fit_fusion
from hybridct.fusion import fit_pca, transform_pca

rng = np.random.default_rng(0)

# A rank-one toy first: three points on the diagonal need a single axis.

# %%

toy = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
p = fit_pca(toy)
print("components:", p.components, "ratio:", p.explained_variance_ratio)
print("projected:", transform_pca(toy, p).ravel())

# Now fake embeddings for the three backbones. Each one lives mostly in a few
# directions, so PCA should shrink it a lot.

# %%


def embeddings(n, rank, seed):
    r = np.random.default_rng(seed)
    basis = r.normal(size=(rank, 128))
    return np.maximum(r.normal(size=(n, rank)) @ basis + 0.05 * r.normal(size=(n, 128)), 0)


ids = [f"img{i:03d}" for i in range(200)]
train = {b: FeatureMatrix(embeddings(200, rank, k).astype(np.float32), Stage.RAW, (b,), ids, "TRAIN")
         for k, (b, rank) in enumerate(zip(BACKBONES, (6, 10, 4)))}

fusion = fit_fusion(train, variance_target=0.95)
for b in BACKBONES:
    pca = fusion.pcas[b]
    print(f"{b.value:12s} kept {pca.n_components:3d} axes, {pca.explained_variance_ratio.sum():.3f} of variance")

stacked = fusion.transform(train)
print("stacked:", stacked.shape, "widths:", stacked.widths)
