# coding: utf-8

# # The final classifier on toy data
#
# Two small problems: a linearly separable pair of clusters, and XOR, which needs a
# non-linear kernel.

# %%

import numpy as np

from hybridct import Kernel, SVCConfig, decision_score, fit_svc, predict

X = np.array([[0.0, 0.0], [0.0, 1.0], [3.0, 3.0], [3.0, 4.0]])
y = np.array([0, 0, 1, 1])
lin = fit_svc(X, y, SVCConfig(kernel=Kernel.LINEAR))

w = lin.dual_coef @ lin.support_vectors
print("support vectors:", lin.support_vectors.tolist())
print("w =", w, " b =", lin.bias)
print("training predictions:", predict(lin, X))

# The closest opposite points are (0,1) and (3,3). The separating line crosses the
# segment between them at its midpoint, and both points sit on the margin:

# %%

print("score at (1.5, 2.0):", decision_score(lin, [[1.5, 2.0]])[0])
print("scores at the support vectors:", decision_score(lin, lin.support_vectors))

# The centroid midpoint (1.5, 1.75) is not on the line:

# %%

print("score at (1.5, 1.75):", decision_score(lin, [[1.5, 1.75]])[0], "= -1/13 =", -1 / 13)

# XOR with an RBF kernel:

# %%

Xx = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
yx = np.array([0, 0, 1, 1])
rbf = fit_svc(Xx, yx, SVCConfig(kernel=Kernel.RBF, gamma=1.0, C=10.0))
print("XOR predictions:", predict(rbf, Xx), "alphas:", rbf.alphas)
