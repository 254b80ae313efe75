"""Independent reference computations used only by the tests."""
import itertools
import math

import numpy as np


def jacobi_eigh(A, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations for a symmetric matrix; eigenvalues descending."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(A[p, q] ** 2 for p in range(n) for q in range(n) if p != q))
        if off < tol * max(1.0, math.sqrt(float((A * A).sum()))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    evals = np.diag(A).copy()
    order = np.argsort(evals)[::-1]
    return evals[order], V[:, order].T


def covariance(X):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    mean = [sum(X[i, j] for i in range(n)) / n for j in range(X.shape[1])]
    C = np.zeros((X.shape[1], X.shape[1]))
    for a in range(X.shape[1]):
        for b in range(X.shape[1]):
            C[a, b] = sum((X[i, a] - mean[a]) * (X[i, b] - mean[b]) for i in range(n)) / (n - 1)
    return C


def pairwise_auc(y, s):
    pos = [v for v, t in zip(s, y) if t == 1]
    neg = [v for v, t in zip(s, y) if t == 0]
    total = 0.0
    for a, b in itertools.product(pos, neg):
        total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def roc_by_enumeration(y, s):
    """(fpr, tpr) pairs for thresholds at every score plus +inf, predicting score >= t."""
    pts = []
    for t in [math.inf] + sorted(set(s), reverse=True):
        tp = sum(1 for v, c in zip(s, y) if v >= t and c == 1)
        fp = sum(1 for v, c in zip(s, y) if v >= t and c == 0)
        pts.append((fp / sum(1 for c in y if c == 0), tp / sum(1 for c in y if c == 1)))
    return pts


def early_stop_rule(val_losses, patience=5, min_delta=1e-4, lr=1e-4, factor=0.5,
                    lr_patience=3, min_lr=1e-6):
    """Straight-line restatement of the callback rules over a loss trace."""
    best, best_epoch, wait = math.inf, 0, 0
    lr_best, lr_wait = math.inf, 0
    lrs = []
    for epoch, loss in enumerate(val_losses, start=1):
        lrs.append(lr)
        if loss < best - min_delta:
            best, best_epoch, wait = loss, epoch, 0
        else:
            wait += 1
        if loss < lr_best - min_delta:
            lr_best, lr_wait = loss, 0
        else:
            lr_wait += 1
            if lr_wait >= lr_patience and lr > min_lr:
                lr = max(lr * factor, min_lr)
                lr_wait = 0
        if wait >= patience:
            return {"stop_epoch": epoch, "best_epoch": best_epoch, "lr_trace": lrs, "early_stopped": True}
    return {"stop_epoch": len(val_losses), "best_epoch": best_epoch, "lr_trace": lrs, "early_stopped": False}


def dual_qp_reference(K, y, C):
    """Solve the SVC dual with a general-purpose constrained optimiser."""
    from scipy.optimize import minimize

    y = np.where(np.asarray(y) == 1, 1.0, -1.0)
    Q = np.outer(y, y) * K
    n = len(y)
    res = minimize(
        lambda a: 0.5 * a @ Q @ a - a.sum(),
        np.zeros(n),
        jac=lambda a: Q @ a - 1.0,
        bounds=[(0.0, C)] * n,
        constraints=[{"type": "eq", "fun": lambda a: a @ y, "jac": lambda a: y}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    alpha = res.x
    free = (alpha > 1e-6) & (alpha < C - 1e-6)
    grad = Q @ alpha - 1.0
    b = float(np.mean(-y[free] * grad[free]))
    return alpha, b


# trunk sizes of the standard architectures without their classifiers
PUBLISHED_TRUNK = {
    "VGG16": 14_714_688,
    "DENSENET121": 6_953_856,
    "MOBILENETV2": 2_223_872,
}


def layer_shape_sum(module) -> int:
    """Parameter count from layer hyper-parameters alone."""
    from torch import nn

    total = 0
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            kh, kw = m.kernel_size
            total += m.out_channels * (m.in_channels // m.groups) * kh * kw
            total += m.out_channels if m.bias is not None else 0
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)) and m.affine:
            total += 2 * m.num_features
        elif isinstance(m, nn.Linear):
            total += m.in_features * m.out_features + (m.out_features if m.bias is not None else 0)
    return total


def head_only(gap_width, dense_width):
    # batch-norm (gamma, beta) + dense + output neuron
    return 2 * gap_width + (gap_width * dense_width + dense_width) + (dense_width + 1)
