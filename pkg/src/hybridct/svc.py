"""Soft-margin support vector classifier trained with SMO.

Solves the standard dual

    min_a  1/2 a^T Q a - e^T a   s.t.  y^T a = 0,  0 <= a_i <= C,
    Q_ij = y_i y_j K(x_i, x_j)

with the maximal-violating-pair working set chosen by second-order gain
(Fan, Chen & Lin, JMLR 2005), the same scheme libsvm uses. The kernel
matrix is precomputed, which is fine for the few thousand training rows
this pipeline produces. Labels are 0/1 with 1 = COVID; internally +1/-1.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _io
from .errors import ConfigError, DimensionError, IntegrityError

log = logging.getLogger(__name__)

SVC_VERSION = 1
_TAU = 1e-12


class Kernel(str, enum.Enum):
    RBF = "rbf"
    LINEAR = "linear"
    POLY = "poly"


@dataclass(frozen=True)
class SVCConfig:
    kernel: Kernel = Kernel.RBF
    C: float = 1.0
    gamma: float | str = "auto"  # "auto" -> 1 / (d * mean column variance)
    poly_degree: int = 3
    coef0: float = 0.0
    tolerance: float = 1e-3
    max_iterations: int = 1_000_000

    def __post_init__(self):
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        if not self.C > 0:
            raise ConfigError("C must be positive")
        if isinstance(self.gamma, str):
            if self.gamma != "auto":
                raise ConfigError(f"gamma must be positive or 'auto', got {self.gamma!r}")
        elif not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ConfigError("tolerance and max_iterations must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.value
        return d


@dataclass(frozen=True)
class SVCModel:
    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray  # (m,) alpha_i * y_i
    bias: float
    kernel: Kernel
    gamma: float
    degree: int
    coef0: float
    C: float
    n_features: int
    support_indices: np.ndarray  # rows of the training matrix
    n_iter: int = 0
    converged: bool = True

    @property
    def alphas(self) -> np.ndarray:
        return np.abs(self.dual_coef)


def resolve_gamma(X: np.ndarray, gamma) -> float:
    if gamma != "auto":
        return float(gamma)
    var = float(np.mean(np.var(X, axis=0)))
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


def kernel_matrix(A, B, kernel: Kernel, gamma: float, degree: int = 3, coef0: float = 0.0) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    kernel = Kernel(kernel)
    if kernel is Kernel.LINEAR:
        return A @ B.T
    if kernel is Kernel.POLY:
        return (gamma * (A @ B.T) + coef0) ** degree
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _check_xy(X, y):
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionError(f"X of shape {X.shape} does not match {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN or infinite values")
    classes = set(np.unique(y).tolist())
    if not classes <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got {sorted(classes)}")
    if len(classes) < 2:
        raise ValueError("both classes must be present to fit an SVC")
    return X, np.where(y == 1, 1.0, -1.0)


def _solve_dual(K: np.ndarray, y: np.ndarray, C: float, eps: float, max_iter: int):
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        yg = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        up_idx = np.flatnonzero(up)
        i = up_idx[np.argmax(yg[up_idx])]
        m = yg[i]
        low_idx = np.flatnonzero(low)
        if m - yg[low_idx].min() < eps:
            converged = True
            break
        cand = low_idx[yg[low_idx] < m]
        b = m - yg[cand]
        a = QD[i] + QD[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, _TAU)
        j = cand[np.argmin(-(b * b) / a)]

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Q[i, j]
            quad = quad if quad > 0 else _TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Q[i, j]
            quad = quad if quad > 0 else _TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        G += Q[i] * (alpha[i] - ai_old) + Q[j] * (alpha[j] - aj_old)
        it += 1
    return alpha, G, it, converged


def _bias(alpha, G, y, C):
    yg = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        at_upper = alpha >= C
        ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (~at_upper & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0
    return -float(rho)


def fit_svc(X, y, config: SVCConfig | None = None) -> SVCModel:
    """Train on features ``X`` (n, d) with 0/1 labels ``y`` (1 = COVID)."""
    config = config or SVCConfig()
    X, ys = _check_xy(X, y)
    gamma = resolve_gamma(X, config.gamma)
    K = kernel_matrix(X, X, config.kernel, gamma, config.poly_degree, config.coef0)
    alpha, G, n_iter, converged = _solve_dual(K, ys, config.C, config.tolerance, config.max_iterations)
    if not converged:
        log.warning("SMO stopped at max_iterations=%d before reaching tolerance %.1e",
                     config.max_iterations, config.tolerance)
    sv = np.flatnonzero(alpha > 0)
    return SVCModel(
        support_vectors=X[sv].copy(),
        dual_coef=alpha[sv] * ys[sv],
        bias=_bias(alpha, G, ys, config.C),
        kernel=config.kernel,
        gamma=gamma,
        degree=config.poly_degree,
        coef0=config.coef0,
        C=config.C,
        n_features=X.shape[1],
        support_indices=sv,
        n_iter=n_iter,
        converged=converged,
    )


def decision_score(model: SVCModel, X) -> np.ndarray:
    """Signed distance-like score; positive means COVID."""
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionError(f"model expects {model.n_features} features, got shape {X.shape}")
    K = kernel_matrix(X, model.support_vectors, model.kernel, model.gamma, model.degree, model.coef0)
    return K @ model.dual_coef + model.bias


def predict(model: SVCModel, X) -> np.ndarray:
    """1 (COVID) where the score is strictly positive, else 0; ties go to NONCOVID."""
    return (decision_score(model, X) > 0).astype(np.int64)


def save_svc(model: SVCModel, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = path / "svc.npz"
    with open(blob, "wb") as fh:
        np.savez(fh, support_vectors=model.support_vectors, dual_coef=model.dual_coef,
                 support_indices=model.support_indices)
    _io.write_json(path / "svc.json", {
        "kind": "svc",
        "version": SVC_VERSION,
        "bias": model.bias.hex(),
        "kernel": model.kernel.value,
        "gamma": model.gamma.hex(),
        "degree": model.degree,
        "coef0": float(model.coef0).hex(),
        "C": float(model.C).hex(),
        "n_features": model.n_features,
        "n_support": int(len(model.dual_coef)),
        "n_iter": model.n_iter,
        "converged": model.converged,
        "sha256": _io.sha256_file(blob),
    })
    return path


def load_svc(path) -> SVCModel:
    path = Path(path)
    meta = _io.read_json(path / "svc.json")
    _io.check_version(meta, "svc", SVC_VERSION, path)
    blob = path / "svc.npz"
    _io.verify_checksum(blob, meta["sha256"])
    with np.load(blob) as npz:
        sv, coef, idx = npz["support_vectors"], npz["dual_coef"], npz["support_indices"]
    if sv.shape != (meta["n_support"], meta["n_features"]) or coef.shape != (meta["n_support"],):
        raise IntegrityError(f"{path}: stored arrays do not match the metadata")
    return SVCModel(
        support_vectors=sv,
        dual_coef=coef,
        bias=float.fromhex(meta["bias"]),
        kernel=Kernel(meta["kernel"]),
        gamma=float.fromhex(meta["gamma"]),
        degree=meta["degree"],
        coef0=float.fromhex(meta["coef0"]),
        C=float.fromhex(meta["C"]),
        n_features=meta["n_features"],
        support_indices=idx,
        n_iter=meta["n_iter"],
        converged=meta["converged"],
    )
