"""Feature extraction, standardisation, PCA and feature stacking.

Per backbone: penultimate-layer activations -> z-score (population std) ->
PCA keeping the fewest components that explain ``variance_target`` of the
variance. The reduced blocks are concatenated in the canonical backbone
order VGG16, DENSENET121, MOBILENETV2. Everything is fitted on TRAIN rows
only and then frozen.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _io
from .backbones import BACKBONES, BackboneId
from .errors import (
    AlignmentError,
    DimensionError,
    IntegrityError,
)

FUSION_VERSION = 1
FEATURE_MAGIC = b"HCTF1"
_HEADER = struct.Struct("<II")


class Stage(str, enum.Enum):
    RAW = "RAW"
    STANDARDIZED = "STANDARDIZED"
    REDUCED = "REDUCED"
    STACKED = "STACKED"


@dataclass
class FeatureMatrix:
    data: np.ndarray  # (n, d) float32
    stage: Stage
    backbones: tuple[BackboneId, ...]
    record_ids: tuple[str, ...]
    split: str | None = None
    widths: tuple[int, ...] = ()  # per-backbone column counts when STACKED

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.stage = Stage(self.stage)
        self.backbones = tuple(BackboneId(b) for b in self.backbones)
        self.record_ids = tuple(self.record_ids)
        self.widths = tuple(int(w) for w in self.widths)
        if self.data.ndim != 2:
            raise DimensionError(f"feature data must be 2-D, got shape {self.data.shape}")
        if len(self.record_ids) != self.data.shape[0]:
            raise AlignmentError(
                f"{len(self.record_ids)} record ids for {self.data.shape[0]} feature rows"
            )

    @property
    def shape(self):
        return self.data.shape


def _unwrap(X):
    if isinstance(X, FeatureMatrix):
        return X.data.astype(np.float64), X
    return np.asarray(X, dtype=np.float64), None


def _rewrap(arr, template: FeatureMatrix | None, stage: Stage):
    if template is None:
        return arr
    return replace(template, data=arr.astype(np.float32), stage=stage)


# --- extraction ---------------------------------------------------------------

def extract_features(model_artifact, images, record_ids=None, split=None) -> FeatureMatrix:
    """Activations of the dense+ReLU head layer, in inference mode."""
    import torch

    from .backbones import to_batch

    model = model_artifact.model
    x = to_batch(images)
    model.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, len(x), 16):
            rows.append(model.embed(x[start:start + 16]).numpy())
    data = np.concatenate(rows) if rows else np.zeros((0, model.head_config.dense_width))
    if record_ids is None:
        record_ids = [str(i) for i in range(len(data))]
    return FeatureMatrix(data, Stage.RAW, (model_artifact.backbone_id,), record_ids, split)


# --- standardisation ------------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray  # population (ddof=0)


def fit_scaler(X) -> ScalerParams:
    arr, _ = _unwrap(X)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DimensionError("cannot fit a scaler on an empty matrix")
    if arr.shape[0] < 2:
        raise DimensionError("need at least two rows to fit a scaler")
    return ScalerParams(mean=arr.mean(axis=0), std=arr.std(axis=0))


def apply_scaler(X, params: ScalerParams):
    """(x - mean) / std per column; zero-variance columns become 0."""
    arr, tpl = _unwrap(X)
    if arr.ndim != 2 or arr.shape[1] != params.mean.shape[0]:
        raise DimensionError(f"scaler fitted on {params.mean.shape[0]} columns, got shape {arr.shape}")
    safe = np.where(params.std > 0, params.std, 1.0)
    out = (arr - params.mean) / safe
    out[:, params.std == 0] = 0.0
    return _rewrap(out, tpl, Stage.STANDARDIZED)


# --- PCA --------------------------------------------------------------------------

@dataclass(frozen=True)
class PCAParams:
    components: np.ndarray  # (k, d), orthonormal rows
    center: np.ndarray  # (d,)
    explained_variance: np.ndarray  # (k,) eigenvalues of the sample covariance
    explained_variance_ratio: np.ndarray  # (k,)
    variance_target: float = 0.95

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


_CUMSUM_SLACK = 1e-10


def select_k(ratios, target: float = 0.95) -> int:
    """Smallest k whose leading ratios sum to at least ``target`` (all if unreachable)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0:
        raise ValueError("explained-variance ratio vector is empty")
    cum = np.cumsum(ratios)
    hit = np.nonzero(cum >= target - _CUMSUM_SLACK)[0]
    return int(hit[0]) + 1 if hit.size else int(ratios.size)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def pca_spectrum(X):
    """Eigenvalues (descending) and unit eigenvectors (rows) of the sample covariance."""
    arr, _ = _unwrap(X)
    centered = arr - arr.mean(axis=0)
    cov = centered.T @ centered / (arr.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    return evals, evecs[:, order].T


def fit_pca(X, variance_target: float = 0.95) -> PCAParams:
    """Covariance-eigendecomposition PCA keeping ``select_k`` components."""
    arr, _ = _unwrap(X)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise DimensionError(f"PCA needs at least two rows, got shape {arr.shape}")
    if not 0.0 < variance_target <= 1.0:
        raise ValueError("variance_target must be in (0, 1]")
    evals, axes = pca_spectrum(arr)
    total = evals.sum()
    if total <= 0:
        # constant data: keep one arbitrary axis so downstream shapes stay valid
        ratios = np.zeros_like(evals)
        ratios[0] = 1.0
    else:
        ratios = evals / total
    k = select_k(ratios, variance_target)
    return PCAParams(
        components=_fix_signs(axes[:k]),
        center=arr.mean(axis=0),
        explained_variance=evals[:k],
        explained_variance_ratio=ratios[:k],
        variance_target=float(variance_target),
    )


def transform_pca(X, params: PCAParams):
    arr, tpl = _unwrap(X)
    if arr.ndim != 2 or arr.shape[1] != params.center.shape[0]:
        raise DimensionError(f"PCA fitted on {params.center.shape[0]} columns, got shape {arr.shape}")
    return _rewrap((arr - params.center) @ params.components.T, tpl, Stage.REDUCED)


def reconstruct(Z, params: PCAParams) -> np.ndarray:
    arr, _ = _unwrap(Z)
    return arr @ params.components + params.center


# --- stacking ---------------------------------------------------------------------

def stack_features(parts) -> FeatureMatrix:
    """Concatenate per-backbone blocks column-wise after checking row alignment."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to stack")
    ref = parts[0]
    for p in parts[1:]:
        if p.record_ids != ref.record_ids:
            raise AlignmentError(
                f"record order of {[b.value for b in p.backbones]} differs from "
                f"{[b.value for b in ref.backbones]}"
            )
    backbones = tuple(b for p in parts for b in p.backbones)
    if len(set(backbones)) != len(backbones):
        raise AlignmentError("a backbone appears twice in the stack")
    return FeatureMatrix(
        data=np.hstack([p.data for p in parts]),
        stage=Stage.STACKED,
        backbones=backbones,
        record_ids=ref.record_ids,
        split=ref.split,
        widths=tuple(p.data.shape[1] for p in parts),
    )


# --- fitted fusion ------------------------------------------------------------------

@dataclass
class FusionArtifact:
    scalers: dict[BackboneId, ScalerParams]
    pcas: dict[BackboneId, PCAParams] = field(default_factory=dict)
    stacked_pca: PCAParams | None = None  # only when PCA runs after stacking
    order: tuple[BackboneId, ...] = BACKBONES

    @property
    def pca_after_stack(self) -> bool:
        return self.stacked_pca is not None

    @property
    def stacked_dim(self) -> int:
        if self.stacked_pca is not None:
            return self.stacked_pca.n_components
        return sum(self.pcas[b].n_components for b in self.order)

    def transform(self, parts) -> FeatureMatrix:
        parts = _ordered(parts, self.order)
        std = [apply_scaler(parts[b], self.scalers[b]) for b in self.order]
        if self.stacked_pca is not None:
            stacked = stack_features(std)
            reduced = transform_pca(stacked, self.stacked_pca)
            return replace(reduced, stage=Stage.STACKED, widths=(reduced.data.shape[1],))
        return stack_features([transform_pca(s, self.pcas[b]) for s, b in zip(std, self.order)])


def _ordered(parts, order) -> dict:
    if isinstance(parts, dict):
        parts = {BackboneId(k): v for k, v in parts.items()}
    else:
        parts = {p.backbones[0]: p for p in parts}
    missing = [b.value for b in order if b not in parts]
    if missing:
        raise AlignmentError(f"missing features for {missing}")
    return parts


def fit_fusion(train_parts, variance_target: float = 0.95, pca_after_stack: bool = False,
               order=BACKBONES) -> FusionArtifact:
    """Fit scalers and PCA on TRAIN features of every backbone."""
    order = tuple(BackboneId(b) for b in order)
    parts = _ordered(train_parts, order)
    scalers = {b: fit_scaler(parts[b]) for b in order}
    std = {b: apply_scaler(parts[b], scalers[b]) for b in order}
    if pca_after_stack:
        stacked = stack_features([std[b] for b in order])
        return FusionArtifact(scalers, {}, fit_pca(stacked, variance_target), order)
    return FusionArtifact(scalers, {b: fit_pca(std[b], variance_target) for b in order}, None, order)


def _pca_arrays(prefix, p: PCAParams) -> dict:
    return {
        f"{prefix}components": p.components,
        f"{prefix}center": p.center,
        f"{prefix}explained_variance": p.explained_variance,
        f"{prefix}explained_variance_ratio": p.explained_variance_ratio,
    }


def _pca_from(prefix, arrays, target) -> PCAParams:
    return PCAParams(
        components=arrays[f"{prefix}components"],
        center=arrays[f"{prefix}center"],
        explained_variance=arrays[f"{prefix}explained_variance"],
        explained_variance_ratio=arrays[f"{prefix}explained_variance_ratio"],
        variance_target=target,
    )


def save_fusion(artifact: FusionArtifact, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for b in artifact.order:
        arrays[f"{b.value}/scaler/mean"] = artifact.scalers[b].mean
        arrays[f"{b.value}/scaler/std"] = artifact.scalers[b].std
        if not artifact.pca_after_stack:
            arrays.update(_pca_arrays(f"{b.value}/pca/", artifact.pcas[b]))
    if artifact.stacked_pca is not None:
        arrays.update(_pca_arrays("STACKED/pca/", artifact.stacked_pca))
    blob = path / "fusion.npz"
    with open(blob, "wb") as fh:
        np.savez(fh, **arrays)
    target = (artifact.stacked_pca or artifact.pcas[artifact.order[0]]).variance_target
    _io.write_json(path / "fusion.json", {
        "kind": "fusion",
        "version": FUSION_VERSION,
        "order": [b.value for b in artifact.order],
        "pca_after_stack": artifact.pca_after_stack,
        "variance_target": target,
        "n_components": ({b.value: artifact.pcas[b].n_components for b in artifact.order}
                         if not artifact.pca_after_stack else {"STACKED": artifact.stacked_dim}),
        "stacked_dim": artifact.stacked_dim,
        "sha256": _io.sha256_file(blob),
    })
    return path


def load_fusion(path) -> FusionArtifact:
    path = Path(path)
    meta = _io.read_json(path / "fusion.json")
    _io.check_version(meta, "fusion", FUSION_VERSION, path)
    blob = path / "fusion.npz"
    _io.verify_checksum(blob, meta["sha256"])
    order = tuple(BackboneId(b) for b in meta["order"])
    if set(order) != set(BACKBONES) or len(order) != len(BACKBONES):
        raise IntegrityError(f"{path}: fusion must cover {[b.value for b in BACKBONES]}, has {meta['order']}")
    with np.load(blob) as npz:
        arrays = {k: npz[k] for k in npz.files}
    target = meta["variance_target"]
    try:
        scalers = {b: ScalerParams(arrays[f"{b.value}/scaler/mean"], arrays[f"{b.value}/scaler/std"])
                   for b in order}
        if meta["pca_after_stack"]:
            return FusionArtifact(scalers, {}, _pca_from("STACKED/pca/", arrays, target), order)
        pcas = {b: _pca_from(f"{b.value}/pca/", arrays, target) for b in order}
    except KeyError as exc:
        raise IntegrityError(f"{path}: missing fusion entry {exc.args[0]}") from exc
    return FusionArtifact(scalers, pcas, None, order)


# --- HCTF1 feature files ------------------------------------------------------------

def write_features(fm: FeatureMatrix, path, config_hash: str | None = None) -> Path:
    """Binary feature file plus a ``.meta`` JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, d = fm.data.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_HEADER.pack(n, d))
        fh.write(fm.data.astype("<f4", copy=False).tobytes(order="C"))
    _io.write_json(path.with_suffix(".meta"), {
        "backbones": [b.value for b in fm.backbones],
        "stage": fm.stage.value,
        "split": fm.split,
        "record_ids": list(fm.record_ids),
        "widths": list(fm.widths),
        "config_hash": config_hash,
        "sha256": _io.sha256_file(path),
    })
    return path


def read_features(path) -> FeatureMatrix:
    path = Path(path)
    meta = _io.read_json(path.with_suffix(".meta"))
    raw = path.read_bytes()
    if raw[:len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise IntegrityError(f"{path}: bad magic {raw[:5]!r}")
    off = len(FEATURE_MAGIC)
    if len(raw) < off + _HEADER.size:
        raise IntegrityError(f"{path}: truncated header")
    n, d = _HEADER.unpack_from(raw, off)
    body = raw[off + _HEADER.size:]
    if len(body) != 4 * n * d:
        raise IntegrityError(f"{path}: expected {4 * n * d} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float32)
    return FeatureMatrix(
        data=data,
        stage=Stage(meta["stage"]),
        backbones=tuple(meta["backbones"]),
        record_ids=tuple(meta["record_ids"]),
        split=meta.get("split"),
        widths=tuple(meta.get("widths") or ()),
    )

