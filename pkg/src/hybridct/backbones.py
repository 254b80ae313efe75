"""Frozen ImageNet backbones with a small trainable classification head.

Every model is ``backbone -> GAP -> dropout -> batch-norm -> dense+ReLU ->
dense+sigmoid``. The backbone is frozen (weights and batch-norm statistics)
and only the head is trained, with Adam, binary cross-entropy and the
early-stopping / LR-plateau callbacks in :mod:`hybridct.callbacks`.
"""
from __future__ import annotations

import copy
import enum
import logging
import math
import os
import socket
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from . import _io
from .callbacks import EarlyStopping, ReduceLROnPlateau
from .errors import (
    ArtifactNotFoundError,
    ConfigError,
    InputShapeError,
    IntegrityError,
    TrainingError,
    WeightsUnavailableError,
)

log = logging.getLogger(__name__)

WEIGHTS_ENV = "HYBRIDCT_WEIGHTS_DIR"
OFFLINE_ENV = "HYBRIDCT_OFFLINE"
ARTIFACT_VERSION = 1
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class BackboneId(str, enum.Enum):
    VGG16 = "VGG16"
    DENSENET121 = "DENSENET121"
    MOBILENETV2 = "MOBILENETV2"

    @property
    def slug(self) -> str:
        return self.value.lower()


# canonical order used for stacking and reporting
BACKBONES = (BackboneId.VGG16, BackboneId.DENSENET121, BackboneId.MOBILENETV2)

# channels produced by each trunk, i.e. the width after global average pooling
GAP_WIDTH = {BackboneId.VGG16: 512, BackboneId.DENSENET121: 1024, BackboneId.MOBILENETV2: 1280}


@dataclass(frozen=True)
class HeadConfig:
    dense_width: int = 128
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.dense_width < 1:
            raise ConfigError("dense_width must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 8
    early_stop_patience: int = 5
    lr_reduce_factor: float = 0.5
    lr_reduce_patience: int = 3
    lr_min: float = 1e-6
    min_delta: float = 1e-4
    seed: int = 42
    loss: str = "binary_crossentropy"
    monitor: str = "val_loss"

    def __post_init__(self):
        if self.lr_min > self.learning_rate:
            raise ConfigError("lr_min must not exceed learning_rate")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.loss != "binary_crossentropy" or self.monitor != "val_loss":
            raise ConfigError("only binary_crossentropy monitored on val_loss is supported")


class ParamCounts(NamedTuple):
    total: int
    trainable: int
    frozen: int
    reduction_factor: float


def sigmoid(x):
    """Logistic function, stable for large ``|x|`` (no overflow in exp)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.item() if out.ndim == 0 else out


# --- architecture -----------------------------------------------------------

def _torchvision_builder(backbone_id: BackboneId):
    import torchvision.models as tvm

    return {
        BackboneId.VGG16: (tvm.vgg16, tvm.VGG16_Weights.IMAGENET1K_V1),
        BackboneId.DENSENET121: (tvm.densenet121, tvm.DenseNet121_Weights.IMAGENET1K_V1),
        BackboneId.MOBILENETV2: (tvm.mobilenet_v2, tvm.MobileNet_V2_Weights.IMAGENET1K_V1),
    }[backbone_id]


def _fetch_imagenet_state(backbone_id: BackboneId):
    ctor, weights = _torchvision_builder(backbone_id)
    filename = os.path.basename(weights.url)
    cache = os.environ.get(WEIGHTS_ENV)
    model_dir = Path(cache) if cache else Path(torch.hub.get_dir()) / "checkpoints"
    local = model_dir / filename
    hint = (f"place {filename} in {model_dir} (or point ${WEIGHTS_ENV} at a directory holding it), "
            f"or set weights: random to run without pretrained weights")
    if not local.exists():
        if os.environ.get(OFFLINE_ENV):
            raise WeightsUnavailableError(f"ImageNet weights for {backbone_id.value} not cached; {hint}")
        old = socket.getdefaulttimeout()
        socket.setdefaulttimeout(30)
        try:
            torch.hub.load_state_dict_from_url(weights.url, model_dir=str(model_dir), progress=False)
        except Exception as exc:  # network errors come in many types
            raise WeightsUnavailableError(
                f"could not download ImageNet weights for {backbone_id.value} ({exc}); {hint}"
            ) from exc
        finally:
            socket.setdefaulttimeout(old)
    try:
        return torch.load(local, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightsUnavailableError(f"cached weights {local} are unreadable ({exc}); {hint}") from exc


def build_backbone(backbone_id: BackboneId, weights: str = "imagenet") -> nn.Module:
    """Convolutional trunk (no classifier) producing ``GAP_WIDTH`` channels."""
    backbone_id = BackboneId(backbone_id)
    ctor, _ = _torchvision_builder(backbone_id)
    net = ctor(weights=None)
    if weights == "imagenet":
        net.load_state_dict(_fetch_imagenet_state(backbone_id))
    elif weights != "random":
        raise ConfigError(f"weights must be 'imagenet' or 'random', got {weights!r}")
    if backbone_id is BackboneId.DENSENET121:
        # torchvision applies the final ReLU in forward(), outside .features
        return nn.Sequential(net.features, nn.ReLU())
    return net.features


class ClassificationHead(nn.Module):
    def __init__(self, in_features: int, config: HeadConfig):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dropout = nn.Dropout(config.dropout_rate)
        self.norm = nn.BatchNorm1d(in_features)
        self.dense = nn.Linear(in_features, config.dense_width)
        self.relu = nn.ReLU()
        self.out = nn.Linear(config.dense_width, 1)

    def embed(self, fmap: torch.Tensor) -> torch.Tensor:
        x = torch.flatten(self.pool(fmap), 1)
        return self.relu(self.dense(self.norm(self.dropout(x))))

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        return self.out(self.embed(fmap)).squeeze(1)


class TransferModel(nn.Module):
    """Backbone + head. ``forward`` returns logits; see :func:`predict_proba`."""

    def __init__(self, backbone_id: BackboneId, backbone: nn.Module, head_config: HeadConfig,
                 imagenet_preproc: bool = False, frozen: bool = True):
        super().__init__()
        self.backbone_id = BackboneId(backbone_id)
        self.head_config = head_config
        self.imagenet_preproc = imagenet_preproc
        self.backbone = backbone
        self.head = ClassificationHead(GAP_WIDTH[self.backbone_id], head_config)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)
        self.set_frozen(frozen)

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        for p in self.backbone.parameters():
            p.requires_grad_(not frozen)
        self.train(self.training)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.frozen:
            # frozen trunk keeps its batch-norm statistics too
            self.backbone.eval()
        return self

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if self.imagenet_preproc:
            x = (x - self.mean) / self.std
        if self.frozen:
            with torch.no_grad():
                return self.backbone(x)
        return self.backbone(x)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.head.embed(self.features(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def build_model(backbone_id, head_config: HeadConfig | None = None, weights: str = "imagenet",
                imagenet_preproc: bool = False, seed: int | None = None) -> TransferModel:
    """Frozen pretrained trunk plus a freshly initialised head.

    ``weights="random"`` skips the ImageNet download (offline smoke runs);
    ``seed`` fixes the head initialisation.
    """
    head_config = head_config or HeadConfig()
    if seed is not None:
        torch.manual_seed(seed)
    backbone = build_backbone(backbone_id, weights)
    return TransferModel(backbone_id, backbone, head_config, imagenet_preproc=imagenet_preproc)


def count_parameters(model: nn.Module) -> ParamCounts:
    """Total / trainable / frozen parameter counts.

    ``reduction_factor`` is trainable-if-unfrozen (all parameters) over
    trainable-as-built. Batch-norm running statistics are buffers, not
    parameters, and are not counted.
    """
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    factor = total / trainable if trainable else math.inf
    return ParamCounts(total, trainable, total - trainable, factor)


# --- data -------------------------------------------------------------------

def to_batch(images) -> torch.Tensor:
    """(n, 224, 224, 3) array or list of ImageTensor -> NCHW float tensor."""
    from .data import IMAGE_SIZE, ImageTensor

    if isinstance(images, torch.Tensor):
        arr = images
    else:
        if isinstance(images, (list, tuple)) and images and isinstance(images[0], ImageTensor):
            images = np.stack([im.data for im in images])
        arr = torch.as_tensor(np.asarray(images, dtype=np.float32))
    if arr.ndim == 3:
        arr = arr.unsqueeze(0)
    if arr.ndim != 4 or tuple(arr.shape[1:]) != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise InputShapeError(f"expected images of shape (n, {IMAGE_SIZE}, {IMAGE_SIZE}, 3), got {tuple(arr.shape)}")
    return arr.permute(0, 3, 1, 2).contiguous()


class ImageDataset(torch.utils.data.Dataset):
    """Records -> (CHW tensor, target). Augments when a config is given.

    Each (epoch, index) pair gets its own RNG stream, so augmentation is
    resampled every epoch yet reproducible regardless of loading order.
    """

    def __init__(self, records, augmentation=None, seed: int = 0, cache: bool = False):
        self.records = list(records)
        self.augmentation = augmentation
        self.seed = seed
        self.epoch = 0
        self._cache = {} if cache else None

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self):
        return len(self.records)

    def _base(self, i):
        from .data import load_image

        if self._cache is None:
            return load_image(self.records[i]).data
        if i not in self._cache:
            self._cache[i] = load_image(self.records[i]).data
        return self._cache[i]

    def __getitem__(self, i):
        from .augment import apply_augmentation, sample_params

        img = self._base(i)
        if self.augmentation is not None:
            rng = np.random.default_rng([self.seed, self.epoch, i])
            params = sample_params(self.augmentation, rng, img.shape[:2])
            img = apply_augmentation(img, params, self.augmentation.fill_mode)
        x = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))
        return x, float(self.records[i].label.target)


class ArrayDataset(torch.utils.data.Dataset):
    def __init__(self, images, targets):
        self.x = to_batch(images)
        self.y = np.asarray(targets, dtype=np.float32)

    def set_epoch(self, epoch: int) -> None:
        pass

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i):
        return self.x[i], float(self.y[i])


def _batches(dataset, batch_size: int, order=None):
    idx = np.arange(len(dataset)) if order is None else order
    for start in range(0, len(idx), batch_size):
        items = [dataset[int(i)] for i in idx[start:start + batch_size]]
        yield torch.stack([x for x, _ in items]), torch.tensor([y for _, y in items], dtype=torch.float32)


# --- training ---------------------------------------------------------------

@dataclass
class ModelArtifact:
    backbone_id: BackboneId
    head_config: HeadConfig
    model: TransferModel
    param_counts: ParamCounts
    history: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    weights: str = "imagenet"


def _evaluate(model, dataset, batch_size):
    model.eval()
    loss_fn = nn.BCEWithLogitsLoss(reduction="sum")
    total, correct, n = 0.0, 0, 0
    with torch.no_grad():
        for x, y in _batches(dataset, batch_size):
            logits = model(x)
            total += loss_fn(logits, y).item()
            correct += int(((logits > 0).float() == y).sum())
            n += len(y)
    return total / n, correct / n


def train(model: TransferModel, train_data, val_data, config: TrainConfig | None = None,
          checkpoint_dir=None, weights: str = "imagenet") -> ModelArtifact:
    """Fit the head and return a :class:`ModelArtifact`.

    ``train_data`` / ``val_data`` are datasets yielding ``(CHW tensor,
    target)`` with COVID = 1; ``train_data.set_epoch`` is called each epoch
    when present. Training stops at ``config.epochs`` or when early stopping
    fires, and the best-val-loss head weights are restored either way.
    """
    config = config or TrainConfig()
    if len(train_data) == 0:
        raise TrainingError("training set is empty")
    if len(val_data) == 0:
        raise TrainingError("validation set is empty; val_loss cannot be monitored")
    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng(config.seed)

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    stopper = EarlyStopping(patience=config.early_stop_patience, min_delta=config.min_delta)
    plateau = ReduceLROnPlateau(lr=config.learning_rate, factor=config.lr_reduce_factor,
                                patience=config.lr_reduce_patience, min_lr=config.lr_min,
                                min_delta=config.min_delta)
    history = {k: [] for k in ("epoch", "loss", "accuracy", "val_loss", "val_accuracy", "lr")}
    best_state = copy.deepcopy(model.head.state_dict())
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        if hasattr(train_data, "set_epoch"):
            train_data.set_epoch(epoch)
        lr = plateau.lr
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        seen, loss_sum, correct = 0, 0.0, 0
        for x, y in _batches(train_data, config.batch_size, order_rng.permutation(len(train_data))):
            if len(y) < 2 and model.training:
                # batch-norm cannot normalise a single sample in train mode
                continue
            optimizer.zero_grad()
            logits = model(x)
            loss = loss_fn(logits, y)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} in epoch {epoch}; "
                                    f"check inputs and learning rate")
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(y)
            correct += int(((logits.detach() > 0).float() == y).sum())
            seen += len(y)
        if seen == 0:
            raise TrainingError("no usable training batches")
        val_loss, val_acc = _evaluate(model, val_data, config.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss in epoch {epoch}")

        for key, val in (("epoch", epoch), ("loss", loss_sum / seen), ("accuracy", correct / seen),
                         ("val_loss", val_loss), ("val_accuracy", val_acc), ("lr", lr)):
            history[key].append(val)
        log.info("%s epoch %d: loss %.4f acc %.3f val_loss %.4f val_acc %.3f lr %.2e",
                 model.backbone_id.value, epoch, loss_sum / seen, correct / seen, val_loss, val_acc, lr)

        if stopper.update(epoch, val_loss):
            best_state = copy.deepcopy(model.head.state_dict())
            if ckpt is not None:
                torch.save(best_state, ckpt / "best_head.pt")
        plateau.update(epoch, val_loss)
        if stopper.should_stop:
            log.info("early stopping after epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break

    model.head.load_state_dict(best_state)
    model.eval()
    history["best_epoch"] = stopper.best_epoch
    history["stopped_epoch"] = stopper.stopped_epoch
    return ModelArtifact(
        backbone_id=model.backbone_id,
        head_config=model.head_config,
        model=model,
        param_counts=count_parameters(model),
        history=history,
        train_config=asdict(config),
        weights=weights,
    )


def _as_model(obj) -> TransferModel:
    return obj.model if isinstance(obj, ModelArtifact) else obj


def predict_logits(model_or_artifact, images, batch_size: int = 16) -> np.ndarray:
    model = _as_model(model_or_artifact)
    x = images if isinstance(images, torch.Tensor) and images.ndim == 4 and images.shape[1] == 3 else to_batch(images)
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            out.append(model(x[start:start + batch_size]).double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def predict_proba(model_or_artifact, images, batch_size: int = 16) -> np.ndarray:
    """Sigmoid output per image (probability of COVID)."""
    return sigmoid(predict_logits(model_or_artifact, images, batch_size))


def predict_dataset(model_or_artifact, dataset, batch_size: int = 16):
    """Return (probabilities, head embeddings) for every item of ``dataset``."""
    model = _as_model(model_or_artifact)
    model.eval()
    probs, feats = [], []
    with torch.no_grad():
        for x, _ in _batches(dataset, batch_size):
            emb = model.embed(x)
            feats.append(emb.numpy().astype(np.float32))
            probs.append(sigmoid(model.head.out(emb).squeeze(1).double().numpy()))
    width = model.head_config.dense_width
    return (np.concatenate(probs) if probs else np.zeros(0),
            np.concatenate(feats) if feats else np.zeros((0, width), np.float32))


# --- persistence ------------------------------------------------------------

def save_artifact(artifact: ModelArtifact, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = path / "model.pt"
    torch.save(artifact.model.state_dict(), blob)
    _io.write_json(path / "meta.json", {
        "kind": "model",
        "version": ARTIFACT_VERSION,
        "backbone_id": artifact.backbone_id.value,
        "head_config": asdict(artifact.head_config),
        "imagenet_preproc": artifact.model.imagenet_preproc,
        "weights": artifact.weights,
        "param_counts": artifact.param_counts._asdict(),
        "history": artifact.history,
        "train_config": artifact.train_config,
        "sha256": _io.sha256_file(blob),
    })
    return path


def load_artifact(path) -> ModelArtifact:
    path = Path(path)
    if not (path / "meta.json").exists():
        raise ArtifactNotFoundError(f"no model artifact at {path}")
    meta = _io.read_json(path / "meta.json")
    _io.check_version(meta, "model", ARTIFACT_VERSION, path)
    blob = path / "model.pt"
    _io.verify_checksum(blob, meta["sha256"])
    backbone_id = BackboneId(meta["backbone_id"])
    head_config = HeadConfig(**meta["head_config"])
    model = TransferModel(backbone_id, build_backbone(backbone_id, "random"), head_config,
                          imagenet_preproc=meta["imagenet_preproc"])
    try:
        state = torch.load(blob, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except Exception as exc:
        raise IntegrityError(f"cannot restore weights from {blob}: {exc}") from exc
    model.eval()
    return ModelArtifact(
        backbone_id=backbone_id,
        head_config=head_config,
        model=model,
        param_counts=ParamCounts(**meta["param_counts"]),
        history=meta["history"],
        train_config=meta["train_config"],
        weights=meta["weights"],
    )
