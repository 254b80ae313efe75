"""Training-time image augmentation.

Defaults: rotation within +/-10 deg, 5 % width/height shifts, shear 0.1,
zoom 10 %, brightness in [0.9, 1.1] and reflective fill. Geometry is applied as one composed affine map
(rotate -> shear -> zoom -> shift, about the image centre) so each image is
resampled only once.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError


class FillMode(str, enum.Enum):
    REFLECT = "reflect"
    NEAREST = "nearest"
    CONSTANT = "constant"


@dataclass(frozen=True)
class AugmentationConfig:
    rotation_range: float = 10.0  # degrees
    width_shift_range: float = 0.05  # fraction of width
    height_shift_range: float = 0.05
    shear_range: float = 0.1  # shear angle in degrees, Keras convention
    zoom_range: float = 0.10
    brightness_range: tuple[float, float] = (0.9, 1.1)
    fill_mode: FillMode = FillMode.REFLECT

    def __post_init__(self):
        object.__setattr__(self, "brightness_range", tuple(float(b) for b in self.brightness_range))
        object.__setattr__(self, "fill_mode", FillMode(self.fill_mode))
        for name in ("rotation_range", "width_shift_range", "height_shift_range", "shear_range", "zoom_range"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        lo, hi = self.brightness_range
        if lo < 0 or lo > hi:
            raise ConfigError(f"brightness_range must satisfy 0 <= lo <= hi, got {self.brightness_range}")
        if self.zoom_range >= 1:
            raise ConfigError("zoom_range must be < 1")

    @classmethod
    def identity(cls) -> AugmentationConfig:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, (1.0, 1.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["brightness_range"] = list(self.brightness_range)
        d["fill_mode"] = self.fill_mode.value
        return d


@dataclass(frozen=True)
class AugmentParams:
    rotation: float = 0.0  # degrees
    dx: float = 0.0  # pixels
    dy: float = 0.0
    shear: float = 0.0  # degrees
    zoom: float = 1.0
    brightness: float = 1.0

    @property
    def is_geometric_identity(self) -> bool:
        return self.rotation == 0 and self.dx == 0 and self.dy == 0 and self.shear == 0 and self.zoom == 1


def sample_params(config: AugmentationConfig, rng: np.random.Generator,
                  shape: tuple[int, int] = (224, 224)) -> AugmentParams:
    """Draw one augmentation uniformly from the configured ranges."""
    h, w = shape[:2]
    u = rng.uniform(-1.0, 1.0, size=5)
    lo, hi = config.brightness_range
    return AugmentParams(
        rotation=float(u[0] * config.rotation_range),
        dx=float(u[1] * config.width_shift_range * w),
        dy=float(u[2] * config.height_shift_range * h),
        shear=float(u[3] * config.shear_range),
        zoom=float(1.0 + u[4] * config.zoom_range),
        brightness=float(rng.uniform(lo, hi)) if hi > lo else float(lo),
    )


def _forward_matrix(p: AugmentParams) -> np.ndarray:
    """2x2 map in (row, col) coordinates taking input offsets to output offsets."""
    t = math.radians(p.rotation)
    s = math.radians(p.shear)
    # written in (x, y) and converted to (row, col) = (y, x) below
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    shear = np.array([[1.0, -math.sin(s)], [0.0, math.cos(s)]])
    zoom = np.eye(2) * p.zoom
    m_xy = zoom @ shear @ rot
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    return swap @ m_xy @ swap


def apply_augmentation(image, params: AugmentParams, fill_mode: FillMode | str = FillMode.REFLECT):
    """Warp ``image`` (H x W x C array or ImageTensor) and scale its brightness.

    Returns the same type as passed in. Output is clipped to [0, 1].
    """
    from .data import ImageTensor

    data = image.data if isinstance(image, ImageTensor) else np.asarray(image)
    out = data.astype(np.float32, copy=True)
    if not params.is_geometric_identity:
        h, w = data.shape[:2]
        centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        fwd = _forward_matrix(params)
        inv = np.linalg.inv(fwd)
        shift = np.array([params.dy, params.dx])
        offset = centre - inv @ (centre + shift)
        mode = FillMode(fill_mode).value
        for c in range(data.shape[2]):
            out[..., c] = ndimage.affine_transform(
                data[..., c].astype(np.float64), inv, offset=offset, order=1, mode=mode, cval=0.0
            )
    if params.brightness != 1.0:
        out *= np.float32(params.brightness)
    np.clip(out, 0.0, 1.0, out=out)
    if isinstance(image, ImageTensor):
        return ImageTensor(data=out, source=image.source)
    return out
