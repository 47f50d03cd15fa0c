"""RGB data path: person crops, uniform temporal sampling, and the temporal
composite image fed to the small convolutional feature extractor.

A composite is built by sampling m frames from a clip, cropping each to the
person box (full frame when no box is given), resizing with bilinear
interpolation, and concatenating the crops left to right in chronological
order. Values are scaled to [0, 1] and standardized per channel before
feature extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericError
from .rng import substream

STD_GUARD = 1e-8  # constant-channel composites standardize to zero, not NaN


@dataclass
class FrameSet:
    """Frames of one clip (each H x W x 3 uint8) and optional person boxes."""

    frames: list[np.ndarray]
    boxes: list[tuple[float, float, float, float] | None] | None = None

    def __post_init__(self):
        if len(self.frames) < 1:
            raise DataError("frame set must contain at least one frame")
        for i, f in enumerate(self.frames):
            if f.ndim != 3 or f.shape[2] != 3:
                raise DataError(f"frame {i} must be HxWx3, got {f.shape}")
        if self.boxes is not None:
            if len(self.boxes) != len(self.frames):
                raise DataError("boxes must align one-to-one with frames")
            for i, box in enumerate(self.boxes):
                if box is None:
                    continue
                x, y, w, h = box
                fh, fw = self.frames[i].shape[:2]
                if x < 0 or y < 0 or x + w > fw or y + h > fh:
                    raise DataError(f"box {box} of frame {i} exceeds frame bounds {fw}x{fh}")


@dataclass
class TemporalCompositeImage:
    """Standardized composite, (h, m*w, 3) float64; width is a multiple of m."""

    image: np.ndarray
    m: int

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DataError(f"composite must be h x (m*w) x 3, got {self.image.shape}")
        if self.image.shape[1] % self.m != 0:
            raise DataError(
                f"composite width {self.image.shape[1]} is not a multiple of m={self.m}"
            )


def uniform_sample_indices(
    n: int, m: int, training: bool = False, rng: np.random.Generator | None = None
) -> list[int]:
    """m frame indices from n frames, one per equal segment.

    Evaluation takes each segment's center, floor((i + 0.5) * n / m); training
    draws uniformly within segment i using the provided substream generator.
    """
    if n < 1 or m < 1:
        raise DataError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    if training:
        if rng is None:
            raise ConfigError("training-mode sampling requires a generator")
        return [int(np.floor(rng.uniform(i * n / m, (i + 1) * n / m))) for i in range(m)]
    return [int(np.floor((i + 0.5) * n / m)) for i in range(m)]


def crop_and_resize(
    frame: np.ndarray,
    box: tuple[float, float, float, float] | None,
    target_h: int,
    target_w: int,
) -> np.ndarray:
    """Bilinear resize of the box region (x, y, w, h); no box means full frame.

    Uses half-pixel centers: output pixel (i, j) samples the source at
    (y + (i + 0.5) * h / th - 0.5, x + (j + 0.5) * w / tw - 0.5), clamped to
    the frame. Full-frame box at native size is the identity.
    """
    if target_h <= 0 or target_w <= 0:
        raise ConfigError(f"target size must be positive, got {target_h}x{target_w}")
    frame = np.asarray(frame, dtype=np.float64)
    fh, fw = frame.shape[:2]
    if box is None:
        box = (0.0, 0.0, float(fw), float(fh))
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise DataError(f"degenerate box {box}: zero area")
    sy = y + (np.arange(target_h) + 0.5) * h / target_h - 0.5
    sx = x + (np.arange(target_w) + 0.5) * w / target_w - 0.5
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, fh - 1)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, fw - 1)
    y1 = np.clip(y0 + 1, 0, fh - 1)
    x1 = np.clip(x0 + 1, 0, fw - 1)
    fy = np.clip(sy - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(sx - x0, 0.0, 1.0)[None, :, None]
    tl = frame[np.ix_(y0, x0)]
    tr = frame[np.ix_(y0, x1)]
    bl = frame[np.ix_(y1, x0)]
    br = frame[np.ix_(y1, x1)]
    top = tl * (1 - fx) + tr * fx
    bottom = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bottom * fy


def concat_crops(crops: list[np.ndarray]) -> np.ndarray:
    """Left-to-right concatenation in chronological order (pre-standardization)."""
    if not crops:
        raise DataError("no crops to concatenate")
    shape = crops[0].shape
    for i, c in enumerate(crops):
        if c.shape != shape:
            raise DataError(f"crop {i} has shape {c.shape}, expected {shape}")
    return np.concatenate(crops, axis=1)


def standardize(image: np.ndarray) -> np.ndarray:
    """Scale 8-bit values to [0, 1], then zero-mean/unit-variance per channel."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    mean = img.mean(axis=(0, 1), keepdims=True)
    std = img.std(axis=(0, 1), keepdims=True)
    return (img - mean) / (std + STD_GUARD)


def concat_temporal(crops: list[np.ndarray]) -> TemporalCompositeImage:
    """Composite image from m same-size crops: concatenate, then standardize."""
    return TemporalCompositeImage(image=standardize(concat_crops(crops)), m=len(crops))


def build_composite(
    frame_set: FrameSet,
    m: int,
    crop_h: int,
    crop_w: int,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> TemporalCompositeImage:
    """Full pipeline: sample m frames, crop+resize each, concatenate, standardize."""
    idx = uniform_sample_indices(len(frame_set.frames), m, training=training, rng=rng)
    crops = []
    for i in idx:
        box = frame_set.boxes[i] if frame_set.boxes is not None else None
        crops.append(crop_and_resize(frame_set.frames[i], box, crop_h, crop_w))
    return concat_temporal(crops)


def composite_to_raw_image(frame_set: FrameSet, m: int, crop_h: int, crop_w: int) -> np.ndarray:
    """Unstandardized 8-bit composite (for export to PNG), evaluation sampling."""
    idx = uniform_sample_indices(len(frame_set.frames), m, training=False)
    crops = []
    for i in idx:
        box = frame_set.boxes[i] if frame_set.boxes is not None else None
        crops.append(crop_and_resize(frame_set.frames[i], box, crop_h, crop_w))
    return np.clip(np.rint(concat_crops(crops)), 0, 255).astype(np.uint8)


# -- feature extractor -----------------------------------------------------------


@dataclass
class CnnConfig:
    widths: tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    stride: int = 2
    in_channels: int = 3

    def __post_init__(self):
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ConfigError("extractor widths must be positive")
        if self.kernel % 2 == 0:
            raise ConfigError(f"extractor kernel must be odd, got {self.kernel}")

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]


@dataclass
class CnnExtractor:
    """Small strided conv stack with global mean pooling."""

    config: CnnConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: CnnConfig, seed: int) -> "CnnExtractor":
        params: dict[str, Tensor] = {}
        c_prev = config.in_channels
        for i, c_out in enumerate(config.widths):
            rng = substream(seed, f"init.cnn.layer{i}.w")
            scale = np.sqrt(2.0 / (c_prev * config.kernel * config.kernel))
            params[f"cnn.layer{i}.w"] = Tensor(
                rng.standard_normal((c_out, c_prev, config.kernel, config.kernel)) * scale,
                requires_grad=True,
            )
            params[f"cnn.layer{i}.bias"] = Tensor(np.zeros(c_out), requires_grad=True)
            c_prev = c_out
        return cls(config=config, params=params)

    def features(self, x) -> Tensor:
        """x: standardized composite, channels-first (..., 3, H, W) -> (..., C)."""
        h = ad.as_tensor(x)
        for i in range(len(self.config.widths)):
            h = ad.conv2d(h, self.params[f"cnn.layer{i}.w"], stride=self.config.stride)
            bias = self.params[f"cnn.layer{i}.bias"]
            h = ad.add(h, ad.reshape(bias, (bias.shape[0], 1, 1)))
            h = ad.relu(h)
        return ad.reduce_mean(h, axis=(-2, -1))


def extract_cnn_features(composite: TemporalCompositeImage, extractor: CnnExtractor) -> np.ndarray:
    """Fixed-length feature vector for one composite (array-level API)."""
    chw = np.transpose(composite.image, (2, 0, 1))
    out = extractor.features(chw).value
    if not np.all(np.isfinite(out)):
        raise NumericError("extractor produced non-finite features")
    return out


def composite_rng(seed: int, sample_id: str, epoch: int) -> np.random.Generator:
    """Substream for training-mode frame sampling of one sample in one epoch."""
    return substream(seed, f"frames.{sample_id}.epoch{epoch}")
