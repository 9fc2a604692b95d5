"""Training-time augmentation: vertical flip, crop-and-resize, translation, noise."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .images import Image
from .nn import bilinear_resize
from .rng import Xoshiro256, derive_seed


@dataclass(frozen=True)
class AugmentParams:
    p_flip: float = 0.5
    p_crop: float = 0.5
    crop_scale_min: float = 0.85
    crop_scale_max: float = 1.0
    p_translate: float = 0.5
    max_translate: float = 0.05  # fraction of each axis
    p_noise: float = 0.5
    noise_sigma: float = 0.01

    def __post_init__(self):
        for name in ("p_flip", "p_crop", "p_translate", "p_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"augment.{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.crop_scale_min <= self.crop_scale_max <= 1.0:
            raise ConfigError("augment.crop_scale_min/max must satisfy 0 < min <= max <= 1")
        if not 0.0 <= self.max_translate < 0.5:
            raise ConfigError(f"augment.max_translate must lie in [0, 0.5), got {self.max_translate}")
        if self.noise_sigma < 0:
            raise ConfigError(f"augment.noise_sigma must be >= 0, got {self.noise_sigma}")

    @classmethod
    def disabled(cls):
        return cls(p_flip=0.0, p_crop=0.0, p_translate=0.0, p_noise=0.0, noise_sigma=0.0)

    def to_json(self):
        return asdict(self)


def augment_pixels(px, rng, params):
    """Augment an (H, W, C) array with draws from ``rng``.

    Every decision is drawn whether or not it fires, so one transform being
    switched off does not shift the draws of the others. Noise samples come last.
    """
    H, W = px.shape[:2]
    do_flip = rng.random() < params.p_flip
    do_crop = rng.random() < params.p_crop
    scale = params.crop_scale_min + (params.crop_scale_max - params.crop_scale_min) * rng.random()
    ch, cw = max(1, round(scale * H)), max(1, round(scale * W))
    top = rng.integers(0, H - ch + 1)
    left = rng.integers(0, W - cw + 1)
    do_shift = rng.random() < params.p_translate
    my, mx = round(params.max_translate * H), round(params.max_translate * W)
    dy = rng.integers(-my, my + 1)
    dx = rng.integers(-mx, mx + 1)
    do_noise = rng.random() < params.p_noise and params.noise_sigma > 0

    out = px
    if do_flip:
        out = out[::-1]
    if do_crop and (ch, cw) != (H, W):
        patch = out[top:top + ch, left:left + cw]
        out = bilinear_resize(patch.transpose(2, 0, 1), H, W).transpose(1, 2, 0)
    if do_shift and (dy or dx):
        rows = np.clip(np.arange(H) - dy, 0, H - 1)
        cols = np.clip(np.arange(W) - dx, 0, W - 1)
        out = out[rows][:, cols]
    if do_noise:
        out = out + params.noise_sigma * rng.normal_array(out.size).reshape(out.shape)
    return np.clip(out, 0.0, 1.0).astype(px.dtype)


def augment(image, seed, params=None):
    """Deterministic augmentation keyed by ``(seed, image.id)``."""
    params = params or AugmentParams()
    rng = Xoshiro256(derive_seed(seed, image.id))
    return Image(augment_pixels(image.pixels, rng, params), id=image.id, label=image.label)
