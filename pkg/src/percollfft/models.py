"""CNN backbones, spectral-feature fusion heads and Grad-CAM."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, DimensionError
from .rng import Xoshiro256, derive_seed
from .tensor import Tensor, as_tensor, concat, mul, tsum

BACKBONES = ("alexnet-style", "vgg16-style", "tiny")
FUSIONS = ("none", "early", "late")

# Layer specs: ("conv", c_in, c_out, kernel, stride, pad), ("relu",),
# ("maxpool", kernel, stride), ("adaptive", (h, w)).
_VGG16_PLAN = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M",
               512, 512, 512, "M"]


def _vgg16_spec():
    spec, c = [], 3
    for v in _VGG16_PLAN:
        if v == "M":
            spec.append(("maxpool", 2, 2))
        else:
            spec += [("conv", c, v, 3, 1, 1), ("relu",)]
            c = v
    return spec + [("adaptive", (7, 7))]


BACKBONE_SPECS = {
    "alexnet-style": [
        ("conv", 3, 64, 11, 4, 2), ("relu",), ("maxpool", 3, 2),
        ("conv", 64, 192, 5, 1, 2), ("relu",), ("maxpool", 3, 2),
        ("conv", 192, 384, 3, 1, 1), ("relu",),
        ("conv", 384, 256, 3, 1, 1), ("relu",),
        ("conv", 256, 256, 3, 1, 1), ("relu",), ("maxpool", 3, 2),
        ("adaptive", (6, 6)),
    ],
    "vgg16-style": _vgg16_spec(),
    "tiny": [
        ("conv", 3, 16, 3, 1, 1), ("relu",), ("maxpool", 2, 2),
        ("conv", 16, 32, 3, 1, 1), ("relu",), ("maxpool", 2, 2),
        ("conv", 32, 32, 3, 1, 1), ("relu",),
        ("adaptive", (4, 4)),
    ],
}

BACKBONE_DEFAULTS = {
    "alexnet-style": {"input_size": (224, 224), "cnn_feature_dim": 9216, "fc_dims": (4096, 1024)},
    "vgg16-style": {"input_size": (224, 224), "cnn_feature_dim": 25088, "fc_dims": (4096, 1024)},
    "tiny": {"input_size": (96, 24), "cnn_feature_dim": 512, "fc_dims": (256, 128)},
}


def infer_output_shape(spec, input_shape):
    """Propagate a (C, H, W) shape through a layer spec without allocating."""
    c, h, w = input_shape
    for layer in spec:
        kind = layer[0]
        if kind == "conv":
            _, c_in, c_out, k, s, p = layer
            if c_in != c:
                raise ConfigError(f"conv expects {c_in} channels, gets {c}")
            h, w = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            c = c_out
        elif kind == "maxpool":
            _, k, s = layer
            h, w = (h - k) // s + 1, (w - k) // s + 1
        elif kind == "adaptive":
            oh, ow = layer[1]
            if oh > h or ow > w:
                raise ConfigError(f"adaptive pool {(oh, ow)} exceeds feature map {(h, w)}")
            h, w = oh, ow
        if h < 1 or w < 1:
            raise ConfigError(f"input {input_shape[1:]} too small for backbone")
    return c, h, w


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "tiny"
    input_size: tuple = None
    cnn_feature_dim: int = None
    fc_dims: tuple = None
    num_classes: int = 4
    fusion: str = "late"
    fft_dim: int = 300
    dropout_rate: float = 0.5
    spectral_window: int = 5
    image_size: tuple = (500, 100)  # native (H, W) the spectral path expects

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"model.backbone must be one of {BACKBONES}, got {self.backbone!r}")
        defaults = BACKBONE_DEFAULTS[self.backbone]
        for key, value in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        object.__setattr__(self, "input_size", tuple(self.input_size))
        object.__setattr__(self, "fc_dims", tuple(self.fc_dims))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        self.validate()

    def validate(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"model.fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.num_classes < 2:
            raise ConfigError(f"model.num_classes must be >= 2, got {self.num_classes}")
        if len(self.fc_dims) != 2 or min(self.fc_dims) < 1:
            raise ConfigError(f"model.fc_dims must be two positive widths, got {self.fc_dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"model.dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.fusion != "none" and self.fft_dim <= 0:
            raise ConfigError(f"model.fft_dim must be > 0 with fusion {self.fusion!r}")
        n = self.spectral_window
        if self.fusion != "none":
            expected = 3 * (self.image_size[0] // n)
            if self.fft_dim != expected:
                raise ConfigError(
                    f"model.fft_dim {self.fft_dim} != 3 * (image height {self.image_size[0]} // {n})")
        c, h, w = infer_output_shape(BACKBONE_SPECS[self.backbone], (3,) + self.input_size)
        if c * h * w != self.cnn_feature_dim:
            raise ConfigError(
                f"model.cnn_feature_dim {self.cnn_feature_dim} != backbone output {c}x{h}x{w}")

    @property
    def classifier_in_dims(self):
        d1, d2 = self.fc_dims
        extra = self.fft_dim if self.fusion != "none" else 0
        return (self.cnn_feature_dim + (extra if self.fusion == "early" else 0),
                d1 + (extra if self.fusion == "late" else 0),
                d2)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)

    def fingerprint(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _make_layer(layer, rng):
    kind = layer[0]
    if kind == "conv":
        _, c_in, c_out, k, s, p = layer
        return nn.Conv2d(c_in, c_out, k, s, p, rng=rng)
    if kind == "relu":
        return nn.ReLU()
    if kind == "maxpool":
        return nn.MaxPool2d(layer[1], layer[2])
    if kind == "adaptive":
        return nn.AdaptiveAvgPool2d(layer[1])
    raise ConfigError(f"unknown layer kind {kind!r}")


def _tap_index(layers):
    """Index of the layer whose output Grad-CAM reads: the last conv (plus its ReLU)."""
    last = max(i for i, layer in enumerate(layers) if isinstance(layer, nn.Conv2d))
    if last + 1 < len(layers) and isinstance(layers[last + 1], nn.ReLU):
        last += 1
    return last


class FusionModel:
    """Backbone ``features`` plus a three-layer head with optional spectral fusion."""

    def __init__(self, config, features, classifier):
        self.config = config
        self.features = list(features)
        self.fc1, self.fc2, self.fc3 = classifier
        self.drop1 = nn.Dropout(config.dropout_rate)
        self.drop2 = nn.Dropout(config.dropout_rate)
        if (self.fc1.in_features, self.fc2.in_features, self.fc3.in_features) != config.classifier_in_dims:
            raise ConfigError("classifier widths disagree with the fusion configuration")
        self.tap = _tap_index(self.features)

    def named_parameters(self):
        out = []
        conv_i = 0
        for layer in self.features:
            if isinstance(layer, nn.Conv2d):
                out += [(f"features.{conv_i}.weight", layer.weight), (f"features.{conv_i}.bias", layer.bias)]
                conv_i += 1
        for name in ("fc1", "fc2", "fc3"):
            layer = getattr(self, name)
            out += [(f"{name}.weight", layer.weight), (f"{name}.bias", layer.bias)]
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def checksum(self):
        h = hashlib.sha256()
        for _, p in self.named_parameters():
            h.update(p.data.tobytes())
        return h.hexdigest()

    def forward_features(self, image, keep_activation=False):
        """Flattened pooled CNN features for (3, H, W) or (B, 3, H, W) input."""
        x = as_tensor(image)
        if x.shape[-3:] != (3,) + self.config.input_size:
            raise DimensionError(
                f"input {x.shape[-3:]} does not match configured (3, {self.config.input_size})")
        x = nn.standardize(x)
        act = None
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i == self.tap:
                act = x
        flat = x.reshape(x.shape[:-3] + (-1,))
        return (flat, act) if keep_activation else flat

    def classify(self, h_cnn, h_fft=None, train=False, rng=None):
        """Logits from CNN features, fusing ``h_fft`` per the configured mode."""
        cfg = self.config
        if (h_fft is None) != (cfg.fusion == "none"):
            raise ContractError(f"fusion {cfg.fusion!r} {'needs' if h_fft is None else 'takes no'} spectral features")
        if h_fft is not None:
            h_fft = as_tensor(getattr(h_fft, "values", h_fft)).reshape(h_cnn.shape[:-1] + (-1,))
            if h_fft.shape[-1] != cfg.fft_dim:
                raise ContractError(f"spectral features have width {h_fft.shape[-1]}, expected {cfg.fft_dim}")
            if h_fft.dtype != h_cnn.dtype:
                h_fft = Tensor(h_fft.data, dtype=h_cnn.dtype)
        if rng is None:
            rng = Xoshiro256(0)
        x = h_cnn
        if cfg.fusion == "early":
            x = concat([x, h_fft])
        x = self.drop1(nn.relu(self.fc1(x)), train, rng)
        if cfg.fusion == "late":
            x = concat([x, h_fft])
        x = self.drop2(nn.relu(self.fc2(x)), train, rng)
        return self.fc3(x)

    def forward(self, images, h_fft=None, train=False, rng=None):
        return self.classify(self.forward_features(images), h_fft, train, rng)

    def predict_proba(self, images, h_fft=None):
        return nn.softmax(self.forward(images, h_fft).data)


def predicted_class(logits):
    """Arg-max with ties going to the lowest class index."""
    return np.argmax(np.asarray(logits), axis=-1)


def build_model(config, seed=0):
    """Deterministically initialised model for ``config``."""
    rng = Xoshiro256(derive_seed(seed, "init"))
    features = [_make_layer(layer, rng) for layer in BACKBONE_SPECS[config.backbone]]
    i1, i2, i3 = config.classifier_in_dims
    d1, d2 = config.fc_dims
    # the logit layer feeds softmax, not ReLU, so it gets the smaller bound
    head = (nn.Linear(i1, d1, rng), nn.Linear(i2, d2, rng),
            nn.Linear(i3, config.num_classes, rng, gain=1.0))
    return FusionModel(config, features, head)


@dataclass
class GradCamMap:
    heatmap: np.ndarray
    target_class: int
    degenerate: bool = False  # pre-normalisation map was identically zero
    weights: np.ndarray = field(default=None, repr=False)


def grad_cam(model, image, target_class, h_fft=None):
    """Class-discriminative localisation map at input resolution.

    Channel weights are the spatial means of d(logit)/d(activation) at the
    last convolutional layer; the ReLU of the weighted activation sum is
    bilinearly upsampled and min-max scaled to [0, 1]. Parameter gradients
    are restored afterwards, so the model is left untouched.
    """
    cfg = model.config
    if not 0 <= target_class < cfg.num_classes:
        raise ContractError(f"target class {target_class} outside [0, {cfg.num_classes})")
    x = as_tensor(image)
    if x.ndim != 3:
        raise DimensionError("grad_cam takes a single (3, H, W) image")
    params = model.parameters()
    saved = [p.grad for p in params]
    try:
        for p in params:
            p.grad = None
        feats, act = model.forward_features(x, keep_activation=True)
        logits = model.classify(feats, h_fft)
        onehot = np.zeros(cfg.num_classes, dtype=logits.dtype)
        onehot[target_class] = 1.0
        tsum(mul(logits, onehot)).backward()
        grads = act.grad if act.grad is not None else np.zeros_like(act.data)
        activation = act.data.astype(np.float64)
    finally:
        for p, g in zip(params, saved):
            p.grad = g
    alpha = grads.astype(np.float64).mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, activation, axes=1), 0.0)
    H, W = cfg.input_size
    up = np.maximum(nn.bilinear_resize(cam, H, W), 0.0)
    hi, lo = up.max(), up.min()
    if hi <= 0.0:
        return GradCamMap(np.zeros((H, W)), target_class, True, alpha)
    if hi == lo:
        return GradCamMap(np.ones((H, W)), target_class, False, alpha)
    return GradCamMap((up - lo) / (hi - lo), target_class, False, alpha)


def heatmap_to_uint8(cam, overlay=None):
    """8-bit grayscale heatmap, or a red overlay on an (H, W, 3) image in [0, 1]."""
    h = np.asarray(cam.heatmap if isinstance(cam, GradCamMap) else cam)
    if overlay is None:
        return np.round(h * 255.0).astype(np.uint8)
    base = np.asarray(overlay, dtype=np.float64)
    red = np.zeros_like(base)
    red[..., 0] = 1.0
    a = 0.5 * h[..., None]
    return np.round(np.clip(base * (1 - a) + red * a, 0, 1) * 255.0).astype(np.uint8)


def with_fusion(config, fusion):
    return replace(config, fusion=fusion)
