"""Synthetic Percoll tube images standing in for the clinical photographs.

Each image is a vertical tube of pale gradient medium on a light background,
crossed by horizontal red-cell bands whose count, position, width and
darkness depend on the class:

==============  =====  ===========  ==============  ============
class           bands  width (px)   centre rows     darkness
==============  =====  ===========  ==============  ============
healthy         2      12-16        165-185,        0.45-0.60
                                    280-300
sickle          4      8-10         135-150, ...    0.85-0.95
spherocytosis   1      55-65        320-340         0.70-0.80
thalassemia     3      20-26        150-165, ...    0.30-0.40
==============  =====  ===========  ==============  ============

Rows are given for the default 500-pixel height and scale with it. All
geometry is drawn as integers; the only float randomness is the Gaussian
pixel noise (Box-Muller over xoshiro doubles). Output is quantised to 8 bits
so an image written to disk and read back is identical to the in-memory one.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import CLASSES, THALASSEMIA_SUBTYPES, Manifest, Record, write_manifest
from .errors import ConfigError
from .images import Image, write_image
from .rng import Xoshiro256, derive_seed

# (centre ranges, width range, darkness range in per-mille) at height 500
_BAND_SPECS = {
    0: ([(165, 185), (280, 300)], (12, 16), (450, 600)),
    1: ([(135, 150), (210, 225), (290, 305), (370, 385)], (8, 10), (850, 950)),
    2: ([(320, 340)], (55, 65), (700, 800)),
    3: ([(150, 165), (245, 260), (340, 355)], (20, 26), (300, 400)),
}
_REF_HEIGHT = 500

BACKGROUND = np.array([0.93, 0.93, 0.92])
MEDIUM = np.array([0.96, 0.90, 0.82])
BAND = np.array([0.55, 0.08, 0.10])
GLASS = np.array([0.70, 0.70, 0.72])


@dataclass(frozen=True)
class SynthParams:
    height: int = 500
    width: int = 100
    tube_left: int = 30
    tube_right: int = 70
    fill_row: int = 40         # medium surface, at reference height
    noise_sigma: float = 0.015
    illumination_jitter: int = 15  # per-mille, +-

    def __post_init__(self):
        if self.height < 100 or self.width < 15:
            raise ConfigError(f"synth image {self.height}x{self.width} too small (min 100x15)")
        if not 0 < self.tube_left < self.tube_right < self.width:
            raise ConfigError("synth tube columns must satisfy 0 < left < right < width")
        if self.noise_sigma < 0 or self.illumination_jitter < 0:
            raise ConfigError("synth noise_sigma and illumination_jitter must be >= 0")

    def to_json(self):
        return asdict(self)


@dataclass(frozen=True)
class Band:
    centre: int
    width: int
    darkness: float

    @property
    def top(self):
        return self.centre - self.width // 2

    @property
    def bottom(self):
        return self.centre + (self.width - 1) // 2


@dataclass(frozen=True)
class BandGeometry:
    bands: tuple
    region: tuple  # (row0, row1, col0, col1), half-open

    def mask(self, height, width):
        m = np.zeros((height, width), dtype=bool)
        r0, r1, c0, c1 = self.region
        m[r0:r1, c0:c1] = True
        return m

    def to_json(self):
        return {"bands": [asdict(b) for b in self.bands], "region": list(self.region)}

    @classmethod
    def from_json(cls, obj):
        return cls(tuple(Band(**b) for b in obj["bands"]), tuple(obj["region"]))


def _draw_bands(label, rng, height):
    centres, (w_lo, w_hi), (d_lo, d_hi) = _BAND_SPECS[label]
    scale = height / _REF_HEIGHT
    bands = []
    for lo, hi in centres:
        c = rng.integers(lo, hi + 1)
        w = rng.integers(w_lo, w_hi + 1)
        d = rng.integers(d_lo, d_hi + 1)
        bands.append(Band(round(c * scale), max(2, round(w * scale)), d / 1000.0))
    return bands


def synth_generate(label, seed, params=None):
    """Render one tube. Returns ``(Image, BandGeometry, subtype)``."""
    params = params or SynthParams()
    if label not in _BAND_SPECS:
        raise ConfigError(f"unknown class index {label}")
    rng = Xoshiro256(derive_seed(seed, "synth", label))
    H, W = params.height, params.width
    bands = _draw_bands(label, rng, H)
    subtype = ""
    if CLASSES[label] == "thalassemia":
        subtype = THALASSEMIA_SUBTYPES[rng.integers(0, len(THALASSEMIA_SUBTYPES))]
    j = params.illumination_jitter
    gain = (1000 + rng.integers(-j, j + 1)) / 1000.0
    tilt = rng.integers(-j, j + 1) / 1000.0

    rows = np.arange(H)
    # per-row band weight: raised-cosine bump across each band's width
    weight = np.zeros(H)
    for b in bands:
        t = (rows - b.centre) / (b.width / 2.0)
        bump = np.where(np.abs(t) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * t)), 0.0)
        weight = np.maximum(weight, b.darkness * bump)
    fill = round(params.fill_row * H / _REF_HEIGHT)
    column = MEDIUM[None, :] * (1.0 - weight[:, None]) + BAND[None, :] * weight[:, None]
    column[:fill] = BACKGROUND

    img = np.broadcast_to(BACKGROUND, (H, W, 3)).copy()
    l, r = params.tube_left, params.tube_right
    img[:, l:r] = column[:, None, :]
    img[:, l] = GLASS
    img[:, r - 1] = GLASS

    light = gain * (1.0 + tilt * (rows / (H - 1) - 0.5))
    img *= light[:, None, None]
    if params.noise_sigma > 0:
        img += params.noise_sigma * rng.normal_array(img.size).reshape(img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0

    r0 = max(0, min(b.top for b in bands))
    r1 = min(H, max(b.bottom for b in bands) + 1)
    geometry = BandGeometry(tuple(bands), (r0, r1, l, r))
    return Image(img, id="", label=label), geometry, subtype


def synth_dataset(count, seed, params=None, out_dir=None):
    """Balanced dataset: image ``i`` has class ``i mod 4``.

    When ``out_dir`` is given, writes ``images/*.ppm``, ``manifest.csv`` and
    ``bands.json``. Returns ``(images, geometries, manifest)``.
    """
    params = params or SynthParams()
    images, geoms, records = [], {}, []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "images").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        label = i % len(CLASSES)
        img, geom, subtype = synth_generate(label, derive_seed(seed, i), params)
        img.id = f"synth_{i:04d}"
        rel = Path("images") / f"{img.id}.ppm"
        if out is not None:
            write_image(out / rel, img)
        images.append(img)
        geoms[img.id] = geom
        records.append(Record(img.id, (out / rel) if out is not None else rel, label, subtype))
    manifest = Manifest(records)
    if out is not None:
        write_manifest(out / "manifest.csv", manifest)
        (out / "bands.json").write_text(
            json.dumps({k: g.to_json() for k, g in geoms.items()}, indent=1) + "\n")
    return images, geoms, manifest
