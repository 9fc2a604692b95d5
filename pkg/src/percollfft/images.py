"""Image container plus PPM (P6) and PNG codecs."""

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeError, DimensionError


@dataclass
class Image:
    """RGB raster, (H, W, 3) float64 in [0, 1]."""

    pixels: np.ndarray
    id: str = ""
    label: int | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"image must be (H, W, 3), got {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise DimensionError("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def to_uint8(self):
        return np.round(self.pixels * 255.0).astype(np.uint8)

    def chw(self, dtype=np.float32):
        """Channel-major copy for the CNN."""
        return np.ascontiguousarray(self.pixels.transpose(2, 0, 1), dtype=dtype)


_WS = b" \t\n\r\v\f"


def _ppm_token(data, pos):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f"):
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos:pos + 1] not in _WS and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DecodeError("truncated PPM header", start)
    return data[start:pos], start, pos


def decode_ppm(data):
    if data[:2] != b"P6":
        raise DecodeError("not a binary PPM (missing P6 magic)", 0)
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, start, pos = _ppm_token(data, pos)
        if not re.fullmatch(rb"\d+", tok):
            raise DecodeError(f"bad PPM {name} {tok!r}", start)
        fields.append(int(tok))
    w, h, maxval = fields
    if w < 1 or h < 1 or not 1 <= maxval <= 65535:
        raise DecodeError(f"invalid PPM geometry {w}x{h} maxval {maxval}", 2)
    if pos >= len(data) or data[pos:pos + 1] not in _WS:
        raise DecodeError("missing whitespace after PPM header", pos)
    pos += 1
    depth = 1 if maxval < 256 else 2
    need = w * h * 3 * depth
    if len(data) - pos < need:
        raise DecodeError(f"truncated PPM raster: need {need} bytes, have {len(data) - pos}",
                          len(data))
    dtype = np.uint8 if depth == 1 else np.dtype(">u2")
    raw = np.frombuffer(data, dtype=dtype, count=w * h * 3, offset=pos).reshape(h, w, 3)
    if raw.max(initial=0) > maxval:
        raise DecodeError("PPM sample exceeds maxval", pos)
    return raw.astype(np.float64) / maxval


def encode_ppm(image):
    px = image.to_uint8() if isinstance(image, Image) else np.asarray(image, dtype=np.uint8)
    h, w = px.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + px.tobytes()


def decode_png(data):
    from PIL import Image as PILImage

    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise DecodeError("not a PNG (bad signature)", 0)
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            if im.mode not in ("RGB", "RGBA") or im.info.get("bitdepth", 8) != 8:
                raise DecodeError(f"unsupported PNG mode {im.mode}; need 8-bit RGB/RGBA", 25)
            px = np.asarray(im.convert("RGB"), dtype=np.float64)
    except DecodeError:
        raise
    except Exception as exc:  # Pillow raises a zoo of types for corrupt data
        raise DecodeError(f"corrupt PNG: {exc}", 8) from exc
    return px / 255.0


def encode_png(pixels):
    from PIL import Image as PILImage

    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        px = np.round(np.clip(px, 0, 1) * 255.0).astype(np.uint8)
    mode = "L" if px.ndim == 2 else "RGB"
    buf = io.BytesIO()
    PILImage.fromarray(px, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data, fmt=None, image_id="", label=None):
    """Decode bytes; ``fmt`` is "ppm"/"png" or sniffed from the magic."""
    if fmt is None:
        fmt = "png" if data[:4] == b"\x89PNG" else "ppm"
    fmt = fmt.lower().replace("-p6", "")
    if fmt == "ppm":
        px = decode_ppm(data)
    elif fmt == "png":
        px = decode_png(data)
    else:
        raise DecodeError(f"unknown image format {fmt!r}")
    return Image(px, id=image_id, label=label)


def read_image(path, image_id=None, label=None):
    path = Path(path)
    return decode_image(path.read_bytes(), image_id=image_id or path.stem, label=label)


def write_image(path, image):
    path = Path(path)
    if path.suffix.lower() == ".png":
        path.write_bytes(encode_png(image.to_uint8()))
    else:
        path.write_bytes(encode_ppm(image))
