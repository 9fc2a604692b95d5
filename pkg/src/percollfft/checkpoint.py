"""Binary model checkpoints.

Layout::

    b"PCFM0001"                 magic + format version
    uint32 LE                   header length in bytes
    header                      UTF-8 JSON: config, class order, seed, epoch,
                                parameter names/shapes, free-form metadata
    float32 LE blobs            parameters in header order
    uint32 LE                   CRC-32 of everything above
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .dataset import CLASSES
from .errors import CheckpointError
from .models import ModelConfig, build_model

MAGIC = b"PCFM0001"
FORMAT_VERSION = 1


def checkpoint_bytes(model, seed=0, epoch=0, meta=None):
    named = model.named_parameters()
    header = {
        "format": FORMAT_VERSION,
        "config": model.config.to_json(),
        "fingerprint": model.config.fingerprint(),
        "classes": list(CLASSES),
        "seed": int(seed),
        "epoch": int(epoch),
        "params": [{"name": n, "shape": list(p.shape)} for n, p in named],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(p.data, dtype="<f4").tobytes() for _, p in named]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model, path, seed=0, epoch=0, meta=None):
    data = checkpoint_bytes(model, seed, epoch, meta)
    Path(path).write_bytes(data)
    return len(data)


def parse_checkpoint(data):
    """Return ``(model, header)`` from checkpoint bytes, validating everything."""
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("checkpoint truncated")
    if data[:4] != MAGIC[:4]:
        raise CheckpointError("not a checkpoint (bad magic)")
    if data[:8] != MAGIC:
        raise CheckpointError(f"unsupported checkpoint version {data[4:8]!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupted or truncated)")
    (hlen,) = struct.unpack_from("<I", body, 8)
    try:
        header = json.loads(body[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')}")
    if header.get("classes") != list(CLASSES):
        raise CheckpointError(f"class order {header.get('classes')} differs from {list(CLASSES)}")
    config = ModelConfig.from_json(header["config"])
    if config.fingerprint() != header.get("fingerprint"):
        raise CheckpointError("config fingerprint mismatch")
    model = build_model(config, seed=header["seed"])
    named = model.named_parameters()
    if [(n, list(p.shape)) for n, p in named] != [(e["name"], e["shape"]) for e in header["params"]]:
        raise CheckpointError("parameter layout does not match the model config")
    offset = 12 + hlen
    for _, p in named:
        nbytes = p.data.size * 4
        if offset + nbytes > len(body):
            raise CheckpointError("checkpoint truncated inside parameter data")
        p.data[...] = np.frombuffer(body, dtype="<f4", count=p.data.size, offset=offset).reshape(p.shape)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{len(body) - offset} trailing bytes after parameters")
    return model, header


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(data)
