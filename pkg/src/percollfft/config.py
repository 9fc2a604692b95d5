"""Run configuration: one JSON document plus command-line overrides.

Layout (every key optional)::

    {
      "seed": 0,
      "jobs": 1,
      "model":   {ModelConfig fields},
      "train":   {HyperParams fields except seed},
      "augment": {AugmentParams fields},
      "synth":   {SynthParams fields, "count"},
      "paths":   {"manifest", "checkpoint", "out"}
    }
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentParams
from .errors import ConfigError, PercollError
from .models import ModelConfig
from .synth import SynthParams
from .training import HyperParams

SECTIONS = {
    "model": ModelConfig,
    "train": HyperParams,
    "augment": AugmentParams,
    "synth": SynthParams,
}
PATH_KEYS = ("manifest", "checkpoint", "out")
TOP_LEVEL = ("seed", "jobs", "paths") + tuple(SECTIONS)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: HyperParams = field(default_factory=HyperParams)
    augment: AugmentParams = field(default_factory=AugmentParams)
    synth: SynthParams = field(default_factory=SynthParams)
    synth_count: int = 200
    seed: int = 0
    jobs: int = 1
    manifest: Path = None
    checkpoint: Path = None
    out: Path = Path("out")

    def to_json(self):
        synth = self.synth.to_json()
        synth["count"] = self.synth_count
        train = self.train.to_json()
        train.pop("seed")
        return {
            "seed": self.seed,
            "jobs": self.jobs,
            "model": self.model.to_json(),
            "train": train,
            "augment": self.augment.to_json(),
            "synth": synth,
            "paths": {k: (str(getattr(self, k)) if getattr(self, k) is not None else None)
                      for k in PATH_KEYS},
        }

    def write(self, out_dir=None):
        """Echo the resolved config as ``config.json`` in the output directory."""
        out = Path(out_dir or self.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return out / "config.json"


def _check_type(key, value, expected, allow_none):
    if value is None:
        if allow_none:
            return None
        raise ConfigError(f"{key} must not be null")
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif expected is str:
        ok = isinstance(value, str)
    elif expected is tuple:
        ok = (isinstance(value, (list, tuple)) and
              all(isinstance(v, int) and not isinstance(v, bool) for v in value))
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{key} has type {type(value).__name__}, expected {expected.__name__}")
    return value


def _section(name, cls, values, skip=()):
    if not isinstance(values, dict):
        raise ConfigError(f"{name} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {name}.{key}")
        f = fields[key]
        kwargs[key] = _check_type(f"{name}.{key}", value, f.type, f.default is None)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError, PercollError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config(doc=None, overrides=None, check_paths=True):
    """Build a :class:`RunConfig` from a parsed JSON object and flag overrides.

    ``overrides`` uses dotted keys (``"model.fusion"``, ``"train.epochs"``,
    ``"seed"``, ``"paths.manifest"``); ``None`` values are ignored so that
    unset flags leave file values alone.
    """
    doc = json.loads(json.dumps(doc or {}))  # private deep copy
    if not isinstance(doc, dict):
        raise ConfigError("config file must contain a JSON object")
    for key in doc:
        if key not in TOP_LEVEL:
            raise ConfigError(f"unknown config key {key}")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        head, _, tail = dotted.partition(".")
        if tail:
            doc.setdefault(head, {})[tail] = value
        else:
            doc[head] = value

    seed = _check_type("seed", doc.get("seed", 0), int, False)
    if seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    jobs = _check_type("jobs", doc.get("jobs", 1), int, False)
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")

    synth_doc = dict(doc.get("synth", {}))
    count = _check_type("synth.count", synth_doc.pop("count", 200), int, False)
    if count < 1:
        raise ConfigError("synth.count must be >= 1")
    train_doc = dict(doc.get("train", {}))
    if "seed" in train_doc:
        raise ConfigError("unknown config key train.seed (use the top-level seed)")
    train_doc["seed"] = seed

    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError("paths must be an object")
    for key in paths:
        if key not in PATH_KEYS:
            raise ConfigError(f"unknown config key paths.{key}")
    resolved = {}
    for key in PATH_KEYS:
        value = _check_type(f"paths.{key}", paths.get(key), str, True)
        resolved[key] = Path(value) if value is not None else None
        if check_paths and key != "out" and value is not None and not resolved[key].exists():
            raise ConfigError(f"paths.{key} does not exist: {value}")

    return RunConfig(
        model=_section("model", ModelConfig, doc.get("model", {})),
        train=_section("train", HyperParams, train_doc),
        augment=_section("augment", AugmentParams, doc.get("augment", {})),
        synth=_section("synth", SynthParams, synth_doc),
        synth_count=count,
        seed=seed,
        jobs=jobs,
        manifest=resolved["manifest"],
        checkpoint=resolved["checkpoint"],
        out=resolved["out"] or Path("out"),
    )


def load_config(path=None, overrides=None, check_paths=True):
    """Read a JSON config file (or none) and apply overrides."""
    doc = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if text.strip():
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, overrides, check_paths)
