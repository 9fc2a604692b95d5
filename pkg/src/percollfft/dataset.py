"""Class labels, CSV manifests and stratified k-fold plans."""

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, SplitError
from .rng import Xoshiro256

CLASSES = ("healthy", "sickle", "spherocytosis", "thalassemia")
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}
THALASSEMIA_SUBTYPES = ("MiT", "IT", "MT", "alpha")
MANIFEST_VERSION = 1
MANIFEST_HEADER = ["id", "path", "class", "subtype"]

# Clinical cohort class counts; the images themselves are private.
COHORT_COUNTS = {"sickle": 50, "thalassemia": 35, "spherocytosis": 11, "healthy": 47}


def class_index(name):
    try:
        return CLASS_INDEX[name]
    except KeyError:
        raise DataError(f"unknown class {name!r}; expected one of {', '.join(CLASSES)}") from None


@dataclass(frozen=True)
class Record:
    id: str
    path: Path
    label: int
    subtype: str = ""

    @property
    def class_name(self):
        return CLASSES[self.label]


@dataclass
class Manifest:
    records: list
    version: int = MANIFEST_VERSION

    def __len__(self):
        return len(self.records)

    def labels(self):
        return [r.label for r in self.records]

    def class_counts(self):
        counts = Counter(r.class_name for r in self.records)
        return {name: counts.get(name, 0) for name in CLASSES}

    def subset(self, indices):
        return Manifest([self.records[i] for i in indices], self.version)


def load_manifest(path, check_files=True):
    """Read an ``id,path,class,subtype`` CSV; relative paths resolve against its folder.

    All problems are collected and raised together as one :class:`DataError`.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise DataError(f"manifest {path} is empty")
    if [h.strip() for h in rows[0]] != MANIFEST_HEADER:
        raise DataError(f"manifest header must be {','.join(MANIFEST_HEADER)}, got {','.join(rows[0])}")
    problems, records, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            problems.append(f"line {lineno}: expected 4 fields, got {len(row)}")
            continue
        rid, rpath, cls, subtype = (v.strip() for v in row)
        if rid in seen:
            problems.append(f"line {lineno}: duplicate id {rid!r}")
        seen.add(rid)
        if cls not in CLASS_INDEX:
            problems.append(f"line {lineno}: unknown class {cls!r}")
            continue
        if subtype and (cls != "thalassemia" or subtype not in THALASSEMIA_SUBTYPES):
            problems.append(f"line {lineno}: invalid subtype {subtype!r} for class {cls}")
        full = (path.parent / rpath) if not Path(rpath).is_absolute() else Path(rpath)
        if check_files and not full.is_file():
            problems.append(f"line {lineno}: missing file {rpath}")
        records.append(Record(rid, full, CLASS_INDEX[cls], subtype))
    if not records and not problems:
        raise DataError(f"manifest {path} has no records")
    if problems:
        raise DataError(f"manifest {path}: " + "; ".join(problems))
    return Manifest(records)


def write_manifest(path, manifest):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            p = r.path
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([r.id, p.as_posix(), r.class_name, r.subtype])


@dataclass
class FoldPlan:
    k: int
    assignments: list  # record index -> fold index
    seed: int = 0
    record_ids: list = field(default_factory=list)

    def fold_indices(self, fold):
        return [i for i, f in enumerate(self.assignments) if f == fold]

    def train_indices(self, fold):
        return [i for i, f in enumerate(self.assignments) if f != fold]

    def to_json(self):
        return {"k": self.k, "seed": self.seed,
                "assignments": dict(zip(self.record_ids, self.assignments))}


def stratified_kfold(labels, k, seed=0, ids=None):
    """Shuffle each class with a seeded stream and deal its members round-robin.

    The dealing position carries over between classes (in canonical class
    order), so fold sizes stay balanced as well as per-class counts.
    ``labels`` may be a :class:`Manifest` or a list of class indices.
    """
    if isinstance(labels, Manifest):
        ids = [r.id for r in labels.records]
        labels = labels.labels()
    if k < 2:
        raise SplitError(f"k must be >= 2, got {k}")
    labels = list(labels)
    rng = Xoshiro256(seed)
    assignments = [-1] * len(labels)
    cursor = 0
    for cls in sorted(set(labels)):
        members = [i for i, y in enumerate(labels) if y == cls]
        if len(members) < k:
            name = CLASSES[cls] if 0 <= cls < len(CLASSES) else str(cls)
            raise SplitError(f"class {name} has {len(members)} members, fewer than k={k}")
        rng.shuffle(members)
        for i in members:
            assignments[i] = cursor % k
            cursor += 1
    return FoldPlan(k, assignments, seed, list(ids) if ids is not None else [])


def cohort_labels():
    """Label list with the clinical cohort's class counts, canonical order."""
    out = []
    for i, name in enumerate(CLASSES):
        out += [i] * COHORT_COUNTS[name]
    return out
