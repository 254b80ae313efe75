"""Dataset discovery, stratified splitting and image loading.

The corpus is a directory with one sub-directory per class, e.g. the Kaggle
SARS-CoV-2 CT-scan layout::

    root/COVID/*.png
    root/non-COVID/*.png

Records are sorted by path before any seeded shuffling so that a split
depends only on ``(seed, fractions, file list)``.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ConfigError,
    EmptyDatasetError,
    ImageLoadError,
    ManifestParseError,
    StratificationError,
)

log = logging.getLogger(__name__)

IMAGE_SIZE = 224
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MANIFEST_FORMAT = "hybridct-manifest"
MANIFEST_VERSION = 1


class Label(str, enum.Enum):
    COVID = "COVID"
    NONCOVID = "NONCOVID"

    @property
    def target(self) -> int:
        """Binary target; COVID is the positive class."""
        return 1 if self is Label.COVID else 0


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    label: Label
    record_id: str
    split: Split | None = None


@dataclass
class DatasetManifest:
    records: list[ImageRecord]
    root: Path | None = None
    seed: int | None = None
    fractions: tuple[float, float, float] | None = None
    skipped: list[str] = field(default_factory=list)

    def counts(self) -> dict[str, dict[str, int]]:
        """Counts per label and split (``"ALL"`` for unsplit records)."""
        out: dict[str, dict[str, int]] = {}
        for r in self.records:
            split = r.split.value if r.split is not None else "ALL"
            out.setdefault(r.label.value, {}).setdefault(split, 0)
            out[r.label.value][split] += 1
        return {k: dict(sorted(v.items())) for k, v in sorted(out.items())}

    def label_counts(self) -> dict[Label, int]:
        return dict(Counter(r.label for r in self.records))

    def subset(self, split: Split) -> list[ImageRecord]:
        return [r for r in self.records if r.split is split]

    @property
    def is_split(self) -> bool:
        return bool(self.records) and all(r.split is not None for r in self.records)


@dataclass(frozen=True)
class ImageTensor:
    data: np.ndarray  # (224, 224, 3) float32 in [0, 1]
    source: str


def default_label_map(dirname: str) -> Label:
    return Label.COVID if dirname == "COVID" else Label.NONCOVID


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError):
        return False


def scan_dataset(root, label_map=default_label_map) -> DatasetManifest:
    """Discover images under ``root`` and build an unsplit manifest.

    ``label_map`` maps a class directory name to a :class:`Label`; the
    default maps ``"COVID"`` to COVID and anything else to NONCOVID. Files
    that fail to decode are listed in ``manifest.skipped`` with a warning.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if len(class_dirs) != 2:
        raise ConfigError(
            f"expected exactly two class directories under {root}, found "
            f"{[p.name for p in class_dirs]}"
        )
    labels = {d.name: label_map(d.name) for d in class_dirs}
    if len(set(labels.values())) != 2:
        raise ConfigError(f"class directories {list(labels)} do not map to two distinct labels")

    records, skipped = [], []
    for d in class_dirs:
        for path in sorted(p for p in d.rglob("*") if p.is_file()):
            rel = path.relative_to(root).as_posix()
            if not _decodable(path):
                log.warning("skipping undecodable file %s", path)
                skipped.append(rel)
                continue
            records.append(ImageRecord(path=path, label=labels[d.name], record_id=rel))
    if not records:
        raise EmptyDatasetError(f"no decodable images under {root}")
    manifest = DatasetManifest(records=records, root=root, skipped=skipped)
    log.info("scanned %s: %s", root, {k.value: v for k, v in manifest.label_counts().items()})
    return manifest


def _allocate(class_sizes: dict, total_first: int) -> dict:
    """Share ``total_first`` items across classes proportionally (largest remainder)."""
    n = sum(class_sizes.values())
    quotas = {c: size * total_first / n for c, size in class_sizes.items()}
    alloc = {c: math.floor(q + 1e-9) for c, q in quotas.items()}
    leftover = total_first - sum(alloc.values())
    # ties broken by class name so the result is order independent
    order = sorted(quotas, key=lambda c: (-(quotas[c] - alloc[c]), str(c)))
    for c in order[:leftover]:
        alloc[c] += 1
    return alloc


def _first_count(n: int, frac: float) -> int:
    return math.floor(n * frac + 1e-9)


def split_dataset(
    manifest: DatasetManifest,
    train_frac: float = 0.85,
    val_frac: float = 0.10,
    seed: int = 42,
    group_pattern: str | None = None,
) -> DatasetManifest:
    """Stratified TRAIN/VAL/TEST assignment.

    TRAIN receives ``floor(n * train_frac)`` images overall (2481 -> 2108),
    shared across classes by largest remainder; VAL is then carved out of
    the training portion with ``val_frac``. With ``group_pattern`` (a regex
    whose first group extracts a patient id from the record id) whole
    groups are assigned to one split, so the split is only approximately
    stratified.
    """
    if not 0.0 < train_frac < 1.0:
        raise ConfigError(f"train_frac must be in (0, 1), got {train_frac}")
    if not 0.0 <= val_frac < 1.0:
        raise ConfigError(f"val_frac must be in [0, 1), got {val_frac}")
    records = sorted(manifest.records, key=lambda r: r.record_id)
    if not records:
        raise EmptyDatasetError("cannot split an empty manifest")
    n_splits = 3 if val_frac > 0 else 2
    by_class: dict[Label, list[ImageRecord]] = {}
    for r in records:
        by_class.setdefault(r.label, []).append(r)
    for label, items in by_class.items():
        if len(items) < n_splits:
            raise StratificationError(
                f"class {label.value} has {len(items)} images, fewer than the {n_splits} splits requested"
            )

    rng = np.random.default_rng(seed)
    if group_pattern is None:
        assigned = _split_images(by_class, train_frac, val_frac, rng)
    else:
        assigned = _split_groups(by_class, train_frac, val_frac, rng, re.compile(group_pattern))
    out = [replace(r, split=assigned[r.record_id]) for r in records]
    return DatasetManifest(
        records=out,
        root=manifest.root,
        seed=seed,
        fractions=_effective_fractions(train_frac, val_frac),
        skipped=list(manifest.skipped),
    )


def _effective_fractions(train_frac, val_frac):
    return (train_frac * (1 - val_frac), train_frac * val_frac, 1.0 - train_frac)


def _split_images(by_class, train_frac, val_frac, rng):
    sizes = {c: len(v) for c, v in by_class.items()}
    n = sum(sizes.values())
    n_train_pool = _first_count(n, train_frac)
    pool_alloc = _allocate(sizes, n_train_pool)
    n_fit = _first_count(n_train_pool, 1.0 - val_frac) if val_frac > 0 else n_train_pool
    fit_alloc = _allocate(pool_alloc, n_fit)

    assigned = {}
    for label in sorted(by_class, key=lambda c: c.value):
        items = by_class[label]
        perm = rng.permutation(len(items))
        for rank, idx in enumerate(perm):
            if rank < fit_alloc[label]:
                split = Split.TRAIN
            elif rank < pool_alloc[label]:
                split = Split.VAL
            else:
                split = Split.TEST
            assigned[items[idx].record_id] = split
    return assigned


def _split_groups(by_class, train_frac, val_frac, rng, pattern):
    assigned = {}
    for label in sorted(by_class, key=lambda c: c.value):
        groups: dict[str, list[ImageRecord]] = {}
        for r in by_class[label]:
            m = pattern.search(r.record_id)
            if m is None:
                raise ConfigError(f"group pattern {pattern.pattern!r} does not match {r.record_id}")
            groups.setdefault(m.group(1) if m.groups() else m.group(0), []).append(r)
        keys = sorted(groups)
        if len(keys) < (3 if val_frac > 0 else 2):
            raise StratificationError(f"class {label.value} has too few patient groups to split")
        keys = [keys[i] for i in rng.permutation(len(keys))]
        n = len(by_class[label])
        pool_target = _first_count(n, train_frac)
        fit_target = _first_count(pool_target, 1.0 - val_frac) if val_frac > 0 else pool_target
        seen = 0
        for key in keys:
            members = groups[key]
            split = Split.TRAIN if seen < fit_target else Split.VAL if seen < pool_target else Split.TEST
            for r in members:
                assigned[r.record_id] = split
            seen += len(members)
    return assigned


def load_image(record: ImageRecord | str | Path, size: int = IMAGE_SIZE) -> ImageTensor:
    """Decode -> 3 channels -> bilinear resize to ``size`` -> scale to [0, 1]."""
    path = Path(record.path if isinstance(record, ImageRecord) else record)
    source = record.record_id if isinstance(record, ImageRecord) else str(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("1", "L", "I", "I;16", "F", "LA"):
                im = im.convert("L").convert("RGB")
            elif im.mode != "RGB":
                im = im.convert("RGB")
            if im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            data = np.asarray(im, dtype=np.float32) / np.float32(255.0)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageLoadError(path, exc) from exc
    return ImageTensor(data=np.ascontiguousarray(data), source=source)


# --- manifest file: JSON lines, header first, one record per line -----------

def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = manifest.root
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "root": str(root) if root is not None else None,
        "seed": manifest.seed,
        "fractions": list(manifest.fractions) if manifest.fractions is not None else None,
        "counts": manifest.counts(),
        "skipped": manifest.skipped,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for r in manifest.records:
        if root is not None and r.path.is_relative_to(root):
            stored = r.path.relative_to(root).as_posix()
        else:
            stored = str(r.path)
        lines.append(json.dumps({
            "record_id": r.record_id,
            "path": stored,
            "label": r.label.value,
            "split": r.split.value if r.split is not None else None,
        }, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].strip():
        raise ManifestParseError(f"{path} is empty", line=1)

    def parse(lineno, text):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
        if not isinstance(obj, dict):
            raise ManifestParseError("expected an object", line=lineno)
        return obj

    header = parse(1, lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise ManifestParseError(f"not a manifest (format={header.get('format')!r})", line=1)
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestParseError(f"unsupported manifest version {header.get('version')!r}", line=1)
    root = Path(header["root"]) if header.get("root") else None

    records, seen = [], set()
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        obj = parse(lineno, text)
        try:
            rid, stored, label_s, split_s = obj["record_id"], obj["path"], obj["label"], obj["split"]
        except KeyError as exc:
            raise ManifestParseError(f"missing key {exc.args[0]!r}", line=lineno) from exc
        try:
            label = Label(label_s)
        except ValueError:
            raise ManifestParseError(f"unknown label {label_s!r}", line=lineno) from None
        try:
            split = Split(split_s) if split_s is not None else None
        except ValueError:
            raise ManifestParseError(f"unknown split {split_s!r}", line=lineno) from None
        if rid in seen:
            raise ManifestParseError(f"duplicate record_id {rid!r}", line=lineno)
        seen.add(rid)
        p = Path(stored)
        if root is not None and not p.is_absolute():
            p = root / p
        records.append(ImageRecord(path=p, label=label, record_id=rid, split=split))
    fractions = header.get("fractions")
    return DatasetManifest(
        records=records,
        root=root,
        seed=header.get("seed"),
        fractions=tuple(fractions) if fractions is not None else None,
        skipped=list(header.get("skipped") or []),
    )
