"""BUSI-style dataset discovery, mask merging and seeded splits.

Expected layout::

    root/
      benign/     benign (1).png, benign (1)_mask.png, benign (1)_mask_1.png, ...
      malignant/  ...
      normal/     ...

Class directories are matched case-insensitively. Splits shuffle with
numpy's PCG64 generator, so a seed reproduces the same split on any
machine running the same numpy stream.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import ClassTooSmall, DecodeError, DimensionMismatch, EmptyDataset, MissingRoot
from .imgproc import MaskImage, load_mask

log = logging.getLogger(__name__)

_MASK_RE = re.compile(r"^(?P<stem>.+)_mask(?:_(?P<k>\d+))?$")


class ClassLabel(enum.IntEnum):
    NORMAL = 0
    BENIGN = 1
    MALIGNANT = 2

    @property
    def dirname(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown class label {text!r}") from None


CLASS_NAMES = tuple(c.dirname for c in ClassLabel)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    class_label: ClassLabel
    image_path: Path
    mask_paths: tuple = ()


@dataclass
class DatasetIndex:
    root: Path
    samples: list
    counts_per_class: dict
    warnings: list = field(default_factory=list)

    def by_class(self) -> dict:
        out = {c: [] for c in ClassLabel}
        for s in self.samples:
            out[s.class_label].append(s)
        return out

    def to_json(self) -> dict:
        return {
            "root": str(self.root),
            "counts_per_class": {c.dirname: n for c, n in self.counts_per_class.items()},
            "samples": [
                {
                    "id": s.id,
                    "class": s.class_label.dirname,
                    "image": str(s.image_path),
                    "masks": [str(p) for p in s.mask_paths],
                }
                for s in self.samples
            ],
            "warnings": self.warnings,
        }


@dataclass(frozen=True)
class Split:
    seed: int
    train_ids: list
    validation_ids: list


def natural_key(text: str):
    """Sort key that orders ``x (2)`` before ``x (10)``."""
    return [int(t) if t.isdigit() else t.lower() for t in re.split(r"(\d+)", text)]


def scan_dataset(root) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise MissingRoot(f"dataset root not found: {root}")
    class_dirs = []
    for d in sorted(root.iterdir()):
        if d.is_dir() and d.name.lower() in CLASS_NAMES:
            class_dirs.append((ClassLabel.parse(d.name), d))
    if not class_dirs:
        raise EmptyDataset(f"no normal/benign/malignant directories under {root}")

    samples, warnings = [], []
    for label, d in sorted(class_dirs, key=lambda t: (t[0], t[1].name)):
        images, masks = {}, {}
        for f in sorted(d.iterdir()):
            if not f.is_file():
                continue
            if f.suffix.lower() != ".png":
                warnings.append({"path": str(f), "reason": "not a PNG file"})
                continue
            m = _MASK_RE.match(f.stem)
            if m:
                masks.setdefault(m.group("stem"), []).append(f)
            elif "mask" in f.stem.lower():
                warnings.append({"path": str(f), "reason": "mask-like name outside <id>_mask[_k].png"})
            else:
                if f.stem in images:
                    warnings.append({"path": str(f), "reason": f"duplicate id {f.stem!r}"})
                    continue
                images[f.stem] = f
        for stem, files in masks.items():
            if stem not in images:
                for f in files:
                    warnings.append({"path": str(f), "reason": "mask without a matching image"})
        for stem in sorted(images, key=natural_key):
            mp = tuple(sorted(masks.get(stem, []), key=lambda p: p.name))
            samples.append(SampleRecord(stem, label, images[stem], mp))
    for w in warnings:
        log.warning("AmbiguousFile %s: %s", w["path"], w["reason"])

    counts = {c: 0 for c in ClassLabel}
    for s in samples:
        counts[s.class_label] += 1
    return DatasetIndex(root, samples, counts, warnings)


def image_size(path) -> tuple:
    """``(width, height)`` from the PNG header."""
    try:
        with Image.open(path) as im:
            return im.size
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def merge_masks(mask_paths: Iterable, dims: Optional[tuple] = None, threshold: int = 128) -> MaskImage:
    """Pixelwise OR of several mask files; ``dims`` is ``(width, height)``."""
    paths = list(mask_paths)
    if not paths:
        if dims is None:
            raise ValueError("dims are required when there are no masks")
        return MaskImage.zeros(*dims)
    merged = None
    for p in paths:
        m = load_mask(p, threshold)
        size = (m.width, m.height)
        if dims is not None and size != tuple(dims):
            raise DimensionMismatch(f"{p}: mask is {size}, expected {tuple(dims)}")
        if merged is None:
            merged = m.pixels.copy()
        elif merged.shape != m.pixels.shape:
            raise DimensionMismatch(f"{p}: mask is {size}, other masks are {merged.shape[::-1]}")
        else:
            merged |= m.pixels
    return MaskImage(merged, source=Path(paths[0]))


def sample_mask(record: SampleRecord, threshold: int = 128) -> MaskImage:
    return merge_masks(record.mask_paths, image_size(record.image_path), threshold)


def train_count(n: int, fraction: float) -> int:
    """``round(fraction * n)`` with halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


def split_labelled(ids: Iterable, labels: Iterable, seed: int, train_fraction: float = 0.8) -> Split:
    """Stratified shuffle split of ``ids`` grouped by ``labels``."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    ids, labels = list(ids), list(labels)
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique to split")
    groups = {}
    for i, lab in zip(ids, labels):
        groups.setdefault(lab, []).append(i)
    rng = np.random.Generator(np.random.PCG64(seed))
    train, val = [], []
    for lab in sorted(groups):
        members = sorted(groups[lab], key=natural_key)
        n_train = train_count(len(members), train_fraction)
        if n_train == 0 or n_train == len(members):
            raise ClassTooSmall(
                f"class {lab!r} with {len(members)} samples leaves an empty partition at fraction {train_fraction}"
            )
        order = rng.permutation(len(members))
        train += [members[j] for j in order[:n_train]]
        val += [members[j] for j in order[n_train:]]
    return Split(seed, train, val)


def stratified_split(index: DatasetIndex, seed: int, train_fraction: float = 0.8) -> Split:
    return split_labelled(
        [s.id for s in index.samples], [int(s.class_label) for s in index.samples], seed, train_fraction
    )
