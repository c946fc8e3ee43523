"""Subject collections of paired (image, landmarks) files and batch sampling.

On-disk layout::

    root/<collection_id>/<frame>.ppm
    root/<collection_id>/<frame>.lmk
    root/<collection_id>/<frame>.skin.pgm   (optional skin probability)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .landmarks import read_landmarks
from .pnm import read_image


class DatasetError(ValueError):
    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)

    def report(self) -> str:
        return "\n".join([str(self)] + [f"  {p}" for p in self.problems]) + "\n"


@dataclass(frozen=True)
class Item:
    image: Path
    landmarks: Path

    @property
    def name(self) -> str:
        return self.image.stem

    @property
    def skin(self) -> Path:
        return self.image.with_name(self.image.stem + ".skin.pgm")

    def load(self):
        """Return (image, landmarks, skin-or-None)."""
        img = read_image(self.image)
        lmk = read_landmarks(self.landmarks)
        skin = read_image(self.skin) if self.skin.exists() else None
        return img, lmk, skin


@dataclass
class Collection:
    id: str
    items: list[Item] = field(default_factory=list)

    def __len__(self):
        return len(self.items)


@dataclass
class Dataset:
    collections: list[Collection]

    def __post_init__(self):
        ids = [c.id for c in self.collections]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate collection ids")

    def __len__(self):
        return len(self.collections)

    def get(self, cid: str) -> Collection:
        for c in self.collections:
            if c.id == cid:
                return c
        raise KeyError(cid)


def scan_collection(path) -> tuple[Collection, list[str]]:
    path = Path(path)
    images = {p.stem: p for p in path.glob("*.ppm")}
    marks = {p.stem: p for p in path.glob("*.lmk")}
    problems = [f"orphan image (no .lmk): {images[s]}" for s in sorted(images.keys() - marks.keys())]
    problems += [f"orphan landmarks (no .ppm): {marks[s]}" for s in sorted(marks.keys() - images.keys())]
    items = [Item(images[s], marks[s]) for s in sorted(images.keys() & marks.keys())]
    return Collection(path.name, items), problems


def scan_dataset(root) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    collections = []
    problems = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        coll, probs = scan_collection(sub)
        problems += probs
        if not coll.items:
            problems.append(f"empty collection: {sub}")
        collections.append(coll)
    if problems:
        raise DatasetError(f"dataset {root} failed validation", problems)
    if not collections:
        raise DatasetError(f"dataset {root} is empty")
    return Dataset(collections)


def sample_batch(dataset: Dataset, rng_seed, n_collections: int, n_per_collection: int):
    """Pick collections first, then items within each collection.

    Items are drawn without replacement; a collection smaller than the
    request wraps around to a fresh permutation. Returns a list of
    (collection id, item indices).
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    k = len(dataset.collections)
    if k == 0:
        raise DatasetError("cannot sample from an empty dataset")
    if not 1 <= n_collections <= k:
        raise ValueError(f"n_collections must be in [1, {k}]")
    if n_per_collection < 1:
        raise ValueError("n_per_collection must be >= 1")
    batch = []
    for ci in rng.choice(k, size=n_collections, replace=False):
        coll = dataset.collections[int(ci)]
        m = len(coll.items)
        picks = []
        while len(picks) < n_per_collection:
            picks.extend(rng.permutation(m).tolist())
        batch.append((coll.id, picks[:n_per_collection]))
    return batch
