"""Crack-image datasets: SDNET2018 directory loading, preprocessing, synthetic data.

SDNET2018 ships as ``D/{CD,UD}``, ``W/{CW,UW}``, ``P/{CP,UP}`` (C = cracked,
U = uncracked). The loader accepts that tree either directly under ``root``
(it is then split deterministically at the published per-category train/test
counts) or under ``root/train`` and ``root/test``.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from .errors import DatasetError

log = logging.getLogger(__name__)

STRUCTURES = ("deck", "wall", "pavement")
STRUCTURE_TITLES = {"deck": "Bridge deck", "wall": "Wall", "pavement": "Pavement"}
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}

#: structure -> (directory, cracked subfolder, uncracked subfolder)
DEFAULT_FOLDER_CODES = {
    "deck": ("D", "CD", "UD"),
    "wall": ("W", "CW", "UW"),
    "pavement": ("P", "CP", "UP"),
}

#: Published per-category (train, test) counts; keys are (structure, cracked).
SDNET_COUNTS = {
    ("deck", False): (10424, 1834),
    ("deck", True): (1171, 191),
    ("wall", False): (12853, 1434),
    ("wall", True): (3471, 380),
    ("pavement", False): (19531, 2195),
    ("pavement", True): (2369, 239),
}

TASKS = ("deck", "wall", "pavement", "all", "six_class")

#: Stable seed for the split of an unsplit SDNET tree.
SDNET_SPLIT_SEED = 2018


def category_name(structure: str, cracked: bool) -> str:
    return f"{STRUCTURE_TITLES[structure]} {'with' if cracked else 'w/o'} cracks"


def task_label_names(task: str) -> list[str]:
    if task == "six_class":
        return [f"{s}-{'cracked' if c else 'uncracked'}" for s in STRUCTURES for c in (False, True)]
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    return ["uncracked", "cracked"]


def task_structures(task: str) -> tuple[str, ...]:
    return (task,) if task in STRUCTURES else STRUCTURES


def label_for(task: str, structure: str, cracked: bool) -> int:
    if task == "six_class":
        return 2 * STRUCTURES.index(structure) + int(cracked)
    return int(cracked)


@dataclass(frozen=True)
class Preprocessing:
    target_side: int = 32
    grayscale: str = "luminosity"  # or "rgb" to concatenate the three channels
    normalization: str = "unit"  # 8-bit intensities divided by 255

    @property
    def n_visible(self) -> int:
        return self.target_side ** 2 * (3 if self.grayscale == "rgb" else 1)

    def to_dict(self) -> dict:
        return {"target_side": self.target_side, "grayscale": self.grayscale,
                "normalization": self.normalization}

    @classmethod
    def from_dict(cls, data: dict) -> "Preprocessing":
        return cls(**data)


@dataclass(frozen=True)
class LabeledSample:
    pixels: np.ndarray
    label: int
    structure: str
    cracked: bool
    source: str


@dataclass
class LabeledDataset:
    """Column-oriented sample store; ``X`` has one preprocessed image per row."""

    X: np.ndarray
    labels: np.ndarray
    structures: list[str]
    cracked: np.ndarray
    sources: list[str]
    label_names: list[str]
    descriptor: Preprocessing = field(default_factory=Preprocessing)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.cracked = np.asarray(self.cracked, dtype=bool)
        n = self.X.shape[0]
        if not (len(self.labels) == len(self.structures) == len(self.cracked) == len(self.sources) == n):
            raise ValueError("dataset columns have different lengths")
        if n and (not np.all(np.isfinite(self.X)) or self.X.min() < 0 or self.X.max() > 1):
            raise ValueError("pixels must be finite and lie in [0, 1]")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.label_names)):
            raise ValueError("label out of range for label_names")

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.X[i], int(self.labels[i]), self.structures[i],
                             bool(self.cracked[i]), self.sources[i])

    def categories(self) -> list[tuple[str, bool]]:
        return list(zip(self.structures, self.cracked.tolist()))

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(self.X[index], self.labels[index],
                              [self.structures[i] for i in index], self.cracked[index],
                              [self.sources[i] for i in index], list(self.label_names), self.descriptor)

    def with_labels(self, labels) -> "LabeledDataset":
        return replace(self, labels=np.asarray(labels, dtype=np.int64).copy())


@dataclass
class DatasetManifest:
    train_counts: dict = field(default_factory=dict)
    test_counts: dict = field(default_factory=dict)
    preprocessing: dict = field(default_factory=dict)
    skipped: int = 0
    skipped_files: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def train_total(self) -> int:
        return sum(self.train_counts.values())

    @property
    def test_total(self) -> int:
        return sum(self.test_counts.values())

    def to_dict(self) -> dict:
        return {"train_counts": self.train_counts, "test_counts": self.test_counts,
                "train_total": self.train_total, "test_total": self.test_total,
                "preprocessing": self.preprocessing, "skipped": self.skipped,
                "skipped_files": self.skipped_files, "warnings": self.warnings}


# --- preprocessing -----------------------------------------------------------

def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Integer overlaps between input and output cells on a common grid of n_in * n_out units.

    Each row sums to ``n_in``, so dividing by ``n_in`` averages. Keeping the
    weights integral makes sums of 8-bit values exact in float64.
    """
    edges = np.arange(n_in + 1) * n_out
    out_edges = np.arange(n_out + 1) * n_in
    lo = np.maximum(out_edges[:-1, None], edges[None, :-1])
    hi = np.minimum(out_edges[1:, None], edges[None, 1:])
    return np.clip(hi - lo, 0, None).astype(np.float64)


def area_resize(image: np.ndarray, side: int) -> np.ndarray:
    """Resample a 2-D array to ``side`` x ``side`` by exact area averaging."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError("degenerate image with zero width or height")
    h, w = image.shape
    return _area_matrix(h, side) @ image @ _area_matrix(w, side).T / (h * w)


#: Luminosity weights as integers per mille, so the sum stays exact.
LUMINOSITY = np.array([299.0, 587.0, 114.0])


def preprocess(image, target_side: int = 32, grayscale: str = "luminosity") -> np.ndarray:
    """Decoded raster (PIL image or HxW[xC] array of 8- or 16-bit values) -> vector in [0, 1].

    Intensities are mixed and area-averaged on the raw integer scale and
    divided once at the end, so constant images map to exact 0.0 / 1.0 and
    lossless round trips are bit-exact.
    """
    if target_side < 8:
        raise ValueError("target_side must be >= 8")
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim < 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("degenerate image with zero width or height")
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    arr = arr.astype(np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    arr = arr[:, :, :3]
    if grayscale == "rgb":
        channels = [area_resize(arr[:, :, k], target_side).ravel() for k in range(3)]
        out = np.concatenate(channels) / scale
    else:
        out = area_resize(arr @ LUMINOSITY, target_side).ravel() / (1000.0 * scale)
    return np.clip(out, 0.0, 1.0)


def load_image(path, descriptor: Preprocessing) -> np.ndarray:
    """Decode and preprocess one file. Raises DatasetError when undecodable."""
    try:
        with Image.open(path) as img:
            img.load()
            return preprocess(img, descriptor.target_side, descriptor.grayscale)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc


# --- SDNET2018 ---------------------------------------------------------------

def _image_files(folder: Path) -> list[Path]:
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _split_counts(n: int, key) -> int:
    train, test = SDNET_COUNTS[key]
    return int(round(n * test / (train + test)))


def load_sdnet(root, subset: str = "all", descriptor: Optional[Preprocessing] = None,
               folder_codes: Optional[dict] = None,
               ) -> tuple[LabeledDataset, LabeledDataset, DatasetManifest]:
    """Load an SDNET2018-style tree and return ``(train, test, manifest)``.

    ``subset`` is a task name: a single structure, ``"all"`` (binary over
    every structure) or ``"six_class"``. Undecodable files are skipped and
    counted. When the loaded counts differ from the published ones a warning
    is logged and recorded in the manifest.
    """
    descriptor = descriptor or Preprocessing()
    codes = {**DEFAULT_FOLDER_CODES, **(folder_codes or {})}
    label_names = task_label_names(subset)
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root not found: {root}")

    presplit = (root / "train").is_dir() and (root / "test").is_dir()
    manifest = DatasetManifest(preprocessing=descriptor.to_dict())
    parts = {"train": [], "test": []}
    for structure in task_structures(subset):
        top, cracked_dir, uncracked_dir = codes[structure]
        for cracked, sub in ((True, cracked_dir), (False, uncracked_dir)):
            key = (structure, cracked)
            if presplit:
                assigned = {split: _image_files(root / split / top / sub) for split in parts}
            else:
                files = _image_files(root / top / sub)
                order = np.random.default_rng([SDNET_SPLIT_SEED, STRUCTURES.index(structure),
                                               int(cracked)]).permutation(len(files))
                n_test = _split_counts(len(files), key)
                assigned = {"test": [files[i] for i in sorted(order[:n_test])],
                            "train": [files[i] for i in sorted(order[n_test:])]}
            for split, files in assigned.items():
                for path in files:
                    parts[split].append((path, structure, cracked))

    if not parts["train"] and not parts["test"]:
        raise DatasetError(f"zero images found under {root}")

    datasets = {}
    for split, entries in parts.items():
        rows, kept = [], []
        for path, structure, cracked in entries:
            try:
                rows.append(load_image(path, descriptor))
            except DatasetError as exc:
                log.warning("skipping %s", exc)
                manifest.skipped += 1
                manifest.skipped_files.append(str(path))
                continue
            kept.append((path, structure, cracked))
        counts = {category_name(*key): 0 for key in SDNET_COUNTS if key[0] in task_structures(subset)}
        for _, structure, cracked in kept:
            counts[category_name(structure, cracked)] += 1
        if split == "train":
            manifest.train_counts = counts
        else:
            manifest.test_counts = counts
        X = np.array(rows) if rows else np.zeros((0, descriptor.n_visible))
        datasets[split] = LabeledDataset(
            X, [label_for(subset, s, c) for _, s, c in kept], [s for _, s, _ in kept],
            [c for _, _, c in kept], [str(p) for p, _, _ in kept], label_names, descriptor)

    if len(datasets["train"]) + len(datasets["test"]) == 0:
        raise DatasetError(f"zero images found under {root} (all files undecodable)")
    for message in check_table_counts(manifest):
        log.warning(message)
        manifest.warnings.append(message)
    return datasets["train"], datasets["test"], manifest


def check_table_counts(manifest: DatasetManifest) -> list[str]:
    """Differences between manifest counts and the published per-category counts."""
    problems = []
    for key, (train, test) in SDNET_COUNTS.items():
        name = category_name(*key)
        if name not in manifest.train_counts:
            continue
        got = (manifest.train_counts[name], manifest.test_counts.get(name, 0))
        if got != (train, test):
            problems.append(f"{name}: found {got[0]}/{got[1]} train/test images, expected {train}/{test}")
    return problems


# --- synthetic data ----------------------------------------------------------

def _texture(rng: np.random.Generator, side: int) -> np.ndarray:
    blotches = gaussian_filter(rng.normal(0.0, 1.0, (side, side)), sigma=side / 8, mode="wrap")
    blotches = (blotches - blotches.mean()) / (blotches.std() + 1e-12)
    return 0.62 + 0.03 * blotches + rng.normal(0.0, 0.02, (side, side))


def _crack_mask(rng: np.random.Generator, side: int) -> np.ndarray:
    """Anti-aliased mask of a dark random polyline, drawn at 4x and area-reduced."""
    scale = 4
    canvas = Image.new("L", (side * scale, side * scale), 0)
    n_points = int(rng.integers(3, 7))
    center = rng.uniform(0.3, 0.7, 2) * side
    angle = rng.uniform(0, np.pi)
    along = np.array([np.cos(angle), np.sin(angle)])
    across = np.array([-along[1], along[0]])
    t = np.linspace(-0.6, 0.6, n_points) * side
    jitter = rng.normal(0.0, 0.08 * side, n_points)
    points = [center + ti * along + ji * across for ti, ji in zip(t, jitter)]
    width = int(rng.integers(1, 4))
    ImageDraw.Draw(canvas).line([tuple(p * scale) for p in points], fill=255,
                                width=width * scale, joint="curve")
    mask = np.asarray(canvas, dtype=np.float64) / 255.0
    return area_resize(mask, side)


def render_synthetic(rng: np.random.Generator, side: int, cracked: bool) -> np.ndarray:
    image = _texture(rng, side)
    if cracked:
        image = image * (1.0 - 0.75 * _crack_mask(rng, side))
    return np.clip(image, 0.0, 1.0)


def generate_synthetic(n: int, crack_fraction: float = 0.5, side: int = 32, seed: int = 0,
                       structures: Sequence[str] = ("deck",), task: Optional[str] = None,
                       ) -> LabeledDataset:
    """Textured concrete-like patches, a fraction of them crossed by a dark crack.

    Exactly ``round(n * crack_fraction)`` samples are cracked. Structures are
    assigned round-robin. Everything is a pure function of ``seed``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if side < 16:
        raise ValueError("side must be >= 16")
    if not 0.0 <= crack_fraction <= 1.0:
        raise ValueError("crack_fraction must lie in [0, 1]")
    for s in structures:
        if s not in STRUCTURES:
            raise ValueError(f"unknown structure {s!r}")
    if task is None:
        task = structures[0] if len(structures) == 1 else "all"
    rng = np.random.default_rng(seed)
    n_cracked = int(round(n * crack_fraction))
    cracked = np.zeros(n, dtype=bool)
    cracked[rng.permutation(n)[:n_cracked]] = True
    structure_of = [structures[i % len(structures)] for i in range(n)]
    image_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
    X = np.stack([render_synthetic(image_rngs[i], side, bool(cracked[i])).ravel() for i in range(n)])
    labels = [label_for(task, structure_of[i], bool(cracked[i])) for i in range(n)]
    return LabeledDataset(X, labels, structure_of, cracked,
                          [f"synthetic:{seed}:{i}" for i in range(n)], task_label_names(task),
                          Preprocessing(target_side=side))


def write_sdnet_tree(data: LabeledDataset, root, split: Optional[str] = None,
                     folder_codes: Optional[dict] = None) -> list[Path]:
    """Write grayscale samples as PNG files in the SDNET folder layout."""
    codes = {**DEFAULT_FOLDER_CODES, **(folder_codes or {})}
    root = Path(root) / split if split else Path(root)
    side = data.descriptor.target_side
    paths = []
    for i in range(len(data)):
        top, cracked_dir, uncracked_dir = codes[data.structures[i]]
        folder = root / top / (cracked_dir if data.cracked[i] else uncracked_dir)
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / f"{sanitize_source(data.sources[i])}.png"
        save_pixels_png(data.X[i], side, path)
        paths.append(path)
    return paths


def sanitize_source(source: str) -> str:
    return Path(source).stem if os.sep in source or "/" in source else source.replace(":", "_")


def save_pixels_png(pixels: np.ndarray, side: int, path) -> None:
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.size == 3 * side * side:
        arr = arr.reshape(3, side, side).transpose(1, 2, 0)
    else:
        arr = arr.reshape(side, side)
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


# --- splitting, relabels, cache ---------------------------------------------

def split(data: LabeledDataset, test_fraction: float, seed: int = 0
          ) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split by category (structure, cracked); deterministic in ``seed``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    groups: dict = {}
    for i, key in enumerate(data.categories()):
        groups.setdefault(key, []).append(i)
    train_idx, test_idx = [], []
    for key in sorted(groups):
        idx = np.array(groups[key])
        if idx.size < 2:
            raise ValueError(f"category {category_name(*key)} has fewer than 2 samples; cannot stratify")
        idx = idx[rng.permutation(idx.size)]
        n_test = min(max(int(round(idx.size * test_fraction)), 1), idx.size - 1)
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return data.subset(sorted(train_idx)), data.subset(sorted(test_idx))


def read_relabels(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"source", "label"} <= set(reader.fieldnames):
            raise DatasetError(f"relabel file {path} needs 'source' and 'label' columns")
        return {row["source"]: row["label"].strip() for row in reader}


def apply_relabels(data: LabeledDataset, relabels: dict[str, str]) -> tuple[LabeledDataset, int]:
    """Override labels by source; labels may be given by name or integer id."""
    labels = data.labels.copy()
    changed = 0
    index = {s: i for i, s in enumerate(data.sources)}
    for source, label in relabels.items():
        if source not in index:
            continue
        if label in data.label_names:
            value = data.label_names.index(label)
        else:
            try:
                value = int(label)
            except ValueError:
                raise DatasetError(f"unknown label {label!r} for {source}") from None
            if not 0 <= value < len(data.label_names):
                raise DatasetError(f"label {value} out of range for {source}")
        if labels[index[source]] != value:
            changed += 1
        labels[index[source]] = value
    return data.with_labels(labels), changed


CACHE_VERSION = 1


def save_cache(data: LabeledDataset, path) -> None:
    header = {"version": CACHE_VERSION, "descriptor": data.descriptor.to_dict(),
              "label_names": data.label_names, "structures": data.structures,
              "sources": data.sources}
    tmp = Path(f"{path}.tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), X=data.X.astype(np.float64),
                 labels=data.labels, cracked=data.cracked)
    os.replace(tmp, path)


def load_cache(path, descriptor: Preprocessing) -> Optional[LabeledDataset]:
    """Cached dataset, or None when absent, stale, or from a different preprocessing."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as npz:
        header = json.loads(str(npz["header"]))
        if header.get("version") != CACHE_VERSION or header["descriptor"] != descriptor.to_dict():
            return None
        return LabeledDataset(npz["X"], npz["labels"], header["structures"], npz["cracked"],
                              header["sources"], header["label_names"], descriptor)


def concatenate(parts: Iterable[LabeledDataset]) -> LabeledDataset:
    parts = list(parts)
    first = parts[0]
    return LabeledDataset(np.concatenate([p.X for p in parts]), np.concatenate([p.labels for p in parts]),
                          sum((p.structures for p in parts), []), np.concatenate([p.cracked for p in parts]),
                          sum((p.sources for p in parts), []), list(first.label_names), first.descriptor)
